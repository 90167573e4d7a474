"""rm-lab: residual minimization for linear PDEs with neural and closed-form trial functions.

Problems come from :mod:`rm_lab.presets`, losses from :mod:`rm_lab.losses`,
training from :mod:`rm_lab.training` and error bounds from
:mod:`rm_lab.estimators`. ``python -m rm_lab`` runs the command-line tool.
"""

from __future__ import annotations

from .const import DOMAIN, VERSION

__version__ = VERSION

__all__ = ["DOMAIN", "__version__"]
