"""Shared fixtures."""

from __future__ import annotations

import numpy as np
import pytest

from rm_lab.core.quadrature import QuadratureRule
from rm_lab.presets import get_preset


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def rule() -> QuadratureRule:
    return QuadratureRule(8, 8)


@pytest.fixture
def poisson1d():
    return get_preset("poisson1d_sin")


@pytest.fixture
def poisson2d():
    return get_preset("poisson2d_product")


@pytest.fixture
def advection1d():
    return get_preset("advreac1d_friedrichs")


@pytest.fixture
def spacetime():
    return get_preset("advreac_spacetime")


@pytest.fixture
def fractional():
    # coarser stencils keep the taped evaluations cheap in tests
    return get_preset("frac_adr_1d", gl_order=12, grading_levels=12)


@pytest.fixture
def config_text() -> str:
    return """
name = "smoke"

[problem]
preset = "poisson1d_sin"

[model]
widths = [4]

[loss]
form = "discrete_rm"
m_r = 16

[optim]
max_iter = 5
window = 50

[sweep]
n = [4, 8]
seeds = [0, 1, 2]
"""
