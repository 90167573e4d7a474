"""Built-in problems with manufactured solutions."""

from __future__ import annotations

import logging
import math
from typing import TYPE_CHECKING, Any

from .core import jets
from .core.const import Norm, OperatorA, OperatorB
from .core.error import ConfigurationError
from .core.jets import AnalyticFunction, constant_field
from .core.quadrature import box
from .fractional import FractionalSpec, bump_frac_lap_value, frac_constant
from .problems import AdvectionCoeffs, EllipticCoeffs, ProblemSpec, recast_time_dependent

if TYPE_CHECKING:
    from collections.abc import Callable

_LOGGER = logging.getLogger(__name__)

PI = math.pi


def poisson1d_sin(p: float = 2.0) -> ProblemSpec:
    """−u″ = π² sin(πx) on (0, 1), u = 0 at both ends."""
    return ProblemSpec(
        "poisson1d_sin",
        box([0.0], [1.0]),
        OperatorA.ELLIPTIC,
        OperatorB.DIRICHLET_TRACE,
        EllipticCoeffs(),
        AnalyticFunction(lambda x: jets.sin(x[0] * PI) * (PI * PI), 1, "pi^2 sin(pi x)"),
        constant_field(0.0, 1),
        p=p,
        v_norm=Norm.HHALF_SURROGATE,
        x_norm=Norm.H2,
        exact=AnalyticFunction(lambda x: jets.sin(x[0] * PI), 1, "sin(pi x)"),
    )


def poisson2d_product(p: float = 2.0) -> ProblemSpec:
    return ProblemSpec(
        "poisson2d_product",
        box([0.0, 0.0], [1.0, 1.0]),
        OperatorA.ELLIPTIC,
        OperatorB.DIRICHLET_TRACE,
        EllipticCoeffs(),
        AnalyticFunction(lambda x: jets.sin(x[0] * PI) * jets.sin(x[1] * PI) * (2.0 * PI * PI), 2, "2pi^2 sin sin"),
        constant_field(0.0, 2),
        p=p,
        v_norm=Norm.HHALF_SURROGATE,
        x_norm=Norm.H2,
        exact=AnalyticFunction(lambda x: jets.sin(x[0] * PI) * jets.sin(x[1] * PI), 2, "sin(pi x) sin(pi y)"),
    )


def advreac1d_friedrichs(p: float = 2.0) -> ProblemSpec:
    """u′ + u = 2(1+x) + (1+x)² on (0, 1), u(0) = 1; inflow at x = 0."""
    one = constant_field(1.0, 1)
    return ProblemSpec(
        "advreac1d_friedrichs",
        box([0.0], [1.0]),
        OperatorA.ADVECTION_REACTION,
        OperatorB.INFLOW_TRACE,
        AdvectionCoeffs((one,), one),
        AnalyticFunction(lambda x: (x[0] + 1.0) * 2.0 + (x[0] + 1.0) * (x[0] + 1.0), 1, "2(1+x)+(1+x)^2"),
        constant_field(1.0, 1),
        p=p,
        v_norm=Norm.GRAPH_LP,
        x_norm=Norm.GRAPH_LP,
        exact=AnalyticFunction(lambda x: (x[0] + 1.0) * (x[0] + 1.0), 1, "(1+x)^2"),
    )


def advreac_spacetime(p: float = 2.0) -> ProblemSpec:
    """u_t + u_x + u = 0 on (0, 1) × (0, 1) with u = e^{−t} sin(π(x − t))."""

    def exact(x: list[jets.Jet2]) -> jets.Jet2:
        return jets.exp(-x[1]) * jets.sin((x[0] - x[1]) * PI)

    return recast_time_dependent(
        box([0.0], [1.0]),
        1.0,
        (constant_field(1.0, 2),),
        constant_field(1.0, 2),
        AnalyticFunction(lambda x: jets.sin(x[0] * PI), 1, "sin(pi x)"),
        AnalyticFunction(exact, 2, "lateral trace"),
        p=p,
        exact=AnalyticFunction(exact, 2, "exp(-t) sin(pi(x-t))"),
        name="advreac_spacetime",
    )


def frac_bump(alpha: float, radius: float = 1.0) -> AnalyticFunction:
    """(R² − x²)₊^{α/2}."""
    return AnalyticFunction(
        lambda x: jets.pos_pow(radius * radius - x[0] * x[0], 0.5 * alpha), 1, f"(1-x^2)_+^{alpha / 2}"
    )


def frac_adr_1d(p: float = 2.0, alpha: float = 1.5, **frac_options: Any) -> ProblemSpec:
    """(−Δ)^{α/2}u + u = f on (−1, 1), u = 0 outside, with u = (1 − x²)₊^{α/2}."""
    level = bump_frac_lap_value(alpha)
    bump = frac_bump(alpha)
    _LOGGER.debug("Fractional preset: alpha=%s c=%.12g reference value %.12g", alpha, frac_constant(1, alpha), level)
    return ProblemSpec(
        "frac_adr_1d",
        box([-1.0], [1.0]),
        OperatorA.FRACTIONAL_ADR,
        OperatorB.EXTERIOR_IDENTITY,
        FractionalSpec(alpha, b=0.0, c=1.0, support_radius=1.0, **frac_options),
        AnalyticFunction(lambda x: bump.fn(x) + level, 1, "K + u*"),
        constant_field(0.0, 1),
        p=p,
        v_norm=Norm.HALPHA2_SURROGATE,
        x_norm=Norm.HALPHA2_SURROGATE,
        exact=bump,
    )


def poisson1d_zero(p: float = 2.0) -> ProblemSpec:
    """−u″ = 0 on (0, 1) with zero boundary data; its solution is u* = 0."""
    return ProblemSpec(
        "poisson1d_zero",
        box([0.0], [1.0]),
        OperatorA.ELLIPTIC,
        OperatorB.DIRICHLET_TRACE,
        EllipticCoeffs(),
        constant_field(0.0, 1),
        constant_field(0.0, 1),
        p=p,
        v_norm=Norm.L2,
        x_norm=Norm.H2,
        exact=constant_field(0.0, 1),
    )


def counterexample_adversary(m_r: int) -> AnalyticFunction:
    """u(x) = −sin(2πM x) / (2πM)², so −u″ = sin(2πM x) vanishes on the grid x_i = i/M."""
    k = 2.0 * PI * m_r
    return AnalyticFunction(lambda x: jets.sin(x[0] * k) * (-1.0 / (k * k)), 1, f"adversary(M={m_r})")


PRESETS: dict[str, Callable[..., ProblemSpec]] = {
    "poisson1d_sin": poisson1d_sin,
    "poisson2d_product": poisson2d_product,
    "advreac1d_friedrichs": advreac1d_friedrichs,
    "advreac_spacetime": advreac_spacetime,
    "frac_adr_1d": frac_adr_1d,
    "poisson1d_zero": poisson1d_zero,
}


def get_preset(name: str, **overrides: Any) -> ProblemSpec:
    try:
        builder = PRESETS[name]
    except KeyError as exc:
        raise ConfigurationError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}") from exc
    try:
        return builder(**{k: v for k, v in overrides.items() if v is not None})
    except TypeError as exc:
        raise ConfigurationError(f"preset {name!r}: {exc}") from exc
