"""Linear problems A u = f in Ω, B u = g on Γ over axis-aligned boxes."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np

from .const import PROBE_POINTS
from .core import autodiff as ad
from .core.const import Norm, OperatorA, OperatorB
from .core.error import ConfigurationError, InputError
from .core.jets import AnalyticFunction, Jet2, as_points, constant_field
from .core.quadrature import (
    UNIFORM,
    Density,
    QuadratureRule,
    Region,
    box,
    continuous_integral,
    make_rng,
    part_contains,
)
from .fractional import (
    FractionalSpec,
    apply_frac_lap,
    coefficient_gradient,
    coefficient_values,
    gagliardo_seminorm,
)

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from .core.autodiff import Number
    from .core.jets import Evaluable

_LOGGER = logging.getLogger(__name__)

_SIGN_TOL = 1e-12


# ====== 系数 ====== #
@dataclass(frozen=True)
class EllipticCoeffs:
    """−Σ a_ij ∂_i∂_j + Σ b_i ∂_i + c; ``a=None`` is the identity matrix."""

    a: tuple[tuple[AnalyticFunction, ...], ...] | None = None
    b: tuple[AnalyticFunction, ...] | None = None
    c: AnalyticFunction | None = None

    def certify(self, domain: Region, seed: int = 0) -> dict[str, float]:
        if self.a is None:
            return {"lambda0": 1.0}
        points = domain.from_unit(make_rng(seed, 101).random((PROBE_POINTS, len(domain.free_axes))))
        d = domain.dim
        mats = np.empty((points.shape[0], d, d))
        for i in range(d):
            for j in range(d):
                mats[:, i, j] = _field(self.a[i][j], points)
        if not np.allclose(mats, np.swapaxes(mats, 1, 2), atol=1e-12):
            raise InputError("diffusion matrix a(x) is not symmetric")
        lam = float(np.min(np.linalg.eigvalsh(mats)))
        if lam <= 0.0:
            raise InputError(f"operator is not uniformly elliptic: min eigenvalue {lam:.3e}")
        return {"lambda0": lam}


@dataclass(frozen=True)
class AdvectionCoeffs:
    """b·∇u + c u with an optional Lipschitz weight η for the well-posedness check."""

    b: tuple[AnalyticFunction, ...]
    c: AnalyticFunction
    eta: AnalyticFunction | None = None
    omega_filling: bool = False

    def certify(self, domain: Region, p: float, seed: int = 0) -> dict[str, float]:
        if self.omega_filling:
            raise ConfigurationError(
                "the Ω-filling advection route needs auxiliary functions z± that cannot be constructed; "
                "use the positivity route or supply eta"
            )
        points = domain.from_unit(make_rng(seed, 102).random((PROBE_POINTS, len(domain.free_axes))))
        margin = _field(self.c, points) - divergence(self.b, points) / p
        key = "mu0"
        if self.eta is not None:
            eta_jet = self.eta.jet(points)
            for i, bi in enumerate(self.b):
                if not ad.is_zero(eta_jet.d1[i]):
                    margin = margin - _field(bi, points) * eta_jet.d1[i] / p
            key = "mu1"
        mu = float(np.min(margin))
        if mu <= 0.0:
            eta_term = " − b·∇η/p" if self.eta else ""
            raise InputError(f"advection positivity fails: min(c − ∇·b/p{eta_term}) = {mu:.3e}")
        return {key: mu}

    def velocity(self, points: np.ndarray) -> np.ndarray:
        return np.stack([np.broadcast_to(_field(bi, points), (points.shape[0],)) for bi in self.b], axis=1)


def divergence(b: Sequence[AnalyticFunction], points: np.ndarray) -> np.ndarray:
    out = np.zeros(points.shape[0])
    for i, bi in enumerate(b):
        d1 = bi.jet(points).d1[i]
        if not ad.is_zero(d1):
            out = out + d1
    return out


def _field(fn: AnalyticFunction | float | None, points: np.ndarray) -> np.ndarray | float:
    if fn is None:
        return 0.0
    return coefficient_values(fn, points)


class FaceSwitch:
    """Boundary datum assembled from per-face functions; the first matching face wins."""

    def __init__(self, pieces: Sequence[tuple[Region, Evaluable]], dim: int) -> None:
        self.pieces = list(pieces)
        self.dim = dim

    def value(self, points: np.ndarray) -> np.ndarray:
        pts = as_points(points, self.dim)
        out = np.zeros(pts.shape[0])
        done = np.zeros(pts.shape[0], dtype=bool)
        for region, fn in self.pieces:
            sel = region.contains(pts) & ~done
            if np.any(sel):
                out[sel] = fn.value(pts[sel])
                done |= sel
        return out

    def jet(self, points: np.ndarray) -> Jet2:
        return Jet2.constant(self.value(points), self.dim)


# ====== 问题 ====== #
@dataclass(frozen=True, eq=False)
class ProblemSpec:
    name: str
    domain: Region
    operator_a: OperatorA
    operator_b: OperatorB
    coeffs: EllipticCoeffs | AdvectionCoeffs | FractionalSpec
    f: Evaluable
    g: Evaluable
    p: float = 2.0
    rho: Density = UNIFORM
    rho_b: Density = UNIFORM
    v_norm: Norm = Norm.L2
    x_norm: Norm = Norm.H1
    exact: Evaluable | None = None
    certificates: dict[str, float] = field(default_factory=dict)
    boundary: tuple[Region, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "operator_a", OperatorA(self.operator_a))
        object.__setattr__(self, "operator_b", OperatorB(self.operator_b))
        object.__setattr__(self, "v_norm", Norm(self.v_norm))
        object.__setattr__(self, "x_norm", Norm(self.x_norm))
        if self.p < 1.0:
            raise InputError(f"norm exponent must be >= 1, got {self.p}")
        expected = {
            OperatorA.ELLIPTIC: EllipticCoeffs,
            OperatorA.ADVECTION_REACTION: AdvectionCoeffs,
            OperatorA.FRACTIONAL_ADR: FractionalSpec,
        }[self.operator_a]
        if not isinstance(self.coeffs, expected):
            raise InputError(f"{self.operator_a.value} needs {expected.__name__} coefficients")
        if isinstance(self.coeffs, EllipticCoeffs):
            self.certificates.update(self.coeffs.certify(self.domain))
        elif isinstance(self.coeffs, AdvectionCoeffs):
            self.certificates.update(self.coeffs.certify(self.domain, self.p))
        else:
            self.certificates.update(_certify_fractional(self))
        if not self.boundary:
            object.__setattr__(self, "boundary", self._boundary_part())

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def interior(self) -> tuple[Region, ...]:
        return (self.domain,)

    def _boundary_part(self) -> tuple[Region, ...]:
        if self.operator_b is OperatorB.DIRICHLET_TRACE:
            return self.domain.faces()
        if self.operator_b is OperatorB.INFLOW_TRACE:
            if not isinstance(self.coeffs, AdvectionCoeffs):
                raise InputError("inflow traces need an advection field")
            return inflow_faces(self.domain, self.coeffs)
        if not isinstance(self.coeffs, FractionalSpec) or self.dim != 1:
            raise InputError("exterior identity is available for 1-D fractional problems only")
        lo, hi = self.domain.lower[0], self.domain.upper[0]
        w = self.coeffs.exterior_width
        return (
            Region((lo - w,), (lo,), (-1.0,), "exterior lower"),
            Region((hi,), (hi + w,), (1.0,), "exterior upper"),
        )

    def describe(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "d": self.dim,
            "operator_a": self.operator_a.value,
            "operator_b": self.operator_b.value,
            "p": self.p,
            "v_norm": self.v_norm.value,
            "certificates": dict(self.certificates),
        }


def _certify_fractional(spec: ProblemSpec) -> dict[str, float]:
    frac: FractionalSpec = spec.coeffs
    if spec.dim != 1:
        raise InputError("the fractional Laplacian is implemented in one dimension only")
    lo, hi = spec.domain.lower[0], spec.domain.upper[0]
    if max(abs(lo), abs(hi)) > frac.support_radius:
        raise InputError("the domain must lie inside the support interval [−R, R]")
    points = spec.domain.from_unit(make_rng(0, 103).random((PROBE_POINTS, 1)))
    c = coefficient_values(frac.c, points)
    margin = 2.0 * np.asarray(c) - np.asarray(coefficient_gradient(frac.b, points))
    c0 = 0.5 * float(np.min(margin))
    if c0 <= 0.0:
        raise InputError(f"fractional positivity 2c − ∇·b > 0 fails: min = {2 * c0:.3e}")
    return {"c0": c0}


def inflow_faces(domain: Region, coeffs: AdvectionCoeffs, probes: int = 64) -> tuple[Region, ...]:
    """Faces with b·n < 0 throughout; a face where b·n changes sign is rejected."""
    out = []
    for face in domain.faces():
        k = len(face.free_axes)
        if k == 0:
            points = np.asarray([face.lower], dtype=float)
        else:
            ticks = (np.arange(probes) + 0.5) / probes
            grid = np.stack(np.meshgrid(*([ticks] * k), indexing="ij"), axis=-1).reshape(-1, k)
            points = face.from_unit(np.concatenate([grid, np.zeros((1, k)), np.ones((1, k))]))
        flux = coeffs.velocity(points) @ np.asarray(face.normal)
        lo, hi = float(np.min(flux)), float(np.max(flux))
        if lo < -_SIGN_TOL and hi > _SIGN_TOL:
            raise ConfigurationError(f"b·n changes sign on face {face.label}; inflow and outflow must be separated")
        if lo < -_SIGN_TOL:
            out.append(face)
    _LOGGER.debug("Inflow faces: %s", [f.label for f in out])
    return tuple(out)


def face_normals(part: Sequence[Region], points: np.ndarray) -> np.ndarray:
    normals = np.zeros_like(points)
    done = np.zeros(points.shape[0], dtype=bool)
    for region in part:
        if region.normal is None:
            continue
        sel = region.contains(points) & ~done
        normals[sel] = region.normal
        done |= sel
    return normals


def boundary_weight(spec: ProblemSpec, points: np.ndarray) -> np.ndarray | None:
    """|b·n| at inflow nodes; None when the boundary norm is unweighted."""
    if spec.operator_b is not OperatorB.INFLOW_TRACE:
        return None
    flux = np.sum(spec.coeffs.velocity(points) * face_normals(spec.boundary, points), axis=1)
    return np.abs(flux)


# ====== 算子 ====== #
def operator_values(spec: ProblemSpec, u: Evaluable, points: np.ndarray) -> Number:
    """A[u] at a batch of interior points without membership checks; taped when ``u`` is."""
    coeffs = spec.coeffs
    if isinstance(coeffs, FractionalSpec):
        out = apply_frac_lap(coeffs, u, points)
        jet = u.jet(points)
        b = coefficient_values(coeffs.b, points)
        c = coefficient_values(coeffs.c, points)
        out = out + jet.value * c
        if not ad.is_zero(jet.d1[0]) and np.any(np.asarray(b) != 0.0):
            out = out + jet.d1[0] * b
        return out

    jet = u.jet(points)
    d = jet.dim
    out: Number = 0.0
    if isinstance(coeffs, EllipticCoeffs):
        if coeffs.a is None:
            out = _acc(out, jet.laplacian(), -1.0)
        else:
            for i in range(d):
                for j in range(i, d):
                    weight = _field(coeffs.a[i][j], points)
                    if i != j:
                        weight = weight + _field(coeffs.a[j][i], points)
                    out = _acc(out, jet.hess(i, j), -weight)
    if coeffs.b is not None:
        for i, bi in enumerate(coeffs.b):
            out = _acc(out, jet.d1[i], _field(bi, points))
    if coeffs.c is not None:
        out = _acc(out, jet.value, _field(coeffs.c, points))
    if isinstance(out, ad.Var):
        return out
    return np.broadcast_to(np.asarray(out, dtype=float), (points.shape[0],)).copy()


def _acc(total: Number, term: Number, weight: Any) -> Number:
    if ad.is_zero(term) or (np.ndim(weight) == 0 and float(weight) == 0.0):
        return total
    piece = term * weight
    return piece if ad.is_zero(total) else total + piece


def interior_residual(spec: ProblemSpec, u: Evaluable, points: np.ndarray) -> Number:
    """f − A[u]."""
    return spec.f.value(points) - operator_values(spec, u, points)


def boundary_residual(spec: ProblemSpec, u: Evaluable, points: np.ndarray) -> Number:
    """g − B[u]; every boundary operator here is a trace."""
    return spec.g.value(points) - u.value(points)


def _checked(spec: ProblemSpec, x: Any, part: Sequence[Region], what: str) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 0 or (arr.ndim == 1 and spec.dim > 1)
    points = as_points(arr, spec.dim)
    inside = part_contains(part, points)
    if not np.all(inside):
        bad = points[int(np.flatnonzero(~inside)[0])]
        raise InputError(f"point {bad.tolist()} is not in {what}")
    return points, single


def apply_A(spec: ProblemSpec, u: Evaluable, x: Any) -> Any:
    points, single = _checked(spec, x, spec.interior, "the domain")
    out = operator_values(spec, u, points)
    if single and not isinstance(out, ad.Var):
        return float(np.asarray(out).reshape(-1)[0])
    return out


def apply_B(spec: ProblemSpec, u: Evaluable, x: Any) -> Any:
    points, single = _checked(spec, x, spec.boundary, f"Γ ({spec.operator_b.value})")
    out = u.value(points)
    if single and not isinstance(out, ad.Var):
        return float(np.asarray(out).reshape(-1)[0])
    return out


# ====== 时间相关问题的改写 ====== #
def recast_time_dependent(
    domain: Region,
    horizon: float,
    b: Sequence[AnalyticFunction],
    c: AnalyticFunction,
    u0: Evaluable,
    g_b: Evaluable,
    *,
    f: Evaluable | None = None,
    p: float = 2.0,
    exact: Evaluable | None = None,
    name: str = "spacetime",
    v_norm: Norm = Norm.GRAPH_LP,
) -> ProblemSpec:
    """Space-time problem on Q = Ω × (0, T) with velocity (b, 1).

    ``b``, ``c``, ``f``, ``g_b`` and ``exact`` take (x, t) coordinates; ``u0`` takes x.
    """
    if horizon <= 0.0:
        raise InputError(f"time horizon must be positive, got {horizon}")
    d = domain.dim
    if len(b) != d:
        raise InputError(f"velocity has {len(b)} components for a {d}-dimensional domain")
    q = box([*domain.lower, 0.0], [*domain.upper, float(horizon)])
    velocity = (*b, constant_field(1.0, d + 1))
    coeffs = AdvectionCoeffs(velocity, c)
    faces = inflow_faces(q, coeffs)
    initial = _InitialDatum(u0, d)
    pieces = [(face, initial if face.label == f"x{d}=lower" else g_b) for face in faces]
    # the bottom face goes first so corners take the initial datum
    pieces.sort(key=lambda piece: piece[0].label != f"x{d}=lower")
    return ProblemSpec(
        name,
        q,
        OperatorA.ADVECTION_REACTION,
        OperatorB.INFLOW_TRACE,
        coeffs,
        f if f is not None else constant_field(0.0, d + 1),
        FaceSwitch(pieces, d + 1),
        p=p,
        v_norm=v_norm,
        exact=exact,
        boundary=faces,
    )


class _InitialDatum:
    def __init__(self, u0: Evaluable, d: int) -> None:
        self.u0 = u0
        self.dim = d + 1

    def value(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.u0.value(points[:, :-1]), dtype=float)


# ====== 范数 ====== #
class Difference:
    """u − v as an evaluable."""

    def __init__(self, u: Evaluable, v: Evaluable | None) -> None:
        self.u = u
        self.v = v
        self.dim = u.dim

    def jet(self, points: np.ndarray) -> Jet2:
        ju = self.u.jet(points)
        return ju if self.v is None else ju - self.v.jet(points)

    def value(self, points: np.ndarray) -> np.ndarray:
        vu = np.asarray(self.u.value(points), dtype=float)
        return vu if self.v is None else vu - np.asarray(self.v.value(points), dtype=float)


def _squares(jet: Jet2, order: int, shape: int) -> np.ndarray:
    out = np.broadcast_to(np.asarray(jet.value, dtype=float) ** 2, (shape,)).copy()
    if order >= 1:
        for comp in jet.d1:
            out += np.asarray(comp, dtype=float) ** 2
    if order >= 2:
        for i in range(jet.dim):
            for j in range(i, jet.dim):
                weight = 1.0 if i == j else 2.0
                out += weight * np.asarray(jet.hess(i, j), dtype=float) ** 2
    return out


def norm_of(spec: ProblemSpec, w: Evaluable, norm: Norm, rule: QuadratureRule | None = None) -> float:
    """‖w‖ in the requested norm over Ω (Lebesgue measure)."""
    rule = rule or QuadratureRule()
    norm = Norm(norm)
    part = spec.interior
    if norm in (Norm.L2, Norm.HHALF_SURROGATE):
        return _sqrt(continuous_integral(rule, part, lambda x: np.asarray(w.value(x), dtype=float) ** 2).value)
    if norm is Norm.H1:
        return _sqrt(continuous_integral(rule, part, lambda x: _squares(w.jet(x), 1, x.shape[0])).value)
    if norm is Norm.H2:
        return _sqrt(continuous_integral(rule, part, lambda x: _squares(w.jet(x), 2, x.shape[0])).value)
    if norm is Norm.C2:
        points = _probe_points(spec, rule)
        jet = w.jet(points)
        sup = [np.max(np.abs(np.asarray(jet.value, dtype=float)))]
        sup.append(max((np.max(np.abs(np.asarray(c, dtype=float))) for c in jet.d1), default=0.0))
        sup.append(max((np.max(np.abs(np.asarray(c, dtype=float))) for c in jet.d2), default=0.0))
        return float(sum(sup))
    if norm is Norm.GRAPH_LP:
        if not isinstance(spec.coeffs, AdvectionCoeffs):
            raise InputError("the graph norm needs an advection field")
        coeffs = spec.coeffs
        p = spec.p

        def transport(x: np.ndarray) -> np.ndarray:
            jet = w.jet(x)
            out = np.zeros(x.shape[0])
            for i, bi in enumerate(coeffs.b):
                if not ad.is_zero(jet.d1[i]):
                    out = out + _field(bi, x) * jet.d1[i]
            return np.abs(out) ** p

        base = continuous_integral(rule, part, lambda x: np.abs(np.asarray(w.value(x), dtype=float)) ** p).value
        flow = continuous_integral(rule, part, transport).value
        return _sqrt(max(base, 0.0) ** (2.0 / p) + max(flow, 0.0) ** (2.0 / p))
    if norm is Norm.HALPHA2_SURROGATE:
        if not isinstance(spec.coeffs, FractionalSpec):
            raise InputError("the H^{α/2} surrogate needs a fractional problem")
        frac = spec.coeffs
        semi = gagliardo_seminorm(lambda x: np.asarray(w.value(x), dtype=float), frac.support_radius, frac.alpha)
        whole = box([-frac.support_radius], [frac.support_radius])
        l2 = continuous_integral(rule, (whole,), lambda x: np.asarray(w.value(x), dtype=float) ** 2).value
        return _sqrt(l2 + semi * semi)
    raise InputError(f"unknown norm {norm!r}")


def _sqrt(value: float) -> float:
    return float(np.sqrt(max(value, 0.0)))


def _probe_points(spec: ProblemSpec, rule: QuadratureRule) -> np.ndarray:
    nodes, _ = rule.refined(4).nodes(spec.domain)
    return nodes


def v_norm_distance(
    spec: ProblemSpec, u: Evaluable, v: Evaluable | None, rule: QuadratureRule | None = None
) -> float:
    return norm_of(spec, Difference(u, v), spec.v_norm, rule)


# ====== 稳定性常数探测 ====== #
@dataclass(frozen=True)
class StabilityProbe:
    c1_hat: float
    c2_hat: float
    ratios_v: tuple[float, ...]
    ratios_x: tuple[float, ...]
    family: str

    def as_dict(self) -> dict[str, Any]:
        return {
            "c1_hat": self.c1_hat,
            "c2_hat": self.c2_hat,
            "family": self.family,
            "provenance": "probed: C1_hat over-estimates C1, C2_hat under-estimates C2",
        }


def operator_norms(spec: ProblemSpec, u: Evaluable, rule: QuadratureRule | None = None) -> tuple[float, float]:
    """(‖A u‖_Y, ‖B u‖_Z) with the normalized sampling densities."""
    rule = rule or QuadratureRule()
    p = spec.p
    interior = continuous_integral(
        rule,
        spec.interior,
        lambda x: np.abs(np.asarray(operator_values(spec, u, x), dtype=float)) ** p,
        spec.rho,
    ).value

    def trace(x: np.ndarray) -> np.ndarray:
        out = np.abs(np.asarray(u.value(x), dtype=float)) ** p
        weight = boundary_weight(spec, x)
        return out if weight is None else out * weight

    bnd = continuous_integral(rule, spec.boundary, trace, spec.rho_b).value if spec.boundary else 0.0
    return max(interior, 0.0) ** (1.0 / p), max(bnd, 0.0) ** (1.0 / p)


def probe_stability_constant(
    spec: ProblemSpec,
    family: Sequence[Evaluable],
    rule: QuadratureRule | None = None,
    description: str = "",
) -> StabilityProbe:
    if not family:
        raise InputError("stability probe needs a nonempty family")
    ratios_v, ratios_x = [], []
    for k, u in enumerate(family):
        ay, bz = operator_norms(spec, u, rule)
        v = norm_of(spec, u, spec.v_norm, rule)
        x = norm_of(spec, u, spec.x_norm, rule)
        if v <= 0.0 or x <= 0.0:
            raise InputError(f"family member {k} has zero norm")
        ratios_v.append((ay + bz) / v)
        ratios_x.append((ay + bz) / x)
    probe = StabilityProbe(
        min(ratios_v), max(ratios_x), tuple(ratios_v), tuple(ratios_x), description or f"{len(family)} members"
    )
    _LOGGER.info("Probed %s: C1_hat=%.6g C2_hat=%.6g (%s)", spec.name, probe.c1_hat, probe.c2_hat, probe.family)
    return probe


# ====== 构造解检查 ====== #
@dataclass(frozen=True)
class ManufacturedCheck:
    interior_max: float
    boundary_max: float
    density_mass: tuple[float, float]
    tol: float

    @property
    def ok(self) -> bool:
        return (
            self.interior_max <= self.tol
            and self.boundary_max <= self.tol
            and all(abs(m - 1.0) <= 1e-8 for m in self.density_mass)
        )


def density_masses(spec: ProblemSpec, rule: QuadratureRule | None = None) -> tuple[float, float]:
    """∫ρ over Ω and ∫ρ_b over Γ; both must be 1."""
    rule = rule or QuadratureRule()
    one: Callable[[np.ndarray], np.ndarray] = lambda x: np.ones(x.shape[0])  # noqa: E731
    inner = continuous_integral(rule, spec.interior, one, spec.rho).value
    outer = continuous_integral(rule, spec.boundary, one, spec.rho_b).value if spec.boundary else 1.0
    return inner, outer


def check_manufactured(
    spec: ProblemSpec, n_points: int = PROBE_POINTS, seed: int = 0, tol: float = 1e-10
) -> ManufacturedCheck:
    if spec.exact is None:
        raise InputError(f"problem {spec.name} has no exact solution")
    inner = spec.rho.sample(spec.interior, n_points, make_rng(seed, 1))
    if isinstance(spec.coeffs, FractionalSpec):
        r = spec.coeffs.support_radius
        inner = inner[np.abs(inner[:, 0]) < r]
    res = np.asarray(interior_residual(spec, spec.exact, inner), dtype=float)
    scale = max(1.0, float(np.max(np.abs(spec.f.value(inner)))))
    bres = 0.0
    if spec.boundary:
        outer = spec.rho_b.sample(spec.boundary, n_points, make_rng(seed, 2))
        bres = float(np.max(np.abs(boundary_residual(spec, spec.exact, outer))))
    check = ManufacturedCheck(float(np.max(np.abs(res))) / scale, bres, density_masses(spec), tol)
    _LOGGER.debug("Manufactured check for %s: %s", spec.name, check)
    return check
