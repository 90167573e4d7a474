"""Integration and sampling over boxes, box faces and unions of those.

Regions are axis-aligned boxes in R^d, possibly with one frozen coordinate (a
face). A domain part is a tuple of regions; the interior of a problem is one
box, its boundary a tuple of faces (points when d=1, each with measure 1, so
uniform measure on {0, 1} gives weight 1/2 per atom).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import TYPE_CHECKING, Any

import numpy as np
from numpy.polynomial import legendre
from scipy import stats

from ..const import DEFAULT_PANEL_CAP, DEFAULT_QUAD_ATOL, DEFAULT_QUAD_ORDER, DEFAULT_QUAD_RTOL
from .const import SampleKind, Target
from .error import ConfigurationError, InputError, NumericError
from .utils import fit_loglog_slope, write_csv

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence
    from pathlib import Path

_LOGGER = logging.getLogger(__name__)

type Integrand = Callable[[np.ndarray], np.ndarray]


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator; (seed, stream) pairs give disjoint reproducible streams."""
    key = np.array([int(seed) % 2**64, int(stream) % 2**64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# ====== 区域 ====== #
@dataclass(frozen=True)
class Region:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    normal: tuple[float, ...] | None = None  # outward normal when the region is a face
    label: str = ""

    def __post_init__(self) -> None:
        if len(self.lower) != len(self.upper):
            raise InputError("region bounds have different dimensions")
        if any(b < a for a, b in zip(self.lower, self.upper, strict=True)):
            raise InputError(f"empty region {self.lower}..{self.upper}")

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def free_axes(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.dim) if self.upper[i] > self.lower[i])

    @property
    def measure(self) -> float:
        return float(np.prod([self.upper[i] - self.lower[i] for i in self.free_axes]))

    def contains(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        lo = np.asarray(self.lower) - tol
        hi = np.asarray(self.upper) + tol
        return np.all((points >= lo) & (points <= hi), axis=1)

    def from_unit(self, u: np.ndarray) -> np.ndarray:
        """Map points of the unit cube over the free axes into the region."""
        m = u.shape[0]
        out = np.tile(np.asarray(self.lower, dtype=float), (m, 1))
        for col, axis in enumerate(self.free_axes):
            out[:, axis] = self.lower[axis] + (self.upper[axis] - self.lower[axis]) * u[:, col]
        return out

    def faces(self) -> tuple[Region, ...]:
        out = []
        for axis in range(self.dim):
            for side, bound in ((-1.0, self.lower[axis]), (1.0, self.upper[axis])):
                lo = list(self.lower)
                hi = list(self.upper)
                lo[axis] = hi[axis] = bound
                normal = tuple(side if i == axis else 0.0 for i in range(self.dim))
                label = f"x{axis}={'lower' if side < 0 else 'upper'}"
                out.append(Region(tuple(lo), tuple(hi), normal, label))
        return tuple(out)


def box(lower: Sequence[float], upper: Sequence[float]) -> Region:
    return Region(tuple(float(v) for v in lower), tuple(float(v) for v in upper), label="interior")


def part_measure(part: Sequence[Region]) -> float:
    return float(sum(r.measure for r in part))


def part_contains(part: Sequence[Region], points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    mask = np.zeros(points.shape[0], dtype=bool)
    for region in part:
        mask |= region.contains(points, tol)
    return mask


# ====== 密度 ====== #
@dataclass(frozen=True)
class Density:
    """Sampling density on a domain part: uniform, or a product of truncated scipy laws on one box."""

    kind: str = "uniform"
    laws: tuple[tuple[str, tuple[float, ...]], ...] = ()  # (scipy.stats name, shape/loc/scale args)

    def _frozen(self, region: Region) -> list[tuple[Any, float, float]]:
        if len(self.laws) != region.dim:
            raise ConfigurationError(f"product density needs {region.dim} axis laws, got {len(self.laws)}")
        frozen = []
        for axis, (name, args) in enumerate(self.laws):
            law = getattr(stats, name, None)
            if law is None:
                raise ConfigurationError(f"unknown scipy.stats law {name!r}")
            dist = law(*args)
            lo = float(dist.cdf(region.lower[axis]))
            mass = float(dist.cdf(region.upper[axis])) - lo
            if not np.isfinite(mass) or mass <= 0.0:
                raise ConfigurationError(f"density on axis {axis} is not normalizable on the region")
            frozen.append((dist, lo, mass))
        return frozen

    def _single_box(self, part: Sequence[Region]) -> Region:
        if len(part) != 1 or part[0].normal is not None:
            raise ConfigurationError("product densities are supported on a single interior box only")
        return part[0]

    def pdf(self, part: Sequence[Region], points: np.ndarray) -> np.ndarray:
        if self.kind == "uniform":
            return np.full(points.shape[0], 1.0 / part_measure(part))
        region = self._single_box(part)
        out = np.ones(points.shape[0])
        for axis, (dist, _lo, mass) in enumerate(self._frozen(region)):
            out *= dist.pdf(points[:, axis]) / mass
        return out

    def sample(self, part: Sequence[Region], m: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "uniform":
            measures = np.array([r.measure for r in part])
            cumulative = np.cumsum(measures) / measures.sum()
            dims = max(len(r.free_axes) for r in part)
            u = rng.random((m, dims + 1))
            which = np.minimum(np.searchsorted(cumulative, u[:, 0], side="right"), len(part) - 1)
            points = np.empty((m, part[0].dim))
            for k, region in enumerate(part):
                sel = which == k
                points[sel] = region.from_unit(u[sel, 1 : 1 + len(region.free_axes)])
            return points
        region = self._single_box(part)
        u = rng.random((m, region.dim))
        points = np.empty((m, region.dim))
        for axis, (dist, lo, mass) in enumerate(self._frozen(region)):
            points[:, axis] = dist.ppf(lo + u[:, axis] * mass)
        return points


UNIFORM = Density()


# ====== 样本集 ====== #
@dataclass(frozen=True, eq=False)
class SampleSet:
    points: np.ndarray
    weights: np.ndarray
    kind: SampleKind
    target: Target = Target.INTERIOR
    seed: int | None = None
    rho: np.ndarray | None = None  # density at the nodes for deterministic rules
    extra: np.ndarray | None = field(default=None, compare=False)  # per-node factor such as |b·n|

    def __post_init__(self) -> None:
        if self.points.shape[0] != self.weights.shape[0]:
            raise InputError("points and weights differ in length")
        if np.any(self.weights <= 0.0):
            raise InputError("sample weights must be positive")

    @property
    def size(self) -> int:
        return int(self.points.shape[0])

    @property
    def effective_weights(self) -> np.ndarray:
        w = self.weights if self.rho is None else self.weights * self.rho
        return w if self.extra is None else w * self.extra

    def with_extra(self, factor: np.ndarray) -> SampleSet:
        return replace(self, extra=np.asarray(factor, dtype=float))


def sample_iid(
    density: Density,
    part: Sequence[Region],
    m: int,
    seed: int,
    target: Target = Target.INTERIOR,
    stream: int = 0,
) -> SampleSet:
    if m < 1:
        raise InputError(f"sample count must be at least 1, got {m}")
    points = density.sample(part, m, make_rng(seed, stream))
    return SampleSet(points, np.full(m, 1.0 / m), SampleKind.IID_MC, target, seed)


def grid_samples(part: Sequence[Region], m: int, target: Target = Target.INTERIOR) -> SampleSet:
    """Uniform grid x_i = a + i·h, i = 1..n per free axis (n**k ≈ m), weights 1/count."""
    blocks = []
    for region in part:
        k = len(region.free_axes)
        if k == 0:
            blocks.append(np.asarray([region.lower], dtype=float))
            continue
        n = max(1, round(m ** (1.0 / k)))
        ticks = np.arange(1, n + 1) / n
        mesh = np.stack(np.meshgrid(*([ticks] * k), indexing="ij"), axis=-1).reshape(-1, k)
        blocks.append(region.from_unit(mesh))
    points = np.concatenate(blocks, axis=0)
    return SampleSet(points, np.full(points.shape[0], 1.0 / points.shape[0]), SampleKind.GRID, target)


# ====== Gauss–Legendre ====== #
@lru_cache(maxsize=64)
def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [-1, 1]."""
    if order < 1:
        raise InputError(f"quadrature order must be positive, got {order}")
    return legendre.leggauss(order)


def composite_nodes(a: float, b: float, order: int, panels: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = gauss_legendre(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def graded_nodes(
    a: float, b: float, order: int, *, toward: str, levels: int = 16, ratio: float = 0.15
) -> tuple[np.ndarray, np.ndarray]:
    """Composite rule with panels shrinking geometrically toward one or both ends of [a, b]."""
    if toward == "both":
        mid = 0.5 * (a + b)
        left = graded_nodes(a, mid, order, toward="left", levels=levels, ratio=ratio)
        right = graded_nodes(mid, b, order, toward="right", levels=levels, ratio=ratio)
        return np.concatenate([left[0], right[0]]), np.concatenate([left[1], right[1]])
    fractions = ratio ** np.arange(levels, -1, -1)  # ratio**levels, ..., 1
    fractions = np.concatenate([[0.0], fractions])
    if toward == "left":
        edges = a + (b - a) * fractions
    elif toward == "right":
        edges = b - (b - a) * fractions[::-1]
    else:
        raise InputError(f"unknown grading direction {toward!r}")
    x, w = gauss_legendre(order)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    return (mid[:, None] + half[:, None] * x).ravel(), (half[:, None] * w).ravel()


@dataclass(frozen=True)
class QuadratureRule:
    """Composite tensor-product Gauss–Legendre rule, per-axis order and panel count."""

    order: int | tuple[int, ...] = DEFAULT_QUAD_ORDER
    panels: int | tuple[int, ...] = 4

    def _per_axis(self, value: int | tuple[int, ...], axis: int) -> int:
        return value if isinstance(value, int) else value[axis]

    def refined(self, factor: int = 2) -> QuadratureRule:
        if isinstance(self.panels, int):
            return replace(self, panels=self.panels * factor)
        return replace(self, panels=tuple(p * factor for p in self.panels))

    def bumped(self, extra: int) -> QuadratureRule:
        if isinstance(self.order, int):
            return replace(self, order=self.order + extra)
        return replace(self, order=tuple(o + extra for o in self.order))

    def max_panels(self) -> int:
        return self.panels if isinstance(self.panels, int) else max(self.panels)

    def nodes(self, region: Region) -> tuple[np.ndarray, np.ndarray]:
        axes = region.free_axes
        if not axes:
            return np.asarray([region.lower], dtype=float), np.ones(1)
        per_axis = [
            composite_nodes(
                region.lower[a], region.upper[a], self._per_axis(self.order, a), self._per_axis(self.panels, a)
            )
            for a in axes
        ]
        grids = np.meshgrid(*[n for n, _ in per_axis], indexing="ij")
        wgrids = np.meshgrid(*[w for _, w in per_axis], indexing="ij")
        points = np.tile(np.asarray(region.lower, dtype=float), (grids[0].size, 1))
        for col, axis in enumerate(axes):
            points[:, axis] = grids[col].ravel()
        weights = np.prod(np.stack([g.ravel() for g in wgrids]), axis=0)
        return points, weights

    def part_nodes(self, part: Sequence[Region]) -> tuple[np.ndarray, np.ndarray]:
        blocks = [self.nodes(r) for r in part]
        return np.concatenate([b[0] for b in blocks]), np.concatenate([b[1] for b in blocks])


def gauss_samples(
    rule: QuadratureRule,
    part: Sequence[Region],
    density: Density = UNIFORM,
    target: Target = Target.INTERIOR,
) -> SampleSet:
    points, weights = rule.part_nodes(part)
    return SampleSet(points, weights, SampleKind.GAUSS_LEGENDRE, target, rho=density.pdf(part, points))


# ====== 范数 ====== #
@dataclass(frozen=True)
class QuadratureResult:
    value: float
    converged: bool
    panels: int
    change: float

    def certificate(self) -> dict[str, Any]:
        return {"converged": self.converged, "panels": self.panels, "relative_change": self.change}


def _finite(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise NumericError(f"non-finite integrand at point {int(bad[0])}", index=int(bad[0]))
    return values


def integrate(
    rule: QuadratureRule,
    part: Sequence[Region],
    integrand: Integrand,
    density: Density | None = None,
) -> float:
    """Σ w·ρ·integrand over the part; plain Lebesgue measure when density is None."""
    points, weights = rule.part_nodes(part)
    if density is not None:
        weights = weights * density.pdf(part, points)
    return float(np.sum(weights * _finite(integrand(points))))


def continuous_integral(
    rule: QuadratureRule,
    part: Sequence[Region],
    integrand: Integrand,
    density: Density | None = None,
    rtol: float = DEFAULT_QUAD_RTOL,
    panel_cap: int = DEFAULT_PANEL_CAP,
) -> QuadratureResult:
    """Integral with panel doubling until the relative change drops below ``rtol``."""
    if all(not r.free_axes for r in part):
        return QuadratureResult(integrate(rule, part, integrand, density), True, 1, 0.0)

    dims = max(len(r.free_axes) for r in part)
    cap = panel_cap if dims <= 1 else max(8, panel_cap // 16)
    current = rule
    value = integrate(current, part, integrand, density)
    while True:
        finer = current.refined()
        fine_value = integrate(finer, part, integrand, density)
        diff = abs(fine_value - value)
        change = diff / abs(fine_value) if fine_value != 0.0 else diff
        current, value = finer, fine_value
        if diff <= rtol * abs(fine_value) + DEFAULT_QUAD_ATOL:
            return QuadratureResult(value, True, current.max_panels(), change)
        if current.max_panels() >= cap:
            _LOGGER.warning(
                "Quadrature did not converge: relative change %.3e at %d panels", change, current.max_panels()
            )
            return QuadratureResult(value, False, current.max_panels(), change)


def continuous_norm(
    rule: QuadratureRule,
    part: Sequence[Region],
    integrand: Integrand,
    q: float,
    density: Density | None = UNIFORM,
    weight: Integrand | None = None,
    rtol: float = DEFAULT_QUAD_RTOL,
) -> QuadratureResult:
    """(∫|integrand|^q ρ w)^{1/q} with auto-refinement; the result carries its certificate."""
    if q < 1:
        raise InputError(f"norm exponent must be >= 1, got {q}")

    def powered(points: np.ndarray) -> np.ndarray:
        out = np.abs(_finite(integrand(points))) ** q
        return out if weight is None else out * weight(points)

    result = continuous_integral(rule, part, powered, density, rtol=rtol)
    return replace(result, value=float(max(result.value, 0.0) ** (1.0 / q)))


def discrete_norm(samples: SampleSet, residual: Integrand | np.ndarray, q: float) -> float:
    """(Σ w_i |r(x_i)|^q)^{1/q}."""
    if q < 1:
        raise InputError(f"norm exponent must be >= 1, got {q}")
    values = residual if isinstance(residual, np.ndarray) else residual(samples.points)
    values = _finite(values)
    return float(np.sum(samples.effective_weights * np.abs(values) ** q) ** (1.0 / q))


# ====== Monte-Carlo 探针 ====== #
@dataclass(frozen=True)
class McRow:
    m: int
    mean_abs_error: float
    stddev: float
    stderr: float


def mc_convergence_probe(
    integrand: Integrand,
    density: Density,
    part: Sequence[Region],
    m_list: Sequence[int],
    trials: int,
    seed: int,
    rule: QuadratureRule | None = None,
) -> tuple[list[McRow], float]:
    """|sample mean − ∫ integrand ρ| statistics per M, plus the fitted log-log slope."""
    reference = continuous_integral(rule or QuadratureRule(), part, integrand, density).value
    rows = []
    for i, m in enumerate(m_list):
        errors = np.empty(trials)
        for t in range(trials):
            samples = sample_iid(density, part, m, seed, stream=(i << 32) + t)
            errors[t] = abs(float(np.sum(samples.weights * integrand(samples.points))) - reference)
        std = float(np.std(errors, ddof=1)) if trials > 1 else 0.0
        rows.append(McRow(int(m), float(np.mean(errors)), std, std / np.sqrt(trials)))
        _LOGGER.debug("MC probe M=%d mean error %.3e", m, rows[-1].mean_abs_error)

    positive = [(r.m, r.mean_abs_error) for r in rows if r.mean_abs_error > 0.0]
    slope = fit_loglog_slope(*zip(*positive, strict=True)) if len(positive) >= 2 else float("nan")
    return rows, slope


def export_samples_csv(samples: SampleSet, path: Path) -> None:
    d = samples.points.shape[1]
    header = [f"x{i}" for i in range(d)] + ["weight"]
    rows = (list(p) + [w] for p, w in zip(samples.points, samples.effective_weights, strict=True))
    write_csv(path, header, rows)
