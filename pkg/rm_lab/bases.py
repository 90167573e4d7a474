"""Subdomain partitions, local orthonormal bases and the projection P_{h,N}."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

import numpy as np
from scipy import sparse
from scipy.special import eval_legendre

from .const import BASIS_ORDER_BUMP, DEFAULT_QUAD_ORDER, GRAM_TOLERANCE
from .core import autodiff as ad
from .core.const import BasisKind
from .core.error import BasisConstructionError, InputError
from .core.quadrature import QuadratureRule, Region, box

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from .core.autodiff import Number

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class Partition:
    domain: Region
    cells: tuple[Region, ...]
    basis: tuple[BasisKind, ...]
    orders: tuple[int, ...]  # functions per axis on each cell

    def __post_init__(self) -> None:
        if not (len(self.cells) == len(self.basis) == len(self.orders)):
            raise InputError("partition cells, basis kinds and orders differ in length")
        total = sum(c.measure for c in self.cells)
        if abs(total - self.domain.measure) > 1e-12 * max(1.0, self.domain.measure):
            raise InputError(f"cells cover measure {total}, domain has {self.domain.measure}")
        for kind, n in zip(self.basis, self.orders, strict=True):
            if n < 1:
                raise InputError(f"basis order must be at least 1, got {n}")
            if kind is BasisKind.PWCONST and n != 1:
                raise InputError("piecewise-constant cells carry exactly one function")

    @property
    def K(self) -> int:  # noqa: N802
        return len(self.cells)

    @classmethod
    def uniform(
        cls,
        domain: Region,
        cells_per_axis: int | Sequence[int],
        basis: BasisKind | str = BasisKind.LEGENDRE,
        order: int = 1,
    ) -> Partition:
        d = domain.dim
        counts = [int(cells_per_axis)] * d if isinstance(cells_per_axis, int) else [int(c) for c in cells_per_axis]
        if len(counts) != d or any(c < 1 for c in counts):
            raise InputError(f"invalid cell counts {counts} for a {d}-dimensional domain")
        kind = BasisKind(basis)
        if kind is BasisKind.PWCONST:
            order = 1
        edges = [np.linspace(domain.lower[a], domain.upper[a], counts[a] + 1) for a in range(d)]
        cells = []
        for index in itertools.product(*(range(c) for c in counts)):
            lo = [float(edges[a][i]) for a, i in enumerate(index)]
            hi = [float(edges[a][i + 1]) for a, i in enumerate(index)]
            cells.append(box(lo, hi))
        n = len(cells)
        return cls(domain, tuple(cells), (kind,) * n, (int(order),) * n)


def legendre_1d(n: int, t: np.ndarray, width: float) -> np.ndarray:
    """√((2n+1)/h)·P_n(t), orthonormal on a cell of width h with t the mapped coordinate."""
    return math.sqrt((2 * n + 1) / width) * eval_legendre(n, t)


@dataclass(frozen=True, eq=False)
class BasisTable:
    partition: Partition
    degrees: tuple[tuple[tuple[int, ...], ...], ...]  # per cell, per function, per axis
    alphas: np.ndarray | None = None  # optional weights α_{k,i}, flattened

    @property
    def size(self) -> int:
        return sum(len(d) for d in self.degrees)

    def evaluate(self, k: int, points: np.ndarray) -> np.ndarray:
        """Matrix (functions × points) of Φ_{k,i} at points inside cell k."""
        cell = self.partition.cells[k]
        rows = []
        for degs in self.degrees[k]:
            out = np.ones(points.shape[0])
            for axis, n in zip(cell.free_axes, degs, strict=True):
                h = cell.upper[axis] - cell.lower[axis]
                t = 2.0 * (points[:, axis] - cell.lower[axis]) / h - 1.0
                out = out * legendre_1d(n, t, h)
            rows.append(out)
        return np.asarray(rows)

    def function(self, k: int, i: int) -> Callable[[np.ndarray], np.ndarray]:
        """Φ_{k,i} on the whole domain (zero outside Ω_k)."""
        cell = self.partition.cells[k]

        def phi(points: np.ndarray) -> np.ndarray:
            inside = cell.contains(points, tol=0.0)
            out = np.zeros(points.shape[0])
            if np.any(inside):
                out[inside] = self.evaluate(k, points[inside])[i]
            return out

        return phi

    def gram_deviation(self, rule: QuadratureRule | None = None) -> float:
        worst = 0.0
        for k in range(self.partition.K):
            nodes, weights = cell_rule(self, k, rule).nodes(self.partition.cells[k])
            phi = self.evaluate(k, nodes)
            gram = (phi * weights) @ phi.T
            worst = max(worst, float(np.max(np.abs(gram - np.eye(gram.shape[0])))))
        return worst


def build_basis(
    partition: Partition,
    alphas: Sequence[float] | None = None,
    alpha_bounds: tuple[float, float] | None = None,
) -> BasisTable:
    degrees = []
    for cell, n in zip(partition.cells, partition.orders, strict=True):
        k = len(cell.free_axes)
        degrees.append(tuple(itertools.product(range(n), repeat=k)))
    weights = None
    table = BasisTable(partition, tuple(degrees))
    if alphas is not None:
        weights = np.asarray(alphas, dtype=float)
        if weights.shape != (table.size,):
            raise InputError(f"expected {table.size} basis weights, got {weights.shape}")
        if alpha_bounds is not None:
            lo, hi = alpha_bounds
            sq = weights * weights
            if lo <= 0.0 or np.any(sq < lo) or np.any(sq > hi):
                raise InputError(f"basis weights must satisfy 0 < {lo} <= α² <= {hi}")
        table = BasisTable(partition, tuple(degrees), weights)
    deviation = table.gram_deviation()
    if deviation > GRAM_TOLERANCE:
        raise BasisConstructionError(f"Gram matrix deviates from identity by {deviation:.3e}")
    _LOGGER.debug("Built %d basis functions on %d cells (Gram deviation %.2e)", table.size, partition.K, deviation)
    return table


def cell_rule(table: BasisTable, k: int, rule: QuadratureRule | None = None) -> QuadratureRule:
    """Per-cell rule with the order raised above the basis degree."""
    base = DEFAULT_QUAD_ORDER if rule is None or not isinstance(rule.order, int) else rule.order
    panels = 4 if rule is None else rule.panels
    return QuadratureRule(max(base, table.partition.orders[k]) + BASIS_ORDER_BUMP, panels)


@dataclass(frozen=True, eq=False)
class Projector:
    """c = matrix @ r(nodes) for the whole table; the node set is fixed so residuals can be taped."""

    table: BasisTable
    nodes: np.ndarray
    weights: np.ndarray
    matrix: sparse.csr_matrix
    cell_of: np.ndarray  # owning cell per coefficient


def projector(table: BasisTable, rule: QuadratureRule | None = None) -> Projector:
    blocks, nodes, weights, owners = [], [], [], []
    for k, cell in enumerate(table.partition.cells):
        pts, w = cell_rule(table, k, rule).nodes(cell)
        phi = table.evaluate(k, pts)
        blocks.append(sparse.csr_matrix(phi * w))
        nodes.append(pts)
        weights.append(w)
        owners.extend([k] * phi.shape[0])
    return Projector(
        table,
        np.concatenate(nodes),
        np.concatenate(weights),
        sparse.block_diag(blocks, format="csr"),
        np.asarray(owners),
    )


def project(table: BasisTable, r: Callable[[np.ndarray], Any], rule: QuadratureRule | None = None) -> list[np.ndarray]:
    """Coefficient table c_{k,i} = (r, Φ_{k,i}) per cell."""
    proj = projector(table, rule)
    values = np.asarray(r(proj.nodes), dtype=float)
    if not np.all(np.isfinite(values)):
        raise InputError("projected function is not finite at the quadrature nodes")
    coeffs = proj.matrix @ values
    return [coeffs[proj.cell_of == k] for k in range(table.partition.K)]


def project_values(proj: Projector, values: Number) -> Number:
    return ad.matvec(proj.matrix, values)


def weighted_energy(proj: Projector, coeffs: Number) -> Number:
    """Σ α²_{k,i} c²_{k,i} (α ≡ 1 when the table carries no weights)."""
    sq = coeffs * coeffs
    if proj.table.alphas is not None:
        sq = sq * (proj.table.alphas**2)
    return ad.total(sq)


def reconstruct(table: BasisTable, coeffs: Sequence[np.ndarray]) -> Callable[[np.ndarray], np.ndarray]:
    """Σ c_{k,i}Φ_{k,i} as a function of points."""

    def fn(points: np.ndarray) -> np.ndarray:
        out = np.zeros(points.shape[0])
        for k, ck in enumerate(coeffs):
            for i, c in enumerate(ck):
                out += c * table.function(k, i)(points)
        return out

    return fn
