"""Residual-minimization loss functionals.

Reference evaluations (``loss_continuous``, ``loss_discrete``, ...) return a
:class:`~rm_lab.data.LossBreakdown` from plain arrays. :class:`LossObjective`
fixes every node set up front so the same functional can be evaluated on taped
parameters during training.
"""

from __future__ import annotations

import logging
from typing import TYPE_CHECKING, Any

import numpy as np
from scipy import sparse

from .bases import BasisTable, Partition, build_basis, cell_rule, project_values, projector, weighted_energy
from .const import ABS_SMOOTH_KAPPA
from .core import autodiff as ad
from .core.const import BasisKind, LossForm, OperatorA, SampleKind, Target
from .core.error import ConfigurationError, InputError
from .core.quadrature import (
    QuadratureRule,
    SampleSet,
    continuous_integral,
    gauss_samples,
    grid_samples,
    part_contains,
    sample_iid,
)
from .data import LossBreakdown, LossSpec
from .problems import EllipticCoeffs, ProblemSpec, boundary_residual, boundary_weight, interior_residual

if TYPE_CHECKING:
    from collections.abc import Callable

    from .core.autodiff import Number
    from .core.jets import Evaluable

_LOGGER = logging.getLogger(__name__)


# ---------- 逐点幂 ---------- #
def power_abs(r: Number, p: float) -> Number:
    """|r|^p; taped residuals use (r² + κ²)^{p/2} unless p = 2."""
    if p == 2.0:
        return r * r
    if isinstance(r, ad.Var):
        return ad.power(r * r + ABS_SMOOTH_KAPPA**2, 0.5 * p)
    return np.abs(np.asarray(r, dtype=float)) ** p


def phi_regularizer(x: Any, p: float, m: int, epsilon: float) -> tuple[Any, Any]:
    """φ_{p,ε}(x) = x^{2m}(x+ε)^{p−2m} and its derivative, for x ≥ 0."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0.0):
        raise InputError("the regularizer is defined for nonnegative arguments")
    if epsilon == 0.0:
        with np.errstate(divide="ignore"):
            value = arr**p
            deriv = p * arr ** (p - 1.0) if p != 1.0 else np.ones_like(arr)
        deriv = np.where(arr == 0.0, 0.0 if p > 1.0 else 1.0, deriv)
    else:
        shifted = arr + epsilon
        value = arr ** (2 * m) * shifted ** (p - 2 * m)
        deriv = arr ** (2 * m - 1) * shifted ** (p - 2 * m - 1) * (2 * m * shifted + (p - 2 * m) * arr)
    if np.ndim(x) == 0:
        return float(value), float(deriv)
    return value, deriv


def phi_taped(r: Number, p: float, m: int, epsilon: float) -> Number:
    """φ_{p,ε}(|r|) on taped or plain residuals."""
    if not isinstance(r, ad.Var):
        return phi_regularizer(np.abs(np.asarray(r, dtype=float)), p, m, epsilon)[0]
    s = ad.sqrt(r * r + ABS_SMOOTH_KAPPA**2)
    if epsilon == 0.0:
        return ad.power(s, p)
    return ad.power(s, 2 * m) * ad.power(s + epsilon, p - 2 * m)


def small_epsilon_report(p: float, m: int, epsilon: float) -> dict[str, Any]:
    """2(2m − p)ε(p − 1)/p ≤ 1 is required by the regularization estimates."""
    lhs = 2.0 * (2 * m - p) * epsilon * (p - 1.0) / p
    ok = lhs <= 1.0
    if not ok:
        _LOGGER.warning("Small-epsilon condition violated: 2(2m−p)ε(p−1)/p = %.4g > 1", lhs)
    return {"lhs": lhs, "ok": ok, "p": p, "m": m, "epsilon": epsilon}


def regularization_error_constant(
    p: float, m: int, epsilon: float, tau: float, rho_masses: tuple[float, float] = (1.0, 1.0)
) -> float:
    """Additive term C·ε(1+τ) of J ≤ c_p J^ε + C·ε(1+τ)."""
    c_p = 1.0 if p == 1.0 else 2.0
    return c_p * (2 * m - p) * epsilon * (1.0 + tau) * (rho_masses[0] + rho_masses[1]) / p


# ====== 参考求值 ====== #
def _boundary_integrand(prob: ProblemSpec, u: Evaluable, transform: Callable[[np.ndarray], np.ndarray]) -> Callable:
    def integrand(x: np.ndarray) -> np.ndarray:
        out = transform(np.asarray(boundary_residual(prob, u, x), dtype=float))
        weight = boundary_weight(prob, x)
        return out if weight is None else out * weight

    return integrand


def _merge_certificates(*results: Any) -> dict[str, Any]:
    return {
        "converged": all(r.converged for r in results),
        "panels": max(r.panels for r in results),
        "relative_change": max(r.change for r in results),
    }


def _reference_parts(
    prob: ProblemSpec,
    u: Evaluable,
    transform: Callable[[np.ndarray], np.ndarray],
    rule: QuadratureRule | None,
    boundary_transform: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[float, float, dict[str, Any]]:
    rule = rule or QuadratureRule()
    inner = continuous_integral(
        rule, prob.interior, lambda x: transform(np.asarray(interior_residual(prob, u, x), dtype=float)), prob.rho
    )
    results = [inner]
    bnd = 0.0
    if prob.boundary:
        outer = continuous_integral(
            rule, prob.boundary, _boundary_integrand(prob, u, boundary_transform or transform), prob.rho_b
        )
        results.append(outer)
        bnd = outer.value
    return inner.value, bnd, _merge_certificates(*results)


def loss_continuous(
    prob: ProblemSpec, u: Evaluable, p: float | None = None, tau: float = 1.0, rule: QuadratureRule | None = None
) -> LossBreakdown:
    """‖f − Au‖^p_{L^p_ρ} + τ‖Bu − g‖^p_{L^p_ρ_b}."""
    p = prob.p if p is None else p
    interior, boundary, cert = _reference_parts(prob, u, lambda r: np.abs(r) ** p, rule)
    return LossBreakdown(LossForm.CONTINUOUS_RM.value, p, tau, interior, boundary, interior + tau * boundary, cert)


def _check_samples(prob: ProblemSpec, samples: SampleSet, target: Target) -> None:
    part = prob.interior if target is Target.INTERIOR else prob.boundary
    inside = part_contains(part, samples.points)
    if not np.all(inside):
        raise InputError(f"{int(np.sum(~inside))} {target.value} samples lie outside {prob.name}'s {target.value}")


def loss_discrete(
    prob: ProblemSpec,
    u: Evaluable,
    p: float | None,
    tau: float,
    interior_samples: SampleSet,
    boundary_samples: SampleSet | None,
) -> LossBreakdown:
    """‖f − Au‖^p_{Y_M} + τ‖g − Bu‖^p_{Z_M} with the samples' weights."""
    p = prob.p if p is None else p
    _check_samples(prob, interior_samples, Target.INTERIOR)
    res = np.asarray(interior_residual(prob, u, interior_samples.points), dtype=float)
    interior = float(np.sum(interior_samples.effective_weights * np.abs(res) ** p))
    boundary = 0.0
    if boundary_samples is not None:
        _check_samples(prob, boundary_samples, Target.BOUNDARY)
        bres = np.asarray(boundary_residual(prob, u, boundary_samples.points), dtype=float)
        weights = boundary_samples.effective_weights
        extra = boundary_weight(prob, boundary_samples.points)
        if extra is not None and boundary_samples.extra is None:
            weights = weights * extra
        boundary = float(np.sum(weights * np.abs(bres) ** p))
    return LossBreakdown(LossForm.DISCRETE_RM.value, p, tau, interior, boundary, interior + tau * boundary)


def residual_l2_squared(prob: ProblemSpec, u: Evaluable, rule: QuadratureRule | None = None) -> float:
    """‖f − Au‖²_{L²(Ω)} in Lebesgue measure."""
    return continuous_integral(
        rule or QuadratureRule(), prob.interior, lambda x: np.asarray(interior_residual(prob, u, x), dtype=float) ** 2
    ).value


def _as_table(prob: ProblemSpec, basis: BasisTable | Partition) -> BasisTable:
    table = basis if isinstance(basis, BasisTable) else build_basis(basis)
    if table.partition.domain != prob.domain:
        raise InputError("partition does not tile the problem domain")
    return table


def loss_hp_vrm(
    prob: ProblemSpec,
    u: Evaluable,
    tau: float,
    basis: BasisTable | Partition,
    rule: QuadratureRule | None = None,
) -> LossBreakdown:
    """Σ_k Σ_i α²(f − Au, Φ_{k,i})² + τ‖Bu − g‖²_Z."""
    table = _as_table(prob, basis)
    proj = projector(table, rule)
    res = np.asarray(interior_residual(prob, u, proj.nodes), dtype=float)
    interior = float(weighted_energy(proj, proj.matrix @ res))
    _, boundary, cert = _boundary_only(prob, u, rule)
    return LossBreakdown(LossForm.HP_VRM.value, 2.0, tau, interior, boundary, interior + tau * boundary, cert)


def _boundary_only(prob: ProblemSpec, u: Evaluable, rule: QuadratureRule | None) -> tuple[float, float, dict[str, Any]]:
    if not prob.boundary:
        return 0.0, 0.0, {"converged": True, "panels": 1, "relative_change": 0.0}
    outer = continuous_integral(
        rule or QuadratureRule(), prob.boundary, _boundary_integrand(prob, u, lambda r: r * r), prob.rho_b
    )
    return 0.0, outer.value, outer.certificate()


def projection_deficit(
    prob: ProblemSpec, u: Evaluable, basis: BasisTable | Partition, rule: QuadratureRule | None = None
) -> float:
    """‖(I − P)(f − Au)‖² = ‖f − Au‖² − Σ c²."""
    table = _as_table(prob, basis)
    proj = projector(table, rule)
    res = np.asarray(interior_residual(prob, u, proj.nodes), dtype=float)
    coeffs = proj.matrix @ res
    return residual_l2_squared(prob, u, rule) - float(np.sum(coeffs * coeffs))


def _ibp_supported(prob: ProblemSpec) -> EllipticCoeffs:
    coeffs = prob.coeffs
    if prob.operator_a is not OperatorA.ELLIPTIC or prob.dim != 1 or coeffs.a is not None:
        raise ConfigurationError(
            "integration by parts is implemented for 1-D second-order elliptic operators with unit diffusion only"
        )
    return coeffs


def _cell_averages_ibp(
    prob: ProblemSpec, u: Evaluable, table: BasisTable, rule: QuadratureRule | None
) -> tuple[Number, np.ndarray]:
    """Per-cell ∫(f − Au) written with first derivatives only: ∫f + [u′] − ∫(b u′ + c u)."""
    coeffs = _ibp_supported(prob)
    cells = table.partition.cells
    ends = np.array([[c.lower[0], c.upper[0]] for c in cells]).reshape(-1, 1)
    k = len(cells)
    diff = sparse.csr_matrix(
        (np.tile([-1.0, 1.0], k), (np.repeat(np.arange(k), 2), np.arange(2 * k))), shape=(k, 2 * k)
    )
    jet = u.jet(ends)
    out: Number = ad.matvec(diff, jet.d1[0]) if not ad.is_zero(jet.d1[0]) else np.zeros(k)

    blocks, nodes = [], []
    for idx, cell in enumerate(cells):
        pts, w = cell_rule(table, idx, rule).nodes(cell)
        blocks.append(sparse.csr_matrix(w.reshape(1, -1)))
        nodes.append(pts)
    integrate = sparse.block_diag(blocks, format="csr")
    pts = np.concatenate(nodes)
    out = out + integrate @ np.asarray(prob.f.value(pts), dtype=float)
    if coeffs.b is not None or coeffs.c is not None:
        inner = u.jet(pts)
        lower: Number = 0.0
        if coeffs.b is not None and not ad.is_zero(inner.d1[0]):
            lower = inner.d1[0] * coeffs.b[0].value(pts)
        if coeffs.c is not None:
            term = inner.value * coeffs.c.value(pts)
            lower = term if ad.is_zero(lower) else lower + term
        if not ad.is_zero(lower):
            out = out - ad.matvec(integrate, lower)
    return out, np.array([c.measure for c in cells])


def loss_pwconst_weak(
    prob: ProblemSpec,
    u: Evaluable,
    tau: float,
    partition: Partition,
    rule: QuadratureRule | None = None,
    integrate_by_parts: bool = False,
) -> LossBreakdown:
    """Σ_k |Ω_k|^{-1}(∫_{Ω_k} f − Au)² + τ‖Bu − g‖²_Z."""
    pwconst = Partition(partition.domain, partition.cells, (BasisKind.PWCONST,) * partition.K, (1,) * partition.K)
    table = _as_table(prob, pwconst)
    if integrate_by_parts:
        sums, measures = _cell_averages_ibp(prob, u, table, rule)
        sums = np.asarray(sums, dtype=float)
        interior = float(np.sum(sums * sums / measures))
    else:
        proj = projector(table, rule)
        res = np.asarray(interior_residual(prob, u, proj.nodes), dtype=float)
        coeffs = proj.matrix @ res
        interior = float(np.sum(coeffs * coeffs))
    _, boundary, cert = _boundary_only(prob, u, rule)
    return LossBreakdown(LossForm.PWCONST_WEAK.value, 2.0, tau, interior, boundary, interior + tau * boundary, cert)


def loss_regularized(
    prob: ProblemSpec,
    u: Evaluable,
    p: float | None,
    m: int,
    epsilon: float,
    tau: float,
    rule: QuadratureRule | None = None,
) -> LossBreakdown:
    """‖φ_{p,ε}(|Au − f|)‖_{L¹_ρ} + τ‖φ_{p,ε}(|Bu − g|)‖_{L¹_ρ_b}; ε = 0 is the plain loss."""
    p = prob.p if p is None else p
    if epsilon == 0.0:
        plain = loss_continuous(prob, u, p, tau, rule)
        return LossBreakdown(
            LossForm.REGULARIZED_RM.value,
            p,
            tau,
            plain.interior,
            plain.boundary,
            plain.total,
            plain.quadrature_certificate,
        )
    if epsilon < 0.0:
        raise InputError(f"epsilon must be nonnegative, got {epsilon}")
    phi = lambda r: phi_regularizer(np.abs(r), p, m, epsilon)[0]  # noqa: E731
    interior, boundary, cert = _reference_parts(prob, u, phi, rule)
    return LossBreakdown(LossForm.REGULARIZED_RM.value, p, tau, interior, boundary, interior + tau * boundary, cert)


def regularization_check(
    prob: ProblemSpec, u: Evaluable, p: float, m: int, epsilon: float, tau: float, rule: QuadratureRule | None = None
) -> dict[str, Any]:
    """J^ε ≤ J ≤ c_p J^ε + C·ε(1+τ) for one function."""
    j_eps = loss_regularized(prob, u, p, m, epsilon, tau, rule).total
    j = loss_continuous(prob, u, p, tau, rule).total
    c_p = 1.0 if p == 1.0 else 2.0
    extra = regularization_error_constant(p, m, epsilon, tau)
    return {
        "j_eps": j_eps,
        "j": j,
        "upper": c_p * j_eps + extra,
        "holds": j_eps <= j + 1e-8 * abs(j) + 1e-14 and j <= c_p * j_eps + extra + 1e-8 * abs(j) + 1e-14,
    }


def evaluate_loss(
    prob: ProblemSpec, u: Evaluable, spec: LossSpec, objective: LossObjective | None = None
) -> LossBreakdown:
    """Reference value of the configured functional (discrete forms use their own samples)."""
    p = spec.exponent(prob.p)
    rule = QuadratureRule(spec.quad_order, spec.quad_panels)
    if spec.form is LossForm.CONTINUOUS_RM:
        return loss_continuous(prob, u, p, spec.tau, rule)
    if spec.form is LossForm.DISCRETE_RM:
        objective = objective or LossObjective(prob, spec)
        return loss_discrete(prob, u, p, spec.tau, objective.interior, objective.boundary)
    if spec.form is LossForm.HP_VRM:
        objective = objective or LossObjective(prob, spec)
        return loss_hp_vrm(prob, u, spec.tau, objective.table, rule)
    if spec.form is LossForm.PWCONST_WEAK:
        partition = Partition.uniform(prob.domain, spec.cells, BasisKind.PWCONST)
        return loss_pwconst_weak(prob, u, spec.tau, partition, rule, spec.integrate_by_parts)
    return loss_regularized(prob, u, p, spec.m_for(p), spec.epsilon, spec.tau, rule)


# ====== 训练目标 ====== #
def training_samples(prob: ProblemSpec, spec: LossSpec) -> tuple[SampleSet, SampleSet | None]:
    """Interior and boundary node sets for the configured functional."""
    rule = QuadratureRule(spec.quad_order, spec.quad_panels)
    boundary: SampleSet | None = None
    if spec.form is LossForm.DISCRETE_RM:
        if spec.sample_kind is SampleKind.IID_MC:
            interior = sample_iid(prob.rho, prob.interior, spec.m_r, spec.sample_seed)
        elif spec.sample_kind is SampleKind.GRID:
            interior = grid_samples(prob.interior, spec.m_r)
        else:
            sample_rule = QuadratureRule(spec.quad_order, max(1, spec.m_r // spec.quad_order))
            interior = gauss_samples(sample_rule, prob.interior, prob.rho)
        if prob.boundary:
            if all(not r.free_axes for r in prob.boundary):
                # every boundary atom once with weight ρ_b, so the boundary part is exact
                boundary = gauss_samples(rule, prob.boundary, prob.rho_b, Target.BOUNDARY)
            elif spec.sample_kind is SampleKind.IID_MC:
                boundary = sample_iid(prob.rho_b, prob.boundary, spec.m_b, spec.sample_seed, Target.BOUNDARY, stream=1)
            elif spec.sample_kind is SampleKind.GRID:
                boundary = grid_samples(prob.boundary, spec.m_b, Target.BOUNDARY)
            else:
                boundary = gauss_samples(rule, prob.boundary, prob.rho_b, Target.BOUNDARY)
    else:
        interior = gauss_samples(rule, prob.interior, prob.rho)
        if prob.boundary:
            boundary = gauss_samples(rule, prob.boundary, prob.rho_b, Target.BOUNDARY)
    if boundary is not None:
        weight = boundary_weight(prob, boundary.points)
        if weight is not None:
            boundary = boundary.with_extra(weight)
    return interior, boundary


class LossObjective:
    """A loss functional with frozen node sets, evaluable on plain or taped realizations."""

    def __init__(self, prob: ProblemSpec, spec: LossSpec) -> None:
        self.prob = prob
        self.spec = spec
        self.p = spec.exponent(prob.p)
        self.m = spec.m_for(self.p) if spec.form is LossForm.REGULARIZED_RM else None
        self.interior, self.boundary = training_samples(prob, spec)
        rule = QuadratureRule(spec.quad_order, spec.quad_panels)
        self.table: BasisTable | None = None
        self.proj = None
        if spec.form is LossForm.HP_VRM:
            partition = Partition.uniform(prob.domain, spec.cells, spec.basis, spec.order)
            self.table = build_basis(partition, spec.alphas, spec.alpha_bounds)
            self.proj = projector(self.table, rule)
        elif spec.form is LossForm.PWCONST_WEAK:
            partition = Partition.uniform(prob.domain, spec.cells, BasisKind.PWCONST)
            self.table = build_basis(partition)
            if spec.integrate_by_parts:
                _ibp_supported(prob)
            else:
                self.proj = projector(self.table, rule)
        self.rule = rule
        _LOGGER.debug(
            "Loss %s on %s: %d interior / %d boundary nodes",
            spec.form.value,
            prob.name,
            self.interior.size,
            0 if self.boundary is None else self.boundary.size,
        )

    def _pointwise(self, r: Number) -> Number:
        if self.spec.form is LossForm.REGULARIZED_RM:
            return phi_taped(r, self.p, self.m, self.spec.epsilon)
        return power_abs(r, 2.0 if self.table is not None else self.p)

    def _boundary(self, u: Evaluable) -> Number:
        if self.boundary is None:
            return 0.0
        res = boundary_residual(self.prob, u, self.boundary.points)
        return ad.total(self._pointwise(res) * self.boundary.effective_weights)

    def evaluate(self, u: Evaluable) -> tuple[Number, Number, Number]:
        """(total, interior part, boundary part)."""
        form = self.spec.form
        if form is LossForm.PWCONST_WEAK and self.spec.integrate_by_parts:
            sums, measures = _cell_averages_ibp(self.prob, u, self.table, self.rule)
            interior = ad.total(sums * sums * (1.0 / measures))
        elif self.proj is not None:
            res = interior_residual(self.prob, u, self.proj.nodes)
            interior = weighted_energy(self.proj, project_values(self.proj, res))
        else:
            res = interior_residual(self.prob, u, self.interior.points)
            interior = ad.total(self._pointwise(res) * self.interior.effective_weights)
        boundary = self._boundary(u)
        total = interior + boundary * self.spec.tau if not ad.is_zero(boundary) else interior
        return total, interior, boundary

    def breakdown(self, u: Evaluable) -> LossBreakdown:
        total, interior, boundary = self.evaluate(u)
        p = 2.0 if self.table is not None else self.p
        return LossBreakdown(
            self.spec.form.value,
            p,
            self.spec.tau,
            float(ad.value_of(interior)),
            float(ad.value_of(boundary)),
            float(ad.value_of(total)),
        )
