"""Error bounds and sampling diagnostics."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

import numpy as np

from .const import BOUND_FLAG_FACTOR
from .core.const import OperatorA, Target
from .core.error import InputError, NumericError
from .core.quadrature import (
    QuadratureRule,
    Region,
    box,
    composite_nodes,
    gauss_samples,
    grid_samples,
    make_rng,
    sample_iid,
)
from .core.utils import fit_loglog_slope
from .data import BoundEvaluation, RunReport
from .losses import loss_continuous, loss_discrete, regularization_error_constant
from .models import sample_rbf_member
from .problems import boundary_residual, boundary_weight, interior_residual

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from .core.jets import Evaluable
    from .core.quadrature import Density
    from .problems import ProblemSpec

_LOGGER = logging.getLogger(__name__)


def _loss_value(run_or_value: RunReport | float) -> float:
    if isinstance(run_or_value, RunReport):
        if run_or_value.final_loss is None:
            raise InputError(f"run {run_or_value.run_key} has no final loss")
        return run_or_value.final_loss.total
    return float(run_or_value)


def _check_tau(tau: float) -> dict[str, Any]:
    if tau < 1.0:
        _LOGGER.warning("Bound evaluated with tau=%s < 1; the estimate assumes tau >= 1", tau)
        return {"tau_below_one": True}
    return {}


# ====== 后验估计 ====== #
def aposteriori_bound(j_value: float, c1: float, p: float) -> float:
    """C₁^{-1}·2^{(p−1)/p}·J^{1/p}."""
    if c1 <= 0.0 or j_value < 0.0 or p < 1.0:
        raise InputError(f"invalid bound inputs J={j_value}, C1={c1}, p={p}")
    return 2.0 ** ((p - 1.0) / p) * j_value ** (1.0 / p) / c1


def aposteriori_bound_regularized(
    j_eps: float,
    c1: float,
    p: float,
    m: int,
    epsilon: float,
    tau: float,
    rho_masses: tuple[float, float] = (1.0, 1.0),
) -> float:
    """2^{1−1/p} C₁^{-1} (c_p J^ε + C·ε(1+τ))^{1/p}."""
    if c1 <= 0.0 or j_eps < 0.0:
        raise InputError(f"invalid bound inputs J={j_eps}, C1={c1}")
    c_p = 1.0 if p == 1.0 else 2.0
    extra = regularization_error_constant(p, m, epsilon, tau, rho_masses)
    return 2.0 ** (1.0 - 1.0 / p) * (c_p * j_eps + extra) ** (1.0 / p) / c1


def apriori_bound(c1: float, c2: float, tau: float, p: float, best_approx: float, delta: float = 0.0) -> float:
    """2^{(p−1)/p}(1+τ)^{1/p} C₁^{-1}(C₂·inf_w ‖w − u*‖_X + δ)."""
    if c1 <= 0.0:
        raise InputError(f"C1 must be positive, got {c1}")
    return 2.0 ** ((p - 1.0) / p) * (1.0 + tau) ** (1.0 / p) * (c2 * best_approx + delta) / c1


def bound_soundness(run: RunReport, c1_hat: float, p: float, tau: float, j_continuous: float) -> BoundEvaluation:
    """‖u − u*‖_V against the a-posteriori bound with a probed constant; flags instead of failing."""
    value = aposteriori_bound(j_continuous, c1_hat, p)
    error = run.errors.get("v_norm")
    flags = _check_tau(tau)
    if error is not None:
        flags["holds"] = error <= value
        flags["within_factor"] = error <= BOUND_FLAG_FACTOR * value
        if not flags["holds"]:
            _LOGGER.warning(
                "Run %s: error %.4e exceeds a-posteriori bound %.4e (C1_hat=%.4g)", run.run_key, error, value, c1_hat
            )
    return BoundEvaluation(
        "aposteriori",
        value,
        {"C1": c1_hat, "p": p, "J": j_continuous, "tau": tau},
        provenance="probed C1",
        flags=flags,
    )


# ====== 离散估计 ====== #
def q_probability(m_r: int, m_b: int, delta: float, g_r: float, g_b: float, p: float) -> tuple[float, bool]:
    """Q_{r,b} and whether it is vacuous (a factor ≤ 0)."""
    factors = []
    for m, g in ((m_r, g_r), (m_b, g_b)):
        if m is None or m <= 0:
            continue
        factors.append(1.0 - 2.0 * math.exp(-m * delta * delta / (32.0 * g ** (2.0 * p))))
    q = float(np.prod(factors)) if factors else 1.0
    vacuous = any(f <= 0.0 for f in factors)
    return q, vacuous


def calibrated_delta(m: int, g: float, p: float, confidence: float) -> float:
    """δ with 1 − 2exp(−Mδ²/32G^{2p}) = confidence."""
    if not 0.0 < confidence < 1.0:
        raise InputError(f"confidence must lie in (0, 1), got {confidence}")
    return math.sqrt(32.0 * g ** (2.0 * p) * math.log(2.0 / (1.0 - confidence)) / m)


def delta_schedule(m: int, epsilon: float) -> float:
    """δ = 2M^{−1/2+ε}, the slack used in the convergence argument."""
    if not 0.0 < epsilon < 0.5:
        raise InputError(f"epsilon must lie in (0, 1/2), got {epsilon}")
    return 2.0 * m ** (-0.5 + epsilon)


def discrete_bound_report(
    run: RunReport | float,
    c1: float,
    p: float,
    rademacher: tuple[float, float],
    delta: float,
    g_r: float,
    g_b: float,
    m: tuple[int, int],
    tau: float = 1.0,
) -> BoundEvaluation:
    """C₁^{-1}2^{(p−1)/p}[J^M + 2R̃_M + (1+τ)δ/2]^{1/p} holding with probability Q_{r,b}."""
    j_m = _loss_value(run)
    r_tilde = rademacher[0] + tau * rademacher[1]
    inner = j_m + 2.0 * r_tilde + (1.0 + tau) * delta / 2.0
    value = aposteriori_bound(inner, c1, p)
    q, vacuous = q_probability(m[0], m[1], delta, g_r, g_b, p)
    flags = {"vacuous": vacuous, "Q": q, **_check_tau(tau)}
    if vacuous:
        _LOGGER.warning("Discrete bound is vacuous at M=%s, delta=%s (Q=%.3g)", m, delta, q)
    return BoundEvaluation(
        "discrete_II",
        value,
        {
            "C1": c1,
            "p": p,
            "J_M": j_m,
            "R_r": rademacher[0],
            "R_b": rademacher[1],
            "delta": delta,
            "G_r": g_r,
            "G_b": g_b,
            "M": list(m),
        },
        provenance="rademacher estimates over a finite family",
        flags=flags,
    )


def discrete_bound_I(c1: float, c3: float, j_m: float, j_proj: float) -> float:
    """2√2 C₁^{-1}(J^M)^{1/2} + 3√2 C₁^{-1} C₃ (J₁)^{1/2} for families with a discrete-norm lower bound."""
    if c1 <= 0.0:
        raise InputError(f"C1 must be positive, got {c1}")
    root2 = math.sqrt(2.0)
    return 2.0 * root2 * math.sqrt(j_m) / c1 + 3.0 * root2 * c3 * math.sqrt(j_proj) / c1


def hp_bound_report(run: RunReport | float, c1: float, epsilon_proj: float, delta_n: float) -> BoundEvaluation:
    """√2 C₁^{-1}(J^{h,N} + δ_n + ε)^{1/2}."""
    if epsilon_proj < -1e-10:
        raise NumericError(f"negative projection deficit {epsilon_proj:.3e} violates Bessel's inequality")
    j_hp = _loss_value(run)
    eps = max(epsilon_proj, 0.0)
    value = math.sqrt(2.0) * math.sqrt(j_hp + delta_n + eps) / c1
    return BoundEvaluation(
        "hp_vrm",
        value,
        {"C1": c1, "J_hp": j_hp, "delta_n": delta_n, "projection_deficit": eps},
        provenance="measured projection deficit",
    )


# ====== Rademacher ====== #
def estimate_rademacher(
    family: Sequence[Callable[[np.ndarray], np.ndarray]],
    density: Density,
    part: Sequence[Region],
    m: int,
    n_sign_trials: int,
    n_sample_trials: int,
    seed: int,
) -> tuple[float, float]:
    """E sup_f |M^{-1} Σ ε_i f(X_i)| by Monte Carlo; the sup over the finite family is exact."""
    if not family:
        raise InputError("Rademacher estimate needs a nonempty family")
    if m < 1:
        raise InputError(f"sample count must be at least 1, got {m}")
    values = []
    for s in range(n_sample_trials):
        samples = sample_iid(density, part, m, seed, stream=2 * s)
        table = np.stack([np.asarray(fn(samples.points), dtype=float) for fn in family])
        signs = make_rng(seed, 2 * s + 1).choice([-1.0, 1.0], size=(n_sign_trials, m))
        sups = np.max(np.abs(table @ signs.T) / m, axis=0)
        values.extend(sups.tolist())
    arr = np.asarray(values)
    stderr = float(np.std(arr, ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
    return float(np.mean(arr)), stderr


@dataclass(frozen=True)
class GapRow:
    m: int
    gap_mean: float
    gap_stderr: float
    rhs: float
    delta: float
    coverage: float


def _residual_family(prob: ProblemSpec, models: Sequence[Evaluable], p: float, boundary: bool) -> list[Callable]:
    def make(u: Evaluable) -> Callable[[np.ndarray], np.ndarray]:
        if boundary:

            def outer(x: np.ndarray) -> np.ndarray:
                values = np.abs(np.asarray(boundary_residual(prob, u, x), dtype=float)) ** p
                weight = boundary_weight(prob, x)
                return values if weight is None else values * weight

            return outer
        return lambda x: np.abs(np.asarray(interior_residual(prob, u, x), dtype=float)) ** p

    return [make(u) for u in models]


def residual_cap_audit(
    prob: ProblemSpec, u: Evaluable, cap_r: float | None = None, cap_b: float | None = None, n_grid: int = 4096
) -> dict[str, Any]:
    """Dense-grid sup-norms G_r, G_b of the residuals compared with configured caps."""
    inner = grid_samples(prob.interior, n_grid).points
    if prob.operator_a is OperatorA.FRACTIONAL_ADR:
        inner = inner[np.abs(inner[:, 0]) < prob.coeffs.support_radius]
    g_r = float(np.max(np.abs(interior_residual(prob, u, inner))))
    g_b = 0.0
    if prob.boundary:
        outer = grid_samples(prob.boundary, n_grid).points
        g_b = float(np.max(np.abs(boundary_residual(prob, u, outer))))
    within = (cap_r is None or g_r <= cap_r) and (cap_b is None or g_b <= cap_b)
    if not within:
        _LOGGER.warning("Residual caps exceeded: G_r=%.4g (cap %s), G_b=%.4g (cap %s)", g_r, cap_r, g_b, cap_b)
    return {"G_r": g_r, "G_b": g_b, "cap_r": cap_r, "cap_b": cap_b, "within": within}


def loss_gap_audit(
    prob: ProblemSpec,
    models: Sequence[Evaluable],
    p: float,
    tau: float,
    m_list: Sequence[int],
    trials: int,
    seed: int,
    *,
    confidence: float = 0.95,
    n_sign_trials: int = 32,
    rule: QuadratureRule | None = None,
) -> tuple[list[GapRow], float]:
    """sup_v |J^M(v) − J(v)| over the model list against 2R_M + 2τR_M^b + δ_r/2 + τδ_b/2."""
    if not models:
        raise InputError("loss gap audit needs at least one model")
    reference = [loss_continuous(prob, u, p, tau, rule).total for u in models]
    caps = [residual_cap_audit(prob, u) for u in models]
    g_r = max(max(c["G_r"] for c in caps) ** p, 1e-300) ** (1.0 / p)
    g_b = max(max(c["G_b"] for c in caps) ** p, 1e-300) ** (1.0 / p)
    exact_boundary = all(not r.free_axes for r in prob.boundary)
    inner_family = _residual_family(prob, models, p, boundary=False)
    outer_family = _residual_family(prob, models, p, boundary=True)

    rows = []
    for i, m in enumerate(m_list):
        gaps = np.empty(trials)
        for t in range(trials):
            stream = (i << 32) + t
            interior = sample_iid(prob.rho, prob.interior, m, seed, stream=2 * stream)
            if exact_boundary:
                boundary = gauss_samples(QuadratureRule(), prob.boundary, prob.rho_b, Target.BOUNDARY)
            elif prob.boundary:
                boundary = sample_iid(prob.rho_b, prob.boundary, m, seed, stream=2 * stream + 1)
            else:
                boundary = None
            discrete = [loss_discrete(prob, u, p, tau, interior, boundary).total for u in models]
            gaps[t] = max(abs(a - b) for a, b in zip(discrete, reference, strict=True))
        r_r, _ = estimate_rademacher(inner_family, prob.rho, prob.interior, m, n_sign_trials, 4, seed + 7919 * (i + 1))
        r_b = 0.0
        delta_b = 0.0
        if prob.boundary and not exact_boundary:
            r_b, _ = estimate_rademacher(
                outer_family, prob.rho_b, prob.boundary, m, n_sign_trials, 4, seed + 104729 * (i + 1)
            )
            delta_b = calibrated_delta(m, g_b, p, confidence)
        delta_r = calibrated_delta(m, g_r, p, confidence)
        rhs = 2.0 * r_r + 2.0 * tau * r_b + delta_r / 2.0 + tau * delta_b / 2.0
        std = float(np.std(gaps, ddof=1)) if trials > 1 else 0.0
        coverage = float(np.mean(gaps <= rhs))
        rows.append(GapRow(int(m), float(np.mean(gaps)), std / math.sqrt(trials), rhs, delta_r, coverage))
        _LOGGER.debug("Loss gap M=%d: mean %.3e rhs %.3e coverage %.2f", m, rows[-1].gap_mean, rhs, rows[-1].coverage)

    positive = [(r.m, r.gap_mean) for r in rows if r.gap_mean > 0.0]
    slope = fit_loglog_slope(*zip(*positive, strict=True)) if len(positive) >= 2 else float("nan")
    return rows, slope


# ====== Bernstein ====== #
@dataclass(frozen=True)
class BernsteinRow:
    m: float
    max_ratio: float
    ratio_over_m: float
    m_r: int
    equivalence_pass: float


def _l2_on_line(model: Any, order: int = 16) -> tuple[float, float]:
    centers = model.arch.centers[:, 0]
    lo, hi = float(centers.min()) - 7.0, float(centers.max()) + 7.0
    nodes, weights = composite_nodes(lo, hi, order, max(16, int(8 * (hi - lo))))
    jet = model.jet(nodes.reshape(-1, 1))
    v = np.asarray(jet.value, dtype=float)
    dv = np.asarray(jet.d1[0], dtype=float)
    return math.sqrt(float(weights @ (v * v))), math.sqrt(float(weights @ (dv * dv)))


def trapezoid_norm_sq(fn: Callable[[np.ndarray], np.ndarray], region: Region, m: int) -> float:
    """Squared discrete norm ‖v‖²_{Y_M} from the composite trapezoid rule with M intervals."""
    x = np.linspace(region.lower[0], region.upper[0], m + 1)
    w = np.full(m + 1, (region.upper[0] - region.lower[0]) / m)
    w[0] *= 0.5
    w[-1] *= 0.5
    values = np.asarray(fn(x.reshape(-1, 1)), dtype=float)
    return float(w @ (values * values))


def bernstein_probe(
    m_list: Sequence[float],
    samples_per_m: int,
    seed: int,
    *,
    beta: float = 2.0,
    domain: Region | None = None,
) -> list[BernsteinRow]:
    """Empirical Bernstein constants of G_{n,m} and the grid size that makes Y and Y_M equivalent."""
    domain = domain or box([-1.0], [1.0])
    length = domain.upper[0] - domain.lower[0]
    fine_nodes, fine_weights = QuadratureRule(16, 64).nodes(domain)
    rows = []
    for i, m in enumerate(m_list):
        rng = make_rng(seed, i)
        members = [sample_rbf_member(m, rng) for _ in range(samples_per_m)]
        ratios = []
        for member in members:
            v, dv = _l2_on_line(member)
            ratios.append(dv / v)
        c_hat = max(ratios) / m
        m_r = max(1, math.ceil((4.0 * c_hat * m * length**beta / 3.0) ** (1.0 / beta)))
        passed = 0
        for member in members:
            values = member.value(fine_nodes)
            y_sq = float(fine_weights @ (values * values))
            ym_sq = trapezoid_norm_sq(member.value, domain, m_r)
            if 4.0 * ym_sq >= y_sq >= (4.0 / 7.0) * ym_sq:
                passed += 1
        rows.append(BernsteinRow(float(m), max(ratios), c_hat, m_r, passed / len(members)))
        _LOGGER.info(
            "Bernstein m=%s: max ratio %.4f, M_r=%d, equivalence %.2f", m, max(ratios), m_r, rows[-1].equivalence_pass
        )
    return rows
