"""Sweep execution, result files and the preset experiment scenarios."""

from __future__ import annotations

import logging
import math
import statistics
from dataclasses import asdict, dataclass, field, replace
from datetime import UTC, datetime
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np

from .bases import Partition, build_basis
from .config import RunSpec, expand_sweep, load_config
from .const import DOMAIN, EXIT_OK, EXIT_RUN_FAILURE, TRAJECTORY_HEADER, VERSION
from .coordinator import SweepCoordinator, failed_report
from .core.const import Activation, BasisKind, LossForm, ModelKind, Norm, OperatorA, RunStatus, SampleKind, Target
from .core.error import ConfigurationError, InputError, RmLabError
from .core.quadrature import QuadratureRule, grid_samples, mc_convergence_probe
from .core.utils import fit_loglog_slope, write_csv, write_json
from .data import BoundEvaluation, LossSpec, OptimConfig
from .estimators import (
    aposteriori_bound_regularized,
    bound_soundness,
    estimate_rademacher,
    hp_bound_report,
    residual_cap_audit,
)
from .losses import loss_continuous, loss_discrete, loss_hp_vrm, projection_deficit
from .models import (
    MlpArch,
    ParamModel,
    analytic_model,
    embed_arch,
    mlp_model,
    rbf_model,
    save_checkpoint,
    unit_path_norm_family,
)
from .presets import counterexample_adversary, get_preset
from .problems import density_masses, norm_of, probe_stability_constant
from .training import train

if TYPE_CHECKING:
    from collections.abc import Sequence

    from .data import RunReport
    from .problems import ProblemSpec, StabilityProbe

_LOGGER = logging.getLogger(__name__)

SUMMARY_HEADER = (
    "run_key",
    "status",
    "error_code",
    "iterations",
    "loss",
    "residual_part",
    "boundary_part",
    "error_v",
    "error_l2",
    "j_continuous",
    "c1",
    "bound",
    "bound_holds",
    "delta_n",
)


# ====== 构建 ====== #
def build_problem(problem: dict[str, Any]) -> ProblemSpec:
    options: dict[str, Any] = {"p": problem.get("p")}
    if "alpha" in problem:
        options["alpha"] = problem["alpha"]
    renames = {
        "truncation": "truncation",
        "exterior_width": "exterior_width",
        "frac_order": "gl_order",
        "frac_levels": "grading_levels",
    }
    for key, target in renames.items():
        if key in problem:
            options[target] = problem[key]
    return get_preset(problem["preset"], **options)


def build_model(model: dict[str, Any], prob: ProblemSpec, seed: int) -> ParamModel:
    if model["kind"] == ModelKind.GAUSSIAN_RBF.value:
        centers = np.asarray(model["centers"], dtype=float).reshape(len(model["coeffs"]), -1)
        if centers.shape[1] != prob.dim:
            raise ConfigurationError(
                f"rbf centers have dimension {centers.shape[1]}, problem has {prob.dim}", path="model.centers"
            )
        return rbf_model(centers, model["m"], model["coeffs"])
    widths = list(model["widths"])
    if "depth" in model and len(widths) == 1:
        widths = widths * model["depth"]
    arch = MlpArch((prob.dim, *widths, 1), Activation(model["activation"]))
    return mlp_model(arch, seed, envelope_radius=_envelope(prob, model.get("envelope", True)))


def _envelope(prob: ProblemSpec, requested: bool = True) -> float | None:
    """Radius R of the (R² − x²)₊ factor; only fractional problems carry one."""
    if prob.operator_a is OperatorA.FRACTIONAL_ADR and requested:
        return prob.coeffs.support_radius
    return None


def build_loss_spec(loss: dict[str, Any], seed: int) -> LossSpec:
    cells = loss.get("cells", 4)
    return LossSpec(
        form=loss.get("form", LossForm.CONTINUOUS_RM.value),
        p=loss.get("p"),
        tau=loss.get("tau", 1.0),
        sample_kind=loss.get("sample_kind", SampleKind.IID_MC.value),
        m_r=loss.get("m_r", 128),
        m_b=loss.get("m_b", 2),
        sample_seed=seed,
        cells=tuple(cells) if isinstance(cells, list) else cells,
        basis=loss.get("basis", BasisKind.LEGENDRE.value),
        order=loss.get("order", 4),
        integrate_by_parts=loss.get("integrate_by_parts", False),
        alphas=tuple(loss["alphas"]) if loss.get("alphas") else None,
        alpha_bounds=tuple(loss["alpha_bounds"]) if loss.get("alpha_bounds") else None,
        epsilon=loss.get("epsilon", 0.0),
        m=loss.get("m"),
        quad_order=loss.get("quad_order", 8),
        quad_panels=loss.get("quad_panels", 8),
    )


def build_optim(optim: dict[str, Any], seed: int, level: int = 0) -> OptimConfig:
    return OptimConfig(
        algorithm=optim.get("algorithm", "adam"),
        step=optim.get("step", 1e-2),
        betas=tuple(optim.get("betas", (0.9, 0.999))),
        max_iter=optim.get("max_iter", 1000),
        window=optim.get("window", 200),
        delta=optim.get("delta"),
        keep_best=optim.get("keep_best", False),
        level=level,
        seed=seed,
    )


def random_family(prob: ProblemSpec, count: int, seed: int, widths: Sequence[int] = (8,)) -> list[ParamModel]:
    """Randomly initialized networks used as the test family of a stability probe."""
    arch = MlpArch((prob.dim, *widths, 1), Activation.TANH)
    envelope = _envelope(prob)
    return [mlp_model(arch, seed + k, envelope_radius=envelope) for k in range(count)]


def probe_constants(prob: ProblemSpec, count: int = 16, seed: int = 0) -> StabilityProbe:
    family: list[Any] = random_family(prob, count, seed)
    if prob.exact is not None:
        family.append(analytic_model(prob.exact))
    # C1_hat is a minimum over the family, so members with a vanishing norm are dropped
    usable = [u for u in family if norm_of(prob, u, prob.v_norm) > 1e-12]
    return probe_stability_constant(prob, usable, description=f"{len(usable)} random tanh networks")


# ====== 单次运行 ====== #
def execute_run(run: RunSpec) -> RunReport:
    """Worker entry point: build, train and evaluate one sweep cell."""
    try:
        prob = build_problem(run.problem)
        model = build_model(run.model, prob, run.seed)
        loss_spec = build_loss_spec(run.loss, run.seed)
        optim = build_optim(run.optim, run.seed)
    except RmLabError as exc:
        _LOGGER.error("Cannot set up %s: %s", run.run_key, exc)
        return failed_report(run, exc.error_code or "RUN_FAILED", str(exc))
    report = train(prob, loss_spec, model, optim, run_key=run.run_key)
    report.seeds["run"] = run.seed
    if RunStatus(report.status) is RunStatus.FAILED or report.final_model is None:
        return report
    try:
        _attach_bounds(report, prob, loss_spec, run.bounds)
    except RmLabError as exc:
        _LOGGER.warning("Bounds for %s unavailable: %s", run.run_key, exc)
        report.diagnostics["bounds_error"] = str(exc)
    return report


def _attach_bounds(report: RunReport, prob: ProblemSpec, loss_spec: LossSpec, bounds: dict[str, Any]) -> None:
    final = report.final_model
    p = loss_spec.exponent(prob.p)
    j_cont = loss_continuous(prob, final, p, loss_spec.tau).total
    report.diagnostics["j_continuous"] = j_cont
    if "residual_cap" in bounds:
        cap = bounds["residual_cap"]
        report.diagnostics["residual_caps"] = residual_cap_audit(prob, final, cap, cap)
    c1 = bounds.get("c1")
    provenance = "configured C1"
    if c1 is None and bounds.get("probe_family", 0) > 0:
        probe = probe_constants(prob, bounds["probe_family"], bounds.get("probe_seed", 0))
        c1 = probe.c1_hat
        provenance = "probed C1"
        report.diagnostics["probe"] = probe.as_dict()
    if c1 is None:
        return
    evaluation = bound_soundness(report, c1, p, loss_spec.tau, j_cont)
    evaluation.provenance = provenance
    report.bounds.append(evaluation)
    if loss_spec.form is LossForm.REGULARIZED_RM and loss_spec.epsilon > 0.0 and report.final_loss is not None:
        masses = density_masses(prob)
        value = aposteriori_bound_regularized(
            report.final_loss.total, c1, p, loss_spec.m_for(p), loss_spec.epsilon, loss_spec.tau, masses
        )
        constants = {"C1": c1, "epsilon": loss_spec.epsilon}
        report.bounds.append(BoundEvaluation("aposteriori_regularized", value, constants, provenance))
    if loss_spec.form is LossForm.HP_VRM and report.final_loss is not None:
        partition = Partition.uniform(prob.domain, loss_spec.cells, loss_spec.basis, loss_spec.order)
        deficit = projection_deficit(prob, final, partition)
        report.bounds.append(hp_bound_report(report, c1, deficit, report.diagnostics.get("delta_n", 0.0)))


# ====== 输出 ====== #
def summary_row(report: RunReport) -> tuple[Any, ...]:
    loss = report.final_loss
    bound = next((b for b in report.bounds if b.name == "aposteriori"), None)
    return (
        report.run_key,
        RunStatus(report.status).value,
        report.error_code,
        len(report.trajectory),
        None if loss is None else loss.total,
        None if loss is None else loss.interior,
        None if loss is None else loss.boundary,
        report.errors.get("v_norm"),
        report.errors.get("l2"),
        report.diagnostics.get("j_continuous"),
        None if bound is None else bound.constants.get("C1"),
        None if bound is None else bound.value,
        None if bound is None else bound.flags.get("holds"),
        report.diagnostics.get("delta_n"),
    )


def _file_stem(run_key: str) -> str:
    return run_key.replace("/", "_")


def write_outputs(
    out_dir: Path, reports: Sequence[RunReport], *, digest: str, formats: Sequence[str], checkpoints: bool
) -> None:
    """Per-run files, then ``summary.csv`` and ``MANIFEST.json`` in input order."""
    runs_dir = out_dir / "runs"
    for report in reports:
        stem = _file_stem(report.run_key)
        if checkpoints and report.final_model is not None and report.final_model.kind is not ModelKind.ANALYTIC:
            path = runs_dir / f"{stem}.checkpoint.json"
            save_checkpoint(report.final_model, path)
            report.checkpoint = str(path.relative_to(out_dir))
        if "json" in formats:
            write_json(runs_dir / f"{stem}.json", report.as_dict())
        if "csv" in formats:
            write_csv(runs_dir / f"{stem}.trajectory.csv", TRAJECTORY_HEADER, (r.as_row() for r in report.trajectory))
    write_csv(out_dir / "summary.csv", SUMMARY_HEADER, (summary_row(r) for r in reports))
    write_json(
        out_dir / "MANIFEST.json",
        {
            "tool": DOMAIN,
            "version": VERSION,
            "config_sha256": digest,
            "run_keys": [r.run_key for r in reports],
            "created": datetime.now(UTC).isoformat(timespec="seconds"),
        },
    )


def run(config_path: Path | str, jobs: int = 1, out: Path | str | None = None) -> int:
    """Execute a configured sweep; returns the process exit code.

    Raises ConfigurationError before any run starts when the config or one of
    its problems is invalid.
    """
    config = load_config(config_path)
    runs = expand_sweep(config)
    # every distinct problem is built once up front so bad options are config errors, not failed runs
    seen: set[str] = set()
    for spec in runs:
        key = repr(sorted(spec.problem.items()))
        if key not in seen:
            seen.add(key)
            build_problem(spec.problem)
    out_dir = Path(out) if out is not None else config.output_dir
    coordinator = SweepCoordinator(execute_run, jobs=jobs, run_timeout=config.run_timeout)
    reports = coordinator.run(runs)
    output = config.data["output"]
    write_outputs(out_dir, reports, digest=config.digest, formats=output["formats"], checkpoints=output["checkpoints"])
    failed = [r.run_key for r in reports if RunStatus(r.status) in (RunStatus.FAILED, RunStatus.ABORTED)]
    if failed:
        _LOGGER.error("%d of %d runs failed: %s", len(failed), len(reports), ", ".join(failed))
        return EXIT_RUN_FAILURE
    _LOGGER.info("Wrote %d runs to %s", len(reports), out_dir)
    return EXIT_OK


# ====== 反例 ====== #
@dataclass(frozen=True)
class CounterexampleRow:
    m_r: int
    discrete_loss: float
    continuous_loss: float
    gap: float
    l2_error: float
    l2_closed_form: float


def scenario_counterexample(m_r_list: Sequence[int]) -> list[CounterexampleRow]:
    """Grid-aliased adversary: zero discrete loss, continuous loss 1/2, vanishing L² error."""
    prob = get_preset("poisson1d_zero")
    rows = []
    for m_r in m_r_list:
        if m_r < 2:
            raise InputError(f"the adversary needs M_r >= 2, got {m_r}")
        u = counterexample_adversary(m_r)
        rule = QuadratureRule(8, max(4, 2 * m_r))
        interior = grid_samples(prob.interior, m_r)
        boundary = grid_samples(prob.boundary, 1, Target.BOUNDARY)
        discrete = loss_discrete(prob, u, 2.0, 1.0, interior, boundary).total
        continuous = loss_continuous(prob, u, 2.0, 1.0, rule).total
        k = 2.0 * math.pi * m_r
        row = CounterexampleRow(
            m_r,
            discrete,
            continuous,
            abs(continuous - discrete),
            norm_of(prob, u, Norm.L2, rule),
            1.0 / math.sqrt(2.0 * k**4),
        )
        _LOGGER.info("Counterexample M_r=%d: discrete %.3e continuous %.9f", m_r, discrete, continuous)
        rows.append(row)
    return rows


# ====== 收敛 ====== #
@dataclass
class ConvergenceSummary:
    runs: list[dict[str, Any]] = field(default_factory=list)
    cells: list[dict[str, Any]] = field(default_factory=list)
    trends: dict[str, bool] = field(default_factory=dict)


def _median(values: list[float]) -> float:
    finite = [v for v in values if v is not None and math.isfinite(v)]
    return statistics.median(finite) if finite else float("nan")


def _nonincreasing(values: list[float]) -> bool:
    finite = [v for v in values if math.isfinite(v)]
    return len(finite) == len(values) and all(b <= a for a, b in zip(finite, finite[1:], strict=False))


def scenario_convergence(
    preset: str,
    n_list: Sequence[int],
    m_list: Sequence[int | None],
    seeds: Sequence[int],
    *,
    optim: OptimConfig | None = None,
    depth: int = 1,
) -> ConvergenceSummary:
    """Error over the (n, M) grid, M = None standing for the continuous Gauss–Legendre loss.

    Within a (M, seed) chain each wider network starts from the previous
    trained one. The added units start with random incoming weights and zero
    outgoing weights, and each run keeps its best iterate, so the final loss
    never rises along the chain.
    """
    prob = get_preset(preset)
    if prob.exact is None:
        raise InputError(f"preset {preset} has no exact solution")
    optim = optim or OptimConfig(max_iter=500)
    summary = ConvergenceSummary()
    widths = sorted(n_list)
    for m in m_list:
        for seed in seeds:
            if m is None:
                spec = LossSpec(LossForm.CONTINUOUS_RM, quad_panels=8)
            else:
                spec = LossSpec(LossForm.DISCRETE_RM, m_r=m, sample_seed=seed)
            previous: ParamModel | None = None
            for level, n in enumerate(widths):
                arch = MlpArch((prob.dim, *([n] * depth), 1))
                model = mlp_model(arch, seed, envelope_radius=_envelope(prob))
                if previous is not None:
                    model = embed_arch(previous, arch, seed=seed + level)
                key = f"n={n},m_r={'inf' if m is None else m},seed={seed}"
                try:
                    config = replace(optim, level=level, seed=seed, keep_best=True)
                    report = train(prob, spec, model, config, run_key=key)
                except RmLabError as exc:
                    _LOGGER.error("Convergence run %s failed: %s", key, exc)
                    summary.runs.append(
                        {"run_key": key, "n": n, "m_r": m, "seed": seed, "status": "failed", "error_v": None}
                    )
                    previous = None
                    continue
                if report.final_model is not None and RunStatus(report.status) is not RunStatus.FAILED:
                    previous = report.final_model
                summary.runs.append(
                    {
                        "run_key": key,
                        "n": n,
                        "m_r": m,
                        "seed": seed,
                        "status": RunStatus(report.status).value,
                        "error_v": report.errors.get("v_norm"),
                        "loss": None if report.final_loss is None else report.final_loss.total,
                    }
                )
    for m in m_list:
        for n in widths:
            errors = [r["error_v"] for r in summary.runs if r["n"] == n and r["m_r"] == m]
            failed = sum(1 for r in summary.runs if r["n"] == n and r["m_r"] == m and r["status"] == "failed")
            summary.cells.append({"n": n, "m_r": m, "median_error": _median(errors), "failed": failed})

    def cell(n: int, m: int | None) -> float:
        return next(c["median_error"] for c in summary.cells if c["n"] == n and c["m_r"] == m)

    finite_m = [m for m in m_list if m is not None]
    for n in widths:
        summary.trends[f"error_vs_m@n={n}"] = _nonincreasing([cell(n, m) for m in sorted(finite_m)])
    if finite_m:
        largest = max(finite_m)
        summary.trends[f"error_vs_n@m_r={largest}"] = _nonincreasing([cell(n, largest) for n in widths])
        summary.trends["corner"] = cell(widths[-1], largest) < cell(widths[0], min(finite_m))
    _LOGGER.info("Convergence trends for %s: %s", preset, summary.trends)
    return summary


def convergence_rows(summary: ConvergenceSummary) -> tuple[tuple[str, ...], list[tuple[Any, ...]]]:
    header = ("n", "m_r", "median_error", "failed")
    rows = [(c["n"], "inf" if c["m_r"] is None else c["m_r"], c["median_error"], c["failed"]) for c in summary.cells]
    return header, rows


# ====== hp-VRM 对比 ====== #
def scenario_hp_vs_strong(
    preset: str,
    k_list: Sequence[int],
    n_list: Sequence[int],
    *,
    optim: OptimConfig | None = None,
    seed: int = 0,
    widths: Sequence[int] = (16,),
    c1: float | None = None,
    alpha_bounds: tuple[float, float] | None = None,
) -> list[dict[str, Any]]:
    """Strong-form RM against hp-VRM (Legendre and piecewise constant) on a K × N grid."""
    prob = get_preset(preset)
    if prob.p != 2.0:
        raise InputError("hp-VRM comparisons need a p = 2 problem")
    optim = optim or OptimConfig(max_iter=500, seed=seed)
    arch = MlpArch((prob.dim, *widths, 1))
    start = mlp_model(arch, seed, envelope_radius=_envelope(prob))
    if c1 is None:
        c1 = probe_constants(prob, 8, seed).c1_hat

    strong = train(prob, LossSpec(LossForm.CONTINUOUS_RM), start, optim, run_key=f"strong,seed={seed}")
    rows: list[dict[str, Any]] = []
    rng = np.random.default_rng(seed)
    for k in k_list:
        variants = [(BasisKind.LEGENDRE, n) for n in n_list] + [(BasisKind.PWCONST, 1)]
        for basis, n in variants:
            spec = LossSpec(LossForm.HP_VRM, cells=k, basis=basis, order=n)
            key = f"{basis.value},K={k},N={n},seed={seed}"
            report = train(prob, spec, start, optim, run_key=key)
            row: dict[str, Any] = {
                "basis": basis.value,
                "K": k,
                "N": n,
                "status": RunStatus(report.status).value,
                "error_hp": report.errors.get("v_norm"),
                "error_strong": strong.errors.get("v_norm"),
            }
            if report.final_model is not None and report.final_loss is not None:
                partition = Partition.uniform(prob.domain, k, basis, n)
                deficit = projection_deficit(prob, report.final_model, partition)
                bound = hp_bound_report(report, c1, deficit, report.diagnostics.get("delta_n", 0.0))
                row.update({"loss_hp": report.final_loss.total, "deficit": deficit, "hp_bound": bound.value})
                if alpha_bounds is not None:
                    row.update(_weight_sandwich(prob, report.final_model, partition, alpha_bounds, rng))
            rows.append(row)
            _LOGGER.info("hp comparison %s: %s", key, row)
    return rows


def _weight_sandwich(
    prob: ProblemSpec, u: ParamModel, partition: Partition, bounds: tuple[float, float], rng: np.random.Generator
) -> dict[str, Any]:
    """M₀·J ≤ J_α ≤ M·J for random weights with M₀ ≤ α² ≤ M."""
    lo, hi = bounds
    plain = build_basis(partition)
    alphas = np.sqrt(rng.uniform(lo, hi, size=plain.size))
    weighted = build_basis(partition, alphas, bounds)
    j = loss_hp_vrm(prob, u, 1.0, plain).interior
    j_alpha = loss_hp_vrm(prob, u, 1.0, weighted).interior
    slack = 1e-12 * max(1.0, j)
    return {"j_weighted": j_alpha, "weights_sandwich": lo * j - slack <= j_alpha <= hi * j + slack}


# ====== Rademacher 表 ====== #
def rademacher_table(
    preset: str,
    m_list: Sequence[int],
    *,
    family_size: int = 20,
    width: int = 8,
    n_sign_trials: int = 64,
    n_sample_trials: int = 4,
    seed: int = 0,
) -> tuple[list[tuple[int, float, float]], float]:
    """Rademacher complexity of a unit path-norm network family per M, and the fitted rate."""
    prob = get_preset(preset)
    if prob.dim != 1:
        raise ConfigurationError("the path-norm family is defined on one-dimensional domains", path="preset")
    family = unit_path_norm_family(family_size, width, seed)
    functions = [u.value for u in family]
    rows = []
    for i, m in enumerate(m_list):
        estimate, stderr = estimate_rademacher(
            functions, prob.rho, prob.interior, m, n_sign_trials, n_sample_trials, seed + i
        )
        rows.append((int(m), estimate, stderr))
    slope = fit_loglog_slope([r[0] for r in rows], [r[1] for r in rows])
    _LOGGER.info("Rademacher rate on %s: slope %.3f", preset, slope)
    return rows, slope


def mc_table(preset: str, m_list: Sequence[int], trials: int = 64, seed: int = 0) -> tuple[list[Any], float]:
    """Monte-Carlo error of ∫f dρ on the preset's interior per M."""
    prob = get_preset(preset)
    rows, slope = mc_convergence_probe(
        lambda x: np.asarray(prob.f.value(x), dtype=float), prob.rho, prob.interior, m_list, trials, seed
    )
    return [asdict(r) for r in rows], slope


def probe_rows(probe: StabilityProbe) -> list[tuple[Any, ...]]:
    rows = [("c1_hat", probe.c1_hat), ("c2_hat", probe.c2_hat)]
    rows.extend((f"ratio_v[{i}]", r) for i, r in enumerate(probe.ratios_v))
    return rows
