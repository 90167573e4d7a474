"""Parameter optimization with a quasi-minimizer stopping rule."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np

from .const import DELTA_FACTOR
from .core.autodiff import grad_params
from .core.const import Algorithm, Norm, RunStatus
from .core.error import NumericError, RmLabError
from .data import OptimConfig, RunReport, TrajectoryRow
from .losses import LossObjective, evaluate_loss
from .problems import Difference, norm_of, v_norm_distance

if TYPE_CHECKING:
    from collections.abc import Callable

    from .data import LossSpec
    from .models import ParamModel
    from .problems import ProblemSpec

_LOGGER = logging.getLogger(__name__)

type Objective = Callable[[np.ndarray], tuple[float, np.ndarray, float, float]]


class Adam:
    def __init__(self, config: OptimConfig, size: int) -> None:
        self.step_size = config.step
        self.beta1, self.beta2 = config.betas
        self.eps = config.eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return theta - self.step_size * m_hat / (np.sqrt(v_hat) + self.eps)


class GradientDescent:
    def __init__(self, config: OptimConfig, size: int) -> None:
        self.step_size = config.step

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return theta - self.step_size * grad


def make_optimizer(config: OptimConfig, size: int) -> Adam | GradientDescent:
    return Adam(config, size) if config.algorithm is Algorithm.ADAM else GradientDescent(config, size)


def slack_for(config: OptimConfig, first_loss: float) -> float:
    """δ_n: configured, or DELTA_FACTOR·J(θ₀) halved once per architecture level."""
    if config.delta is not None:
        return config.delta
    return DELTA_FACTOR * abs(first_loss) * 0.5**config.level


@dataclass
class OptimResult:
    theta: np.ndarray
    trajectory: list[TrajectoryRow] = field(default_factory=list)
    status: RunStatus = RunStatus.OK
    delta: float = 0.0
    error_code: str | None = None
    message: str | None = None


def minimize(objective: Objective, theta0: np.ndarray, config: OptimConfig) -> OptimResult:
    """Iterate until ``max_iter`` or until the loss improves by less than δ_n over the window.

    Non-finite losses or gradients abort the run; the trajectory so far is kept.
    With ``keep_best`` the returned parameters are the recorded iterate with the
    lowest loss, so a warm start never ends above its starting loss.
    """
    theta = np.array(theta0, dtype=float)
    optimizer = make_optimizer(config, theta.size)
    result = OptimResult(theta)
    best_loss, best_theta = math.inf, theta
    for iteration in range(config.max_iter + 1):
        try:
            loss, grad, interior, boundary = objective(theta)
        except NumericError as exc:
            _LOGGER.error("Aborted at iteration %d: %s", iteration, exc)
            result.status = RunStatus.ABORTED
            result.error_code = exc.error_code
            result.message = str(exc)
            return result
        result.trajectory.append(TrajectoryRow(iteration, loss, interior, boundary, float(np.linalg.norm(grad))))
        if loss < best_loss:
            best_loss, best_theta = loss, theta
        if iteration == 0:
            result.delta = slack_for(config, loss)
        if iteration >= config.window:
            improvement = result.trajectory[iteration - config.window].loss - loss
            if improvement < result.delta:
                _LOGGER.debug(
                    "Stopped at iteration %d: improvement %.3e < δ=%.3e", iteration, improvement, result.delta
                )
                result.status = RunStatus.STOPPED
                break
        if iteration == config.max_iter:
            break
        theta = optimizer.step(theta, grad)
        result.theta = theta
    if config.keep_best:
        result.theta = best_theta
    return result


def train(
    prob: ProblemSpec,
    loss_spec: LossSpec,
    model: ParamModel,
    optim: OptimConfig,
    *,
    run_key: str = "run",
    objective: LossObjective | None = None,
) -> RunReport:
    started = time.perf_counter()
    objective = objective or LossObjective(prob, loss_spec)

    def step(theta: np.ndarray) -> tuple[float, np.ndarray, float, float]:
        parts: dict[str, object] = {}

        def build(params: list) -> object:
            total, interior, boundary = objective.evaluate(model.bind(params))
            parts["interior"], parts["boundary"] = interior, boundary
            return total

        loss, grad = grad_params(build, theta)
        return loss, grad, _scalar(parts["interior"]), _scalar(parts["boundary"])

    _LOGGER.info("Training %s on %s with %s", model.describe(), prob.name, loss_spec.form.value)
    if model.theta.size == 0:
        optim = replace(optim, max_iter=0)
    result = minimize(step, model.theta, optim)
    final = model.with_theta(result.theta)
    report = RunReport(
        run_key=run_key,
        problem=prob.describe(),
        loss_spec=loss_spec.describe(),
        model=model.describe(),
        seeds={"model": model.seed or 0, "sample": loss_spec.sample_seed, "optim": optim.seed},
        status=result.status,
        trajectory=result.trajectory,
        error_code=result.error_code,
        message=result.message,
        final_model=final,
    )
    report.diagnostics["delta_n"] = result.delta
    if result.status is not RunStatus.ABORTED:
        try:
            report.final_loss = evaluate_loss(prob, final, loss_spec, objective)
            report.errors = solution_errors(prob, final)
        except RmLabError as exc:
            _LOGGER.error("Evaluation of %s failed: %s", run_key, exc)
            report.status, report.error_code, report.message = RunStatus.FAILED, exc.error_code, str(exc)
    report.wall_clock = time.perf_counter() - started
    _LOGGER.info(
        "Finished %s: status=%s iterations=%d loss=%.6e",
        run_key,
        RunStatus(report.status).value,
        len(report.trajectory),
        float("nan") if report.final_loss is None else report.final_loss.total,
    )
    return report


def solution_errors(prob: ProblemSpec, u: ParamModel) -> dict[str, float]:
    """‖u − u*‖ in the problem's V-norm and in L²; empty without an exact solution."""
    if prob.exact is None:
        return {}
    return {
        "v_norm": v_norm_distance(prob, u, prob.exact),
        "l2": norm_of(prob, Difference(u, prob.exact), Norm.L2),
    }


def _scalar(value: object) -> float:
    return float(np.asarray(getattr(value, "value", value)))
