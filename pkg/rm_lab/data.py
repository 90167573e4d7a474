# data.py
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Any

from .const import ADAM_BETAS, ADAM_EPS, DEFAULT_QUAD_ORDER, REPORT_SCHEMA_VERSION, STOP_WINDOW
from .core.const import Algorithm, BasisKind, LossForm, RunStatus, SampleKind
from .core.error import InputError

if TYPE_CHECKING:
    from collections.abc import Sequence


_LOGGER = logging.getLogger(__name__)

type RunKey = str
type Row = Sequence[Any]


def minimal_m(p: float) -> int:
    """Smallest integer m with 2(m − 1) < p ≤ 2m."""
    return max(1, math.ceil(p / 2.0))


@dataclass(frozen=True)
class LossSpec:
    """Which functional to minimize and how it is discretized."""

    form: LossForm = LossForm.CONTINUOUS_RM
    p: float | None = None  # None: the problem's exponent
    tau: float = 1.0
    # discrete_rm
    sample_kind: SampleKind = SampleKind.IID_MC
    m_r: int = 128
    m_b: int = 2
    sample_seed: int = 0
    # hp_vrm / pwconst_weak
    cells: int | tuple[int, ...] = 4
    basis: BasisKind = BasisKind.LEGENDRE
    order: int = 4
    integrate_by_parts: bool = False
    alphas: tuple[float, ...] | None = None
    alpha_bounds: tuple[float, float] | None = None
    # regularized_rm
    epsilon: float = 0.0
    m: int | None = None
    # reference quadrature for continuous forms
    quad_order: int = DEFAULT_QUAD_ORDER
    quad_panels: int = 8

    def __post_init__(self) -> None:
        object.__setattr__(self, "form", LossForm(self.form))
        object.__setattr__(self, "sample_kind", SampleKind(self.sample_kind))
        object.__setattr__(self, "basis", BasisKind(self.basis))
        if self.tau <= 0.0:
            raise InputError(f"boundary weight tau must be positive, got {self.tau}")
        if self.tau < 1.0:
            _LOGGER.warning("Boundary weight tau=%s < 1: fine for training, but the bounds assume tau >= 1", self.tau)
        if self.p is not None and self.p < 1.0:
            raise InputError(f"norm exponent must be >= 1, got {self.p}")
        if self.m_r < 1 or self.m_b < 1:
            raise InputError("sample counts must be positive")
        if self.epsilon < 0.0:
            raise InputError(f"epsilon must be nonnegative, got {self.epsilon}")
        if self.form in (LossForm.HP_VRM, LossForm.PWCONST_WEAK) and self.p not in (None, 2.0):
            raise InputError(f"{self.form.value} is defined for p = 2 only")

    def exponent(self, problem_p: float) -> float:
        return float(self.p if self.p is not None else problem_p)

    def m_for(self, p: float) -> int:
        m = self.m if self.m is not None else minimal_m(p)
        if not (2 * (m - 1) < p <= 2 * m):
            raise InputError(f"m={m} does not satisfy 2(m−1) < p ≤ 2m for p={p}")
        return m

    def describe(self) -> dict[str, Any]:
        out = asdict(self)
        out["form"] = self.form.value
        out["sample_kind"] = self.sample_kind.value
        out["basis"] = self.basis.value
        return out


@dataclass(frozen=True)
class OptimConfig:
    algorithm: Algorithm = Algorithm.ADAM
    step: float = 1e-2
    betas: tuple[float, float] = ADAM_BETAS
    eps: float = ADAM_EPS
    max_iter: int = 1000
    window: int = STOP_WINDOW
    delta: float | None = None  # absolute slack δ_n; None derives it from the first loss
    level: int = 0  # architecture level n, halves the derived slack per level
    seed: int = 0
    keep_best: bool = False  # return the lowest-loss iterate instead of the last one

    def __post_init__(self) -> None:
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        if self.step <= 0.0:
            raise InputError(f"step size must be positive, got {self.step}")
        if self.max_iter < 0 or self.window < 1:
            raise InputError("max_iter must be nonnegative and window positive")
        if self.delta is not None and self.delta < 0.0:
            raise InputError(f"slack delta must be nonnegative, got {self.delta}")


@dataclass(frozen=True)
class LossBreakdown:
    form: str
    p: float
    tau: float
    interior: float
    boundary: float
    total: float
    quadrature_certificate: dict[str, Any] | None = None

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class TrajectoryRow:
    iteration: int
    loss: float
    residual_part: float
    boundary_part: float
    grad_norm: float

    def as_row(self) -> tuple[Any, ...]:
        return (self.iteration, self.loss, self.residual_part, self.boundary_part, self.grad_norm)


@dataclass
class BoundEvaluation:
    """A bound value together with the constants it used and where they came from."""

    name: str
    value: float
    constants: dict[str, Any]
    provenance: str = "configured"
    flags: dict[str, Any] = field(default_factory=dict)

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass
class RunReport:
    """Data for one training run."""

    run_key: RunKey
    problem: dict[str, Any]
    loss_spec: dict[str, Any]
    model: str
    seeds: dict[str, int]
    status: RunStatus = RunStatus.OK
    trajectory: list[TrajectoryRow] = field(default_factory=list)
    final_loss: LossBreakdown | None = None
    errors: dict[str, float] = field(default_factory=dict)
    bounds: list[BoundEvaluation] = field(default_factory=list)
    diagnostics: dict[str, Any] = field(default_factory=dict)
    checkpoint: str | None = None
    wall_clock: float = 0.0
    error_code: str | None = None
    message: str | None = None
    final_model: Any = field(default=None, repr=False, compare=False)

    def as_dict(self) -> dict[str, Any]:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "run_key": self.run_key,
            "status": RunStatus(self.status).value,
            "problem": self.problem,
            "loss_spec": self.loss_spec,
            "model": self.model,
            "seeds": self.seeds,
            "final_loss": None if self.final_loss is None else self.final_loss.as_dict(),
            "errors": self.errors,
            "bounds": [b.as_dict() for b in self.bounds],
            "diagnostics": self.diagnostics,
            "checkpoint": self.checkpoint,
            "wall_clock": self.wall_clock,
            "error_code": self.error_code,
            "message": self.message,
            "iterations": len(self.trajectory),
        }
