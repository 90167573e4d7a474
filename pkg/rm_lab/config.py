"""Experiment configuration: TOML documents checked against a voluptuous schema."""

from __future__ import annotations

import itertools
import logging
import os
import re
import tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

import voluptuous as vol

from .const import ADAM_BETAS, DEFAULT_QUAD_ORDER, DEFAULT_RUN_TIMEOUT, ENV_SEED, STOP_WINDOW
from .core.const import Activation, Algorithm, BasisKind, LossForm, ModelKind, SampleKind
from .core.error import ConfigurationError
from .core.utils import format_float, sha256_bytes
from .presets import PRESETS

if TYPE_CHECKING:
    from .data import RunKey

_LOGGER = logging.getLogger(__name__)

# 扫描轴的固定顺序, 决定网格展开和 run key
SWEEP_AXES = ("n", "m_r", "m_b", "tau", "p", "epsilon")

_positive_int = vol.All(vol.Coerce(int), vol.Range(min=1))
_positive = vol.All(vol.Coerce(float), vol.Range(min=0.0, min_included=False))
_nonneg = vol.All(vol.Coerce(float), vol.Range(min=0.0))
_exponent = vol.All(vol.Coerce(float), vol.Range(min=1.0))


def _values(enum: type) -> vol.In:
    return vol.In([e.value for e in enum])


PROBLEM_SCHEMA = vol.Schema(
    {
        vol.Required("preset"): vol.In(sorted(PRESETS)),
        vol.Optional("p"): _exponent,
        vol.Optional("alpha"): vol.All(
            vol.Coerce(float), vol.Range(min=1.0, max=2.0, min_included=False, max_included=False)
        ),
        vol.Optional("truncation"): _positive,
        vol.Optional("exterior_width"): _positive,
        vol.Optional("frac_order"): _positive_int,
        vol.Optional("frac_levels"): _positive_int,
        # advection recast to Ω-filling fields is recognized only to be rejected
        vol.Optional("omega_filling", default=False): bool,
    }
)

MODEL_SCHEMA = vol.Schema(
    {
        vol.Optional("kind", default=ModelKind.MLP.value): vol.In([ModelKind.MLP.value, ModelKind.GAUSSIAN_RBF.value]),
        vol.Optional("widths", default=[16]): [_positive_int],
        vol.Optional("depth"): _positive_int,
        vol.Optional("activation", default=Activation.TANH.value): _values(Activation),
        vol.Optional("envelope", default=True): bool,
        vol.Optional("centers"): [vol.Any(vol.Coerce(float), [vol.Coerce(float)])],
        vol.Optional("m"): _positive,
        vol.Optional("coeffs"): [vol.Coerce(float)],
    }
)

LOSS_SCHEMA = vol.Schema(
    {
        vol.Optional("form", default=LossForm.CONTINUOUS_RM.value): _values(LossForm),
        vol.Optional("tau", default=1.0): _positive,
        vol.Optional("p"): _exponent,
        vol.Optional("sample_kind", default=SampleKind.IID_MC.value): _values(SampleKind),
        vol.Optional("m_r", default=128): _positive_int,
        vol.Optional("m_b", default=2): _positive_int,
        vol.Optional("cells", default=4): vol.Any(_positive_int, [_positive_int]),
        vol.Optional("order", default=4): _positive_int,
        vol.Optional("basis", default=BasisKind.LEGENDRE.value): _values(BasisKind),
        vol.Optional("integrate_by_parts", default=False): bool,
        vol.Optional("alphas"): [vol.Coerce(float)],
        vol.Optional("alpha_bounds"): vol.ExactSequence([_positive, _positive]),
        vol.Optional("epsilon", default=0.0): _nonneg,
        vol.Optional("m"): _positive_int,
        vol.Optional("quad_order", default=DEFAULT_QUAD_ORDER): _positive_int,
        vol.Optional("quad_panels", default=8): _positive_int,
    }
)

OPTIM_SCHEMA = vol.Schema(
    {
        vol.Optional("algorithm", default=Algorithm.ADAM.value): _values(Algorithm),
        vol.Optional("step", default=1e-2): _positive,
        vol.Optional("betas", default=list(ADAM_BETAS)): vol.ExactSequence([_nonneg, _nonneg]),
        vol.Optional("max_iter", default=1000): vol.All(vol.Coerce(int), vol.Range(min=0)),
        vol.Optional("window", default=STOP_WINDOW): _positive_int,
        vol.Optional("delta"): _nonneg,
        vol.Optional("keep_best", default=False): bool,
    }
)

SWEEP_SCHEMA = vol.Schema(
    {
        vol.Optional("n"): [_positive_int],
        vol.Optional("m_r"): [_positive_int],
        vol.Optional("m_b"): [_positive_int],
        vol.Optional("tau"): [_positive],
        vol.Optional("p"): [_exponent],
        vol.Optional("epsilon"): [_nonneg],
        vol.Optional("seeds", default=[0]): vol.All([vol.Coerce(int)], vol.Length(min=1)),
    }
)

BOUNDS_SCHEMA = vol.Schema(
    {
        vol.Optional("c1"): _positive,
        vol.Optional("probe_family", default=0): vol.All(vol.Coerce(int), vol.Range(min=0)),
        vol.Optional("probe_seed", default=0): vol.Coerce(int),
        vol.Optional("residual_cap"): _positive,
    }
)

OUTPUT_SCHEMA = vol.Schema(
    {
        vol.Optional("directory", default="results"): str,
        vol.Optional("formats", default=["json", "csv"]): [vol.In(["json", "csv"])],
        vol.Optional("checkpoints", default=False): bool,
    }
)

CONFIG_SCHEMA = vol.Schema(
    {
        vol.Optional("name", default="experiment"): str,
        vol.Required("problem"): PROBLEM_SCHEMA,
        vol.Optional("model", default={}): MODEL_SCHEMA,
        vol.Optional("loss", default={}): LOSS_SCHEMA,
        vol.Optional("optim", default={}): OPTIM_SCHEMA,
        vol.Optional("sweep", default={}): SWEEP_SCHEMA,
        vol.Optional("bounds", default={}): BOUNDS_SCHEMA,
        vol.Optional("output", default={}): OUTPUT_SCHEMA,
        vol.Optional("run_timeout", default=DEFAULT_RUN_TIMEOUT): _positive,
    },
    extra=vol.PREVENT_EXTRA,
)


@dataclass(frozen=True)
class RunSpec:
    """One cell of the sweep grid; plain data so it can cross a process boundary."""

    run_key: RunKey
    problem: dict[str, Any]
    model: dict[str, Any]
    loss: dict[str, Any]
    optim: dict[str, Any]
    bounds: dict[str, Any]
    seed: int
    axes: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    data: dict[str, Any]
    source: str
    digest: str
    path: Path | None = None

    @property
    def output_dir(self) -> Path:
        return Path(self.data["output"]["directory"])

    @property
    def run_timeout(self) -> float:
        return float(self.data["run_timeout"])


# ====== 解析 ====== #
def _line_of(text: str, path: list[Any]) -> int | None:
    """Best-effort source line for a dotted key path."""
    if not path:
        return None
    section = str(path[0])
    key = str(path[1]) if len(path) > 1 else None
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        header = re.match(r"^\[\s*([^\]]+?)\s*\]$", line)
        if header:
            current = header.group(1)
            if current == section and key is None:
                return lineno
            continue
        if current is None and re.match(rf"^{re.escape(section)}\s*=", line):
            return lineno
        if current == section and key is not None and re.match(rf"^{re.escape(key)}\s*=", line):
            return lineno
    return None


def parse_config(text: str, path: Path | None = None) -> ExperimentConfig:
    """Parse and validate a TOML experiment document."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        found = re.search(r"line (\d+)", str(exc))
        raise ConfigurationError(str(exc), path="<toml>", line=int(found.group(1)) if found else None) from exc
    try:
        data = CONFIG_SCHEMA(raw)
    except vol.MultipleInvalid as exc:
        error = exc.errors[0]
        dotted = ".".join(str(p) for p in error.path) or "<root>"
        raise ConfigurationError(error.msg, path=dotted, line=_line_of(text, list(error.path))) from exc
    if data["problem"].get("omega_filling"):
        raise ConfigurationError(
            "Ω-filling advection fields are not supported; supply a Lipschitz weight instead",
            path="problem.omega_filling",
            line=_line_of(text, ["problem", "omega_filling"]),
        )
    _check_model(data, text)
    digest = sha256_bytes(text.encode("utf-8"))
    _LOGGER.debug("Loaded config %s (sha256 %s)", data["name"], digest[:12])
    return ExperimentConfig(data["name"], data, text, digest, path)


def load_config(path: Path | str) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config: {exc}", path=str(path)) from exc
    return parse_config(text, path)


def _check_model(data: dict[str, Any], text: str) -> None:
    model = data["model"]
    if model["kind"] == ModelKind.GAUSSIAN_RBF.value:
        missing = [k for k in ("centers", "m", "coeffs") if k not in model]
        if missing:
            raise ConfigurationError(
                f"gaussian_rbf models need {', '.join(missing)}", path="model", line=_line_of(text, ["model"])
            )
        if "n" in data["sweep"]:
            raise ConfigurationError(
                "width sweeps apply to mlp models only", path="sweep.n", line=_line_of(text, ["sweep", "n"])
            )


# ====== 扫描展开 ====== #
def seeds_for(data: dict[str, Any]) -> list[int]:
    override = os.environ.get(ENV_SEED)
    if override is None or override == "":
        return list(data["sweep"]["seeds"])
    try:
        return [int(override)]
    except ValueError as exc:
        raise ConfigurationError(f"{ENV_SEED} must be an integer, got {override!r}", path=ENV_SEED) from exc


def _token(value: Any) -> str:
    return format_float(value) if isinstance(value, float) else str(value)


def make_run_key(axes: dict[str, Any], seed: int) -> RunKey:
    parts = [f"{k}={_token(axes[k])}" for k in SWEEP_AXES if k in axes]
    parts.append(f"seed={seed}")
    return ",".join(parts)


def expand_sweep(config: ExperimentConfig) -> list[RunSpec]:
    """Cartesian grid over the configured sweep lists, in fixed axis order, seeds innermost."""
    data = config.data
    sweep = data["sweep"]
    axes = [a for a in SWEEP_AXES if a in sweep]
    grid = itertools.product(*(sweep[a] for a in axes)) if axes else [()]
    runs = []
    for combo in grid:
        values = dict(zip(axes, combo, strict=True))
        for seed in seeds_for(data):
            problem = dict(data["problem"])
            model = dict(data["model"])
            loss = dict(data["loss"])
            if "n" in values:
                depth = model.get("depth", len(model["widths"]))
                model["widths"] = [values["n"]] * depth
            for key in ("m_r", "m_b", "tau", "epsilon"):
                if key in values:
                    loss[key] = values[key]
            if "p" in values:
                problem["p"] = values["p"]
            runs.append(
                RunSpec(
                    make_run_key(values, seed),
                    problem,
                    model,
                    loss,
                    dict(data["optim"]),
                    dict(data["bounds"]),
                    seed,
                    values,
                )
            )
    _LOGGER.info("Expanded %s into %d runs", config.name, len(runs))
    return runs
