"""Hypothesis families: feed-forward networks, Gaussian RBF networks, closed-form functions."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Any

import numpy as np
from scipy.special import expit

from .core import jets
from .core.autodiff import Var
from .core.const import Activation, ModelKind
from .core.error import InputError
from .core.jets import AnalyticFunction, Jet2, as_points, seed_coordinates, tri_index
from .core.quadrature import make_rng
from .core.utils import format_float

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence
    from pathlib import Path

_LOGGER = logging.getLogger(__name__)

_JET_ACTIVATIONS: dict[Activation, Callable[[Jet2], Jet2]] = {
    Activation.TANH: jets.tanh,
    Activation.SIN: jets.sin,
    Activation.SOFTPLUS: jets.softplus,
}


def _activation_derivs(act: Activation, z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if act is Activation.TANH:
        t = np.tanh(z)
        s1 = 1.0 - t * t
        return t, s1, -2.0 * t * s1
    if act is Activation.SIN:
        s = np.sin(z)
        return s, np.cos(z), -s
    sig = expit(z)
    return np.logaddexp(0.0, z), sig, sig * (1.0 - sig)


# ====== 架构 ====== #
@dataclass(frozen=True)
class MlpArch:
    layer_widths: tuple[int, ...]
    activation: Activation = Activation.TANH

    def __post_init__(self) -> None:
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        object.__setattr__(self, "activation", Activation(self.activation))
        if len(widths) < 2:
            raise InputError("an MLP needs at least an input and an output layer")
        if any(w < 1 for w in widths):
            raise InputError(f"layer widths must be positive: {widths}")
        if widths[-1] != 1:
            raise InputError(f"output width must be 1, got {widths[-1]}")

    @property
    def depth(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def param_count(self) -> int:
        w = self.layer_widths
        return sum(w[l] * w[l - 1] + w[l] for l in range(1, len(w)))

    def contains(self, other: MlpArch, *, same_depth: bool = False) -> bool:
        """True when ``other`` ⊂ ``self``: no deeper and no wider at any layer.

        A shallower ``other`` still counts as nested. :func:`embed_arch` realizes
        the inclusion exactly only between equal depths; ``same_depth=True``
        checks that stricter relation.
        """
        if other.input_dim != self.input_dim or other.depth > self.depth:
            return False
        if same_depth and other.depth != self.depth:
            return False
        inner_self = self.layer_widths[1:-1]
        inner_other = other.layer_widths[1:-1]
        return all(a <= b for a, b in zip(inner_other, inner_self, strict=False))

    def describe(self) -> str:
        return f"mlp{self.layer_widths}-{self.activation.value}"


@dataclass(frozen=True, eq=False)
class RbfArch:
    centers: np.ndarray  # (n, d)
    m: float

    @property
    def n_terms(self) -> int:
        return int(self.centers.shape[0])

    @property
    def param_count(self) -> int:
        return self.n_terms

    @property
    def input_dim(self) -> int:
        return int(self.centers.shape[1])

    def validate(self) -> None:
        if self.m <= 0:
            raise InputError(f"separation parameter must be positive, got {self.m}")
        if self.n_terms > math.exp(self.m * self.m):
            raise InputError(f"{self.n_terms} terms exceed exp(m^2) for m={self.m}")
        if self.n_terms > 1:
            diff = self.centers[:, None, :] - self.centers[None, :, :]
            dist = np.sqrt(np.sum(diff * diff, axis=-1))
            np.fill_diagonal(dist, np.inf)
            if np.min(dist) <= 1.0 / self.m:
                raise InputError(f"centers closer than 1/m = {1.0 / self.m}")

    def describe(self) -> str:
        return f"rbf(n={self.n_terms}, m={self.m})"


# ====== 模型 ====== #
@dataclass(frozen=True, eq=False)
class ParamModel:
    """A member of a parametric family; immutable, parameter updates produce new models."""

    kind: ModelKind
    arch: MlpArch | RbfArch | None
    theta: np.ndarray
    analytic: AnalyticFunction | None = None
    envelope_radius: float | None = None  # multiply by (R² − |x|²)₊
    seed: int | None = None
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        kind = ModelKind(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=float).ravel())
        if kind is ModelKind.ANALYTIC:
            if self.analytic is None:
                raise InputError("analytic models need a closed-form function")
            return
        if self.arch is None or self.theta.size != self.arch.param_count:
            expected = None if self.arch is None else self.arch.param_count
            raise InputError(f"theta has length {self.theta.size}, architecture expects {expected}")
        if isinstance(self.arch, RbfArch):
            self.arch.validate()

    @property
    def dim(self) -> int:
        if self.kind is ModelKind.ANALYTIC:
            return self.analytic.dim
        return self.arch.input_dim

    def describe(self) -> str:
        if self.kind is ModelKind.ANALYTIC:
            return f"analytic({self.analytic.name})"
        return self.arch.describe()

    def with_theta(self, theta: np.ndarray) -> ParamModel:
        return replace(self, theta=np.array(theta, dtype=float))

    def bind(self, params: Sequence[Var | float]) -> BoundModel:
        """Realization with (possibly taped) parameters."""
        if len(params) != self.theta.size:
            raise InputError(f"expected {self.theta.size} parameters, got {len(params)}")
        return BoundModel(self, list(params))

    # Evaluable protocol on the stored theta
    def jet(self, points: np.ndarray) -> Jet2:
        pts = as_points(points, self.dim)
        if self.kind is ModelKind.ANALYTIC:
            out = self.analytic.jet(pts)
        elif self.kind is ModelKind.MLP:
            out = _mlp_jet_numpy(self.arch, self.theta, pts)
        else:
            out = _rbf_jet(self.arch, list(self.theta), pts)
        return _apply_envelope(out, pts, self.envelope_radius)

    def value(self, points: np.ndarray) -> np.ndarray:
        pts = as_points(points, self.dim)
        if self.kind is ModelKind.MLP and self.envelope_radius is None:
            return _mlp_value_numpy(self.arch, self.theta, pts)
        return np.asarray(self.jet(pts).value, dtype=float)


class BoundModel:
    """Evaluable realization of a model at a given parameter list (floats or taped scalars)."""

    def __init__(self, model: ParamModel, params: list[Var | float]) -> None:
        self.model = model
        self.params = params
        self.dim = model.dim

    def jet(self, points: np.ndarray) -> Jet2:
        model = self.model
        pts = as_points(points, self.dim)
        if model.kind is ModelKind.ANALYTIC:
            out = model.analytic.jet(pts)
        elif model.kind is ModelKind.MLP:
            out = _mlp_jet_generic(model.arch, self.params, pts)
        else:
            out = _rbf_jet(model.arch, self.params, pts)
        return _apply_envelope(out, pts, model.envelope_radius)

    def value(self, points: np.ndarray) -> Any:
        return self.jet(points).value


def model_eval(model: ParamModel, x: Any) -> Jet2:
    """Jet of the realization at a single point (scalar components) or a batch (array components)."""
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 0 or (arr.ndim == 1 and model.dim > 1)
    out = model.jet(as_points(arr, model.dim))
    return squeeze_jet(out) if single else out


def squeeze_jet(jet: Jet2) -> Jet2:
    """Collapse a one-point batch jet to float components."""

    def one(c: Any) -> Any:
        return float(np.asarray(c).reshape(-1)[0]) if isinstance(c, np.ndarray) else c

    return Jet2(one(jet.value), tuple(one(c) for c in jet.d1), tuple(one(c) for c in jet.d2))


# ---------- MLP ---------- #
def _layers(arch: MlpArch, theta: Sequence[Any]) -> list[tuple[list[Any], list[Any], int, int]]:
    out, offset = [], 0
    w = arch.layer_widths
    for l in range(1, len(w)):
        n_in, n_out = w[l - 1], w[l]
        weights = list(theta[offset : offset + n_in * n_out])
        offset += n_in * n_out
        biases = list(theta[offset : offset + n_out])
        offset += n_out
        out.append((weights, biases, n_in, n_out))
    return out


def _mlp_value_numpy(arch: MlpArch, theta: np.ndarray, points: np.ndarray) -> np.ndarray:
    h = points.T
    layers = _layers(arch, theta)
    for l, (weights, biases, n_in, n_out) in enumerate(layers):
        z = np.asarray(weights).reshape(n_out, n_in) @ h + np.asarray(biases)[:, None]
        h = _activation_derivs(arch.activation, z)[0] if l < len(layers) - 1 else z
    return h[0]


def _mlp_jet_numpy(arch: MlpArch, theta: np.ndarray, points: np.ndarray) -> Jet2:
    d, m = points.shape[1], points.shape[0]
    h = points.T  # (n, M)
    g = np.zeros((d, d, m))
    for k in range(d):
        g[k, k] = 1.0
    hess = np.zeros((d, d, d, m))
    layers = _layers(arch, theta)
    for l, (weights, biases, n_in, n_out) in enumerate(layers):
        w = np.asarray(weights).reshape(n_out, n_in)
        z = w @ h + np.asarray(biases)[:, None]
        zg = np.einsum("ij,kjm->kim", w, g)
        zh = np.einsum("ij,kljm->klim", w, hess)
        if l == len(layers) - 1:
            h, g, hess = z, zg, zh
            break
        s0, s1, s2 = _activation_derivs(arch.activation, z)
        h = s0
        g = s1[None] * zg
        hess = s1[None, None] * zh + s2[None, None] * zg[:, None] * zg[None, :]
    d2 = tuple(hess[i, j, 0] for i in range(d) for j in range(i, d))
    return Jet2(h[0], tuple(g[k, 0] for k in range(d)), d2)


def _mlp_jet_generic(arch: MlpArch, theta: Sequence[Any], points: np.ndarray) -> Jet2:
    act = _JET_ACTIVATIONS[arch.activation]
    hidden: list[Jet2] = seed_coordinates(points)
    layers = _layers(arch, theta)
    for l, (weights, biases, n_in, n_out) in enumerate(layers):
        z = []
        for i in range(n_out):
            acc = hidden[0] * weights[i * n_in]
            for j in range(1, n_in):
                acc = acc + hidden[j] * weights[i * n_in + j]
            z.append(acc + biases[i])
        hidden = z if l == len(layers) - 1 else [act(zi) for zi in z]
    return hidden[0]


# ---------- Gaussian RBF ---------- #
def _rbf_jet(arch: RbfArch, coeffs: Sequence[Any], points: np.ndarray) -> Jet2:
    coords = seed_coordinates(points)
    out: Jet2 | None = None
    for k in range(arch.n_terms):
        r2 = None
        for i, xi in enumerate(coords):
            diff = xi - float(arch.centers[k, i])
            r2 = diff * diff if r2 is None else r2 + diff * diff
        term = jets.exp(-r2) * coeffs[k]
        out = term if out is None else out + term
    return out


def _apply_envelope(out: Jet2, points: np.ndarray, radius: float | None) -> Jet2:
    if radius is None:
        return out
    coords = seed_coordinates(points)
    s = radius * radius - sum((c * c for c in coords[1:]), coords[0] * coords[0])
    return out * jets.pos_pow(s, 1.0)


# ====== 构造 ====== #
def init_params(arch: MlpArch, seed: int) -> np.ndarray:
    """Glorot-uniform weights per layer, zero biases."""
    rng = make_rng(seed)
    chunks = []
    w = arch.layer_widths
    for l in range(1, len(w)):
        bound = math.sqrt(6.0 / (w[l - 1] + w[l]))
        chunks.append(rng.uniform(-bound, bound, size=w[l] * w[l - 1]))
        chunks.append(np.zeros(w[l]))
    return np.concatenate(chunks)


def mlp_model(arch: MlpArch, seed: int, envelope_radius: float | None = None) -> ParamModel:
    return ParamModel(ModelKind.MLP, arch, init_params(arch, seed), envelope_radius=envelope_radius, seed=seed)


def rbf_model(centers: Sequence[Sequence[float]] | np.ndarray, m: float, coeffs: Sequence[float]) -> ParamModel:
    arch = RbfArch(np.atleast_2d(np.asarray(centers, dtype=float)).reshape(len(coeffs), -1), float(m))
    return ParamModel(ModelKind.GAUSSIAN_RBF, arch, np.asarray(coeffs, dtype=float))


def analytic_model(fn: AnalyticFunction) -> ParamModel:
    return ParamModel(ModelKind.ANALYTIC, None, np.zeros(0), analytic=fn)


def embed_arch(small: ParamModel, big_arch: MlpArch, seed: int | None = None) -> ParamModel:
    """Zero-padded copy of ``small`` in ``big_arch`` with the same realization.

    With a ``seed`` the added units get Glorot-uniform incoming weights instead of
    zeros. Existing units never read them and the output layer stays padded, so
    the realization is unchanged but the new units receive gradient when trained.

    Only widths may grow: ``big_arch.contains(small.arch, same_depth=True)`` must
    hold. A deeper target is nested but has no exact zero-padded embedding for a
    general activation, so it raises :class:`InputError`.
    """
    if small.kind is not ModelKind.MLP:
        raise InputError("only MLP models can be embedded")
    arch = small.arch
    if big_arch.contains(arch) and big_arch.depth != arch.depth:
        raise InputError(
            f"exact embedding across depths is not available for {arch.activation.value} networks"
        )
    if not big_arch.contains(arch, same_depth=True):
        raise InputError(f"{arch.describe()} is not contained in {big_arch.describe()}")
    if big_arch.activation is not arch.activation:
        raise InputError("embedding requires the same activation")

    rng = None if seed is None else make_rng(seed)
    chunks = []
    for (weights, biases, n_in, n_out), (_, _, big_in, big_out) in zip(
        _layers(arch, small.theta), _layers(big_arch, np.zeros(big_arch.param_count)), strict=True
    ):
        w = np.zeros((big_out, big_in))
        if rng is not None and big_out > n_out:
            bound = math.sqrt(6.0 / (big_in + big_out))
            w[n_out:, :] = rng.uniform(-bound, bound, size=(big_out - n_out, big_in))
        w[:n_out, :n_in] = np.asarray(weights).reshape(n_out, n_in)
        b = np.zeros(big_out)
        b[:n_out] = biases
        chunks.extend([w.ravel(), b])
    _LOGGER.debug("Embedded %s into %s", arch.describe(), big_arch.describe())
    return replace(small, arch=big_arch, theta=np.concatenate(chunks))


def unit_path_norm_family(count: int, width: int, seed: int) -> list[ParamModel]:
    """Two-layer tanh networks on R, rescaled so Σ_j |v_j|(|w_j| + |b_j|) = 1."""
    arch = MlpArch((1, width, 1), Activation.TANH)
    family = []
    for k in range(count):
        rng = make_rng(seed, stream=k)
        w = rng.normal(size=width)
        b = rng.normal(size=width)
        v = rng.normal(size=width)
        path = float(np.sum(np.abs(v) * (np.abs(w) + np.abs(b))))
        theta = np.concatenate([w, b, v / path, [0.0]])
        family.append(ParamModel(ModelKind.MLP, arch, theta, seed=seed, metadata={"member": k}))
    return family


def sample_rbf_member(m: float, rng: np.random.Generator, max_terms: int = 8, span: float = 2.0) -> ParamModel:
    """Random member of G_{n,m} with centers in [−span/2, span/2], spaced more than 1/m apart."""
    fit = math.floor(span * m / 1.01) + 1
    cap = max(1, min(max_terms, fit, math.floor(math.exp(m * m))))
    n = int(rng.integers(1, cap + 1))
    slack = span - (n - 1) * 1.01 / m
    spread = rng.random(n + 1)
    spread = slack * rng.random() * spread / spread.sum()
    gaps = 1.01 / m + spread[1:n]
    centers = -0.5 * span + spread[0] + np.concatenate([[0.0], np.cumsum(gaps)])
    coeffs = rng.normal(size=n)
    return rbf_model(centers.reshape(-1, 1), m, coeffs)


# ====== 检查点 ====== #
def checkpoint_payload(model: ParamModel) -> dict[str, Any]:
    if model.kind is ModelKind.ANALYTIC:
        raise InputError("closed-form models have no parameters to checkpoint")
    if isinstance(model.arch, MlpArch):
        arch = {"layer_widths": list(model.arch.layer_widths), "activation": model.arch.activation.value}
    else:
        arch = {"centers": [[format_float(c) for c in row] for row in model.arch.centers], "m": model.arch.m}
    return {
        "kind": model.kind.value,
        "arch": arch,
        "theta": [format_float(t) for t in model.theta],
        "seed": model.seed,
        "metadata": {**model.metadata, "envelope_radius": model.envelope_radius},
    }


def save_checkpoint(model: ParamModel, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(checkpoint_payload(model), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path: Path) -> ParamModel:
    payload = json.loads(path.read_text(encoding="utf-8"))
    kind = ModelKind(payload["kind"])
    theta = np.array([float(t) for t in payload["theta"]])
    metadata = dict(payload.get("metadata") or {})
    envelope = metadata.pop("envelope_radius", None)
    if kind is ModelKind.MLP:
        arch: MlpArch | RbfArch = MlpArch(tuple(payload["arch"]["layer_widths"]), payload["arch"]["activation"])
    else:
        centers = np.array([[float(c) for c in row] for row in payload["arch"]["centers"]])
        arch = RbfArch(centers, float(payload["arch"]["m"]))
    return ParamModel(kind, arch, theta, envelope_radius=envelope, seed=payload.get("seed"), metadata=metadata)


def hessian_entry(jet: Jet2, i: int, j: int) -> Any:
    return jet.d2[tri_index(i, j, jet.dim)]
