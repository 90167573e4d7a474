"""Second-order forward jets.

A :class:`Jet2` carries a value with its gradient and the upper triangle of its
Hessian in the spatial variables. Components are plain floats, NumPy arrays over
a batch of points, or taped :class:`~rm_lab.core.autodiff.Var` objects; vanishing
derivatives are stored as the literal ``0.0`` so they cost nothing downstream.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Protocol

import numpy as np

from . import autodiff as ad
from .const import Primitive
from .error import InputError, JetDomainError

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from .autodiff import Number, PrimitiveKey

_LOGGER = logging.getLogger(__name__)


def tri_index(i: int, j: int, d: int) -> int:
    """Position of entry (i, j), i <= j, in the row-major upper triangle."""
    if i > j:
        i, j = j, i
    return i * d - i * (i - 1) // 2 + (j - i)


# ---------- 零值感知的算术 ---------- #
def _add(a: Number, b: Number) -> Number:
    if ad.is_zero(a):
        return b
    if ad.is_zero(b):
        return a
    return a + b


def _sub(a: Number, b: Number) -> Number:
    if ad.is_zero(b):
        return a
    if ad.is_zero(a):
        return -b
    return a - b


def _mul(a: Number, b: Number) -> Number:
    if ad.is_zero(a) or ad.is_zero(b):
        return 0.0
    if isinstance(a, float | int) and a == 1:
        return b
    if isinstance(b, float | int) and b == 1:
        return a
    return a * b


@dataclass(frozen=True, slots=True)
class Jet2:
    value: Any
    d1: tuple[Any, ...]
    d2: tuple[Any, ...]  # upper triangle, row-major

    @property
    def dim(self) -> int:
        return len(self.d1)

    @classmethod
    def constant(cls, value: Number, d: int) -> Jet2:
        return cls(value, (0.0,) * d, (0.0,) * (d * (d + 1) // 2))

    def hess(self, i: int, j: int) -> Any:
        return self.d2[tri_index(i, j, self.dim)]

    def laplacian(self) -> Number:
        out: Number = 0.0
        for i in range(self.dim):
            out = _add(out, self.hess(i, i))
        return out

    def hessian_matrix(self) -> np.ndarray:
        """Full Hessian for untaped jets, shape (d, d, ...)."""
        d = self.dim
        shape = np.broadcast_shapes(*(np.shape(c) for c in self.d2))
        out = np.empty((d, d, *shape))
        for i in range(d):
            for j in range(d):
                out[i, j] = self.hess(i, j)
        return out

    def untaped(self) -> Jet2:
        """Copy with every taped component replaced by its recorded value."""
        return Jet2(
            ad.value_of(self.value),
            tuple(ad.value_of(c) for c in self.d1),
            tuple(ad.value_of(c) for c in self.d2),
        )

    # ---- arithmetic; non-jet operands are constants in space ---- #
    def _coerce(self, other: Any) -> Jet2:
        if isinstance(other, Jet2):
            if other.dim != self.dim:
                raise InputError(f"jet dimension mismatch: {self.dim} vs {other.dim}")
            return other
        return Jet2.constant(other, self.dim)

    def __add__(self, other: Any) -> Jet2:
        if not isinstance(other, Jet2):
            return Jet2(_add(self.value, other), self.d1, self.d2)
        other = self._coerce(other)
        return Jet2(
            _add(self.value, other.value),
            tuple(_add(a, b) for a, b in zip(self.d1, other.d1, strict=True)),
            tuple(_add(a, b) for a, b in zip(self.d2, other.d2, strict=True)),
        )

    __radd__ = __add__

    def __neg__(self) -> Jet2:
        return Jet2(
            _mul(-1.0, self.value),
            tuple(_mul(-1.0, c) for c in self.d1),
            tuple(_mul(-1.0, c) for c in self.d2),
        )

    def __sub__(self, other: Any) -> Jet2:
        if not isinstance(other, Jet2):
            return Jet2(_sub(self.value, other), self.d1, self.d2)
        return self + (-self._coerce(other))

    def __rsub__(self, other: Any) -> Jet2:
        return (-self) + other

    def __mul__(self, other: Any) -> Jet2:
        if not isinstance(other, Jet2):
            return Jet2(
                _mul(self.value, other),
                tuple(_mul(c, other) for c in self.d1),
                tuple(_mul(c, other) for c in self.d2),
            )
        other = self._coerce(other)
        d = self.dim
        u, v = self.value, other.value
        d1 = tuple(_add(_mul(u, vi), _mul(v, ui)) for ui, vi in zip(self.d1, other.d1, strict=True))
        d2 = []
        for i in range(d):
            for j in range(i, d):
                k = tri_index(i, j, d)
                entry = _add(_mul(u, other.d2[k]), _mul(v, self.d2[k]))
                entry = _add(entry, _mul(self.d1[i], other.d1[j]))
                entry = _add(entry, _mul(self.d1[j], other.d1[i]))
                d2.append(entry)
        return Jet2(_mul(u, v), d1, tuple(d2))

    __rmul__ = __mul__

    def __truediv__(self, other: Any) -> Jet2:
        if not isinstance(other, Jet2):
            _check_nonzero(other)
            return self * (1.0 / other)
        return self * reciprocal(other)

    def __rtruediv__(self, other: Any) -> Jet2:
        return reciprocal(self) * other

    def __pow__(self, exponent: float) -> Jet2:
        return power(self, exponent)


def _check_nonzero(value: Any) -> None:
    arr = np.asarray(ad.value_of(value))
    if np.any(arr == 0.0):
        raise JetDomainError("division by zero", value=0.0)


# ---------------- 一元链式法则 ---------------- #
def chain(u: Jet2, g0: Number, g1: Number, g2: Number) -> Jet2:
    """Compose a scalar function with value/first/second derivative (g0, g1, g2) at u.value."""
    d = u.dim
    d1 = tuple(_mul(g1, ui) for ui in u.d1)
    d2 = []
    for i in range(d):
        for j in range(i, d):
            k = tri_index(i, j, d)
            d2.append(_add(_mul(g1, u.d2[k]), _mul(g2, _mul(u.d1[i], u.d1[j]))))
    return Jet2(g0, d1, tuple(d2))


def exp(u: Jet2) -> Jet2:
    e = ad.exp(u.value)
    return chain(u, e, e, e)


def log(u: Jet2) -> Jet2:
    g1 = 1.0 / _domain_positive(u.value, "log")
    return chain(u, ad.log(u.value), g1, -(g1 * g1))


def tanh(u: Jet2) -> Jet2:
    t = ad.tanh(u.value)
    g1 = 1.0 - t * t
    return chain(u, t, g1, -2.0 * t * g1)


def sin(u: Jet2) -> Jet2:
    s, c = ad.sin(u.value), ad.cos(u.value)
    return chain(u, s, c, -s)


def cos(u: Jet2) -> Jet2:
    s, c = ad.sin(u.value), ad.cos(u.value)
    return chain(u, c, -s, -c)


def sqrt(u: Jet2) -> Jet2:
    root = ad.sqrt(_domain_positive(u.value, "sqrt"))
    g1 = 0.5 / root
    return chain(u, root, g1, -0.5 * g1 / u.value)


def softplus(u: Jet2) -> Jet2:
    s = ad.sigmoid(u.value)
    return chain(u, ad.softplus(u.value), s, s * (1.0 - s))


def reciprocal(u: Jet2) -> Jet2:
    _check_nonzero(u.value)
    r = 1.0 / u.value
    r2 = r * r
    return chain(u, r, -r2, 2.0 * r2 * r)


def power(u: Jet2, exponent: float) -> Jet2:
    k = float(exponent)
    if k == 0.0:
        return Jet2.constant(1.0, u.dim)
    if k == 1.0:
        return u
    if k == 2.0:
        return u * u
    g0 = ad.power(u.value, k)
    g1 = k * ad.power(u.value, k - 1.0)
    g2 = k * (k - 1.0) * ad.power(u.value, k - 2.0)
    return chain(u, g0, g1, g2)


def abs_smooth(u: Jet2, kappa: float = 1e-12) -> Jet2:
    """sqrt(u² + κ²), a differentiable stand-in for |u|."""
    return sqrt(u * u + kappa * kappa)


def pos_pow(u: Jet2, exponent: float) -> Jet2:
    """(max(u, 0))**exponent for untaped jets; derivatives vanish where u <= 0."""
    if isinstance(u.value, ad.Var):
        raise InputError("pos_pow is defined for untaped jets only")
    s = np.asarray(u.value, dtype=float)
    inside = s > 0.0
    base = np.where(inside, s, 1.0)
    a = float(exponent)
    g0 = np.where(inside, base**a, 0.0)
    g1 = np.where(inside, a * base ** (a - 1.0), 0.0)
    g2 = np.where(inside, a * (a - 1.0) * base ** (a - 2.0), 0.0)
    if np.ndim(u.value) == 0:
        g0, g1, g2 = float(g0), float(g1), float(g2)
    return chain(u, g0, g1, g2)


def _domain_positive(value: Number, name: str) -> Number:
    arr = np.asarray(ad.value_of(value))
    if np.any(arr <= 0.0):
        bad = float(np.min(arr))
        raise JetDomainError(f"{name} jet needs a positive argument, got {bad}", value=bad)
    return value


JET_RULES: dict[PrimitiveKey, Callable[..., Jet2]] = {
    Primitive.ADD: lambda a, b: a + b,
    Primitive.SUB: lambda a, b: a - b,
    Primitive.MUL: lambda a, b: a * b,
    Primitive.DIV: lambda a, b: a / b,
    Primitive.POW: power,
    Primitive.EXP: exp,
    Primitive.LOG: log,
    Primitive.TANH: tanh,
    Primitive.SIN: sin,
    Primitive.COS: cos,
    Primitive.SQRT: sqrt,
    Primitive.SOFTPLUS: softplus,
    Primitive.ABS_SMOOTH: abs_smooth,
    Primitive.POS_POW: pos_pow,
}

_ARITY: dict[PrimitiveKey, int] = {Primitive.ADD: 2, Primitive.SUB: 2, Primitive.MUL: 2, Primitive.DIV: 2}


def register_jet_primitive(op: PrimitiveKey, rule: Callable[..., Jet2], arity: int = 1) -> None:
    """Register a jet-level primitive; ``rule`` must supply its first two derivatives via :func:`chain`."""
    JET_RULES[op] = rule
    _ARITY[op] = arity


def jet_apply(op: PrimitiveKey, args: Sequence[Jet2], **params: Any) -> Jet2:
    # str-valued enum members hash like their names, so "tanh" finds Primitive.TANH
    rule = JET_RULES.get(op)
    if rule is None:
        raise InputError(f"unknown jet primitive {op!r}")
    name = getattr(op, "value", op)
    arity = _ARITY.get(op, 1)
    if len(args) != arity:
        raise InputError(f"{name} takes {arity} argument(s), got {len(args)}")
    return rule(*args, **params)


def jet_seed(x: float | np.ndarray, axis: int | None = None, d: int | None = None) -> Jet2:
    """Coordinate seed (unit first derivative on ``axis``) or constant when axis is None.

    ``x`` is a scalar, a point of length d, or a batch of points of shape (M, d).
    """
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        dim = 1 if d is None else d
        value: Any = float(arr)
    else:
        dim = arr.shape[-1] if d is None else d
        if arr.shape[-1] != dim:
            raise InputError(f"point has {arr.shape[-1]} coordinates, expected {dim}")
        if axis is None:
            raise InputError("a constant seed takes a scalar value")
        if not 0 <= axis < dim:
            raise InputError(f"axis {axis} out of range for d={dim}")
        value = arr[..., axis] if arr.ndim > 1 else float(arr[axis])
    if axis is None:
        return Jet2.constant(value, dim)
    if not 0 <= axis < dim:
        raise InputError(f"axis {axis} out of range for d={dim}")
    d1 = tuple(1.0 if i == axis else 0.0 for i in range(dim))
    return Jet2(value, d1, (0.0,) * (dim * (dim + 1) // 2))


def seed_coordinates(points: np.ndarray) -> list[Jet2]:
    points = as_points(points)
    return [jet_seed(points, axis) for axis in range(points.shape[1])]


def as_points(x: Any, d: int | None = None) -> np.ndarray:
    """Normalize a point, a batch of points, or 1-D coordinates to shape (M, d)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if d in (None, 1) else arr.reshape(1, -1)
    if d is not None and arr.shape[1] != d:
        raise InputError(f"points have dimension {arr.shape[1]}, expected {d}")
    return arr


# ---------------- 可求值对象 ---------------- #
class Evaluable(Protocol):
    """Anything that returns jets (and values) of a scalar field at a batch of points."""

    dim: int

    def jet(self, points: np.ndarray) -> Jet2: ...

    def value(self, points: np.ndarray) -> Any: ...


class AnalyticFunction:
    """Closed-form field written in jet arithmetic: ``fn(coords) -> Jet2 | number``."""

    def __init__(self, fn: Callable[[list[Jet2]], Jet2 | float], dim: int = 1, name: str = "") -> None:
        self.fn = fn
        self.dim = dim
        self.name = name or getattr(fn, "__name__", "analytic")

    def __repr__(self) -> str:
        return f"AnalyticFunction({self.name!r}, d={self.dim})"

    def jet(self, points: np.ndarray) -> Jet2:
        pts = as_points(points, self.dim)
        out = self.fn(seed_coordinates(pts))
        if not isinstance(out, Jet2):
            out = Jet2.constant(np.full(pts.shape[0], float(out)), self.dim)
        elif np.ndim(out.value) == 0:
            out = out + np.zeros(pts.shape[0])
        return out

    def value(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(self.jet(points).value, dtype=float)


def constant_field(c: float, dim: int = 1) -> AnalyticFunction:
    return AnalyticFunction(lambda _x: c, dim, name=f"const({c})")

