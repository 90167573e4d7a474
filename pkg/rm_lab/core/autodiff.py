"""Reverse-mode tape over float64 scalars.

A node's value is either a Python/NumPy scalar or a 1-D array holding one scalar
per sample point. Every primitive except ``sum`` and ``matvec`` acts elementwise,
so broadcasting a parameter (shape ``()``) against a batch of points is the only
place shapes differ; the reverse sweep sums the adjoint back down to the operand
shape there.

The module-level functions (``exp``, ``tanh``, ...) dispatch on their argument:
a :class:`Var` is recorded on its tape, anything else is evaluated with NumPy.
Jet arithmetic in :mod:`rm_lab.core.jets` is written against these functions
so the same code runs taped or untaped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np
from scipy.special import expit

from .const import Primitive
from .error import InputError, JetDomainError, NumericError, TapeReplayError

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

_LOGGER = logging.getLogger(__name__)

type Number = float | np.ndarray | Var
# built-in primitives are enum members; extensions register under a plain name
type PrimitiveKey = Primitive | str


# ---------------- 原语注册表 ---------------- #
@dataclass(frozen=True)
class ReverseRule:
    """Forward map and local partials of one primitive.

    ``partials(out, *args, **params)`` returns one entry per operand; the entry is
    multiplied elementwise with the consumer's adjoint unless ``pullback`` is set.
    """

    forward: Callable[..., Any]
    partials: Callable[..., tuple[Any, ...]]
    pullback: Callable[[Any, Any, tuple[int, ...]], Any] | None = None
    check: Callable[..., None] | None = None


def _check_div(_a: Any, b: Any, **_: Any) -> None:
    if np.any(np.asarray(b) == 0.0):
        raise JetDomainError("division by zero", value=0.0)


def _check_nonneg(a: Any, **_: Any) -> None:
    arr = np.asarray(a)
    if np.any(arr < 0.0):
        raise JetDomainError("sqrt of a negative value", value=float(np.min(arr)))


def _check_positive(a: Any, **_: Any) -> None:
    arr = np.asarray(a)
    if np.any(arr <= 0.0):
        raise JetDomainError("log of a non-positive value", value=float(np.min(arr)))


def _check_pow(a: Any, exponent: float = 1.0, **_: Any) -> None:
    arr = np.asarray(a)
    if float(exponent).is_integer():
        if exponent < 0 and np.any(arr == 0.0):
            raise JetDomainError("negative power of zero", value=0.0)
        return
    if np.any(arr < 0.0):
        raise JetDomainError("fractional power of a negative value", value=float(np.min(arr)))
    if exponent < 1.0 and np.any(arr == 0.0):
        raise JetDomainError("fractional power below one at zero", value=0.0)


def _sum_pullback(adj: Any, _partial: Any, shape: tuple[int, ...]) -> Any:
    return np.broadcast_to(adj, shape).copy() if shape else adj


def _matvec_pullback(adj: Any, matrix: Any, _shape: tuple[int, ...]) -> Any:
    return matrix.T @ adj


REVERSE_RULES: dict[PrimitiveKey, ReverseRule] = {
    Primitive.ADD: ReverseRule(lambda a, b: a + b, lambda out, a, b: (1.0, 1.0)),
    Primitive.SUB: ReverseRule(lambda a, b: a - b, lambda out, a, b: (1.0, -1.0)),
    Primitive.MUL: ReverseRule(lambda a, b: a * b, lambda out, a, b: (b, a)),
    Primitive.DIV: ReverseRule(
        lambda a, b: a / b,
        lambda out, a, b: (1.0 / b, -out / b),
        check=_check_div,
    ),
    Primitive.NEG: ReverseRule(lambda a: -a, lambda out, a: (-1.0,)),
    Primitive.POW: ReverseRule(
        lambda a, exponent: a**exponent,
        lambda out, a, exponent: (exponent * a ** (exponent - 1.0),),
        check=_check_pow,
    ),
    Primitive.EXP: ReverseRule(np.exp, lambda out, a: (out,)),
    Primitive.LOG: ReverseRule(np.log, lambda out, a: (1.0 / a,), check=_check_positive),
    Primitive.TANH: ReverseRule(np.tanh, lambda out, a: (1.0 - out * out,)),
    Primitive.SIN: ReverseRule(np.sin, lambda out, a: (np.cos(a),)),
    Primitive.COS: ReverseRule(np.cos, lambda out, a: (-np.sin(a),)),
    Primitive.SQRT: ReverseRule(np.sqrt, lambda out, a: (0.5 / out,), check=_check_nonneg),
    Primitive.SIGMOID: ReverseRule(expit, lambda out, a: (out * (1.0 - out),)),
    Primitive.SOFTPLUS: ReverseRule(lambda a: np.logaddexp(0.0, a), lambda out, a: (expit(a),)),
    Primitive.SUM: ReverseRule(np.sum, lambda out, a: (None,), pullback=_sum_pullback),
    Primitive.MATVEC: ReverseRule(
        lambda a, matrix: matrix @ a,
        lambda out, a, matrix: (matrix,),
        pullback=_matvec_pullback,
    ),
}


def register_primitive(op: PrimitiveKey, rule: ReverseRule) -> None:
    """Add or replace a reverse-level primitive; new activations register under a fresh name."""
    REVERSE_RULES[op] = rule
    _LOGGER.debug("Registered reverse primitive %s", getattr(op, "value", op))


# ---------------- Tape ---------------- #
@dataclass(slots=True)
class Node:
    op: PrimitiveKey | None  # None marks a leaf or a constant
    operands: tuple[int, ...]
    partials: tuple[Any, ...]
    value: Any
    params: dict[str, Any] | None = None
    is_param: bool = False


@dataclass
class Tape:
    """Append-only record of primitive evaluations, topologically ordered by construction."""

    nodes: list[Node] = field(default_factory=list)
    outputs: list[int] = field(default_factory=list)

    def leaf(self, value: float | np.ndarray) -> Var:
        stored = np.float64(value) if np.ndim(value) == 0 else value
        self.nodes.append(Node(None, (), (), stored, is_param=True))
        return Var(self, len(self.nodes) - 1)

    def constant(self, value: float | np.ndarray) -> Var:
        self.nodes.append(Node(None, (), (), value))
        return Var(self, len(self.nodes) - 1)

    def record(self, op: PrimitiveKey, operands: Sequence[Var], **params: Any) -> Var:
        try:
            rule = REVERSE_RULES[op]
        except KeyError as exc:
            raise InputError(f"unknown primitive {op!r}") from exc
        args = [self.nodes[v.index].value for v in operands]
        if rule.check is not None:
            rule.check(*args, **params)
        with np.errstate(all="ignore"):
            out = rule.forward(*args, **params)
            partials = rule.partials(out, *args, **params)
        self.nodes.append(
            Node(op, tuple(v.index for v in operands), partials, out, params or None)
        )
        return Var(self, len(self.nodes) - 1)

    def backward(self, output: Var) -> list[Any]:
        """Reverse sweep from ``output``; returns adjoints indexed by node (None if unreached)."""
        if output.tape is not self:
            raise InputError("output belongs to another tape")
        self.outputs.append(output.index)
        adjoints: list[Any] = [None] * len(self.nodes)
        adjoints[output.index] = np.ones_like(self.nodes[output.index].value, dtype=float)
        rules = REVERSE_RULES

        for index in range(output.index, -1, -1):
            adj = adjoints[index]
            node = self.nodes[index]
            if adj is None or node.op is None:
                continue
            pullback = rules[node.op].pullback
            for operand, partial in zip(node.operands, node.partials, strict=True):
                shape = np.shape(self.nodes[operand].value)
                if pullback is not None:
                    contrib = pullback(adj, partial, shape)
                else:
                    contrib = _unbroadcast(adj * partial, shape)
                current = adjoints[operand]
                adjoints[operand] = contrib if current is None else current + contrib
        return adjoints

    def replay(self, leaf_values: Sequence[Any]) -> list[Any]:
        """Recompute every node from its record, feeding ``leaf_values`` to the parameter leaves."""
        values: list[Any] = []
        leaves = iter(leaf_values)
        for node in self.nodes:
            if node.op is None:
                values.append(next(leaves) if node.is_param else node.value)
                continue
            args = [values[i] for i in node.operands]
            with np.errstate(all="ignore"):
                values.append(REVERSE_RULES[node.op].forward(*args, **(node.params or {})))
        return values


def _unbroadcast(grad: Any, shape: tuple[int, ...]) -> Any:
    if np.shape(grad) == shape:
        return grad
    grad = np.asarray(grad)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------- 带追踪的标量 ---------------- #
class Var:
    """Handle to one tape node."""

    __slots__ = ("index", "tape")
    __array_ufunc__ = None  # ndarray <op> Var defers to the reflected Var method

    def __init__(self, tape: Tape, index: int) -> None:
        self.tape = tape
        self.index = index

    @property
    def value(self) -> Any:
        return self.tape.nodes[self.index].value

    @property
    def shape(self) -> tuple[int, ...]:
        return np.shape(self.value)

    def __repr__(self) -> str:
        return f"Var(#{self.index}, {self.value!r})"

    def _lift(self, other: Any) -> Var | None:
        if isinstance(other, Var):
            if other.tape is not self.tape:
                raise InputError("operands belong to different tapes")
            return other
        if isinstance(other, float | int | np.ndarray | np.generic):
            return self.tape.constant(other)
        return None  # jets and other containers handle the reflected operation

    def _binary(self, op: Primitive, other: Any, *, reflected: bool = False) -> Any:
        lifted = self._lift(other)
        if lifted is None:
            return NotImplemented
        operands = (lifted, self) if reflected else (self, lifted)
        return self.tape.record(op, operands)

    def __add__(self, other: Any) -> Var:
        return self._binary(Primitive.ADD, other)

    def __radd__(self, other: Any) -> Var:
        return self._binary(Primitive.ADD, other, reflected=True)

    def __sub__(self, other: Any) -> Var:
        return self._binary(Primitive.SUB, other)

    def __rsub__(self, other: Any) -> Var:
        return self._binary(Primitive.SUB, other, reflected=True)

    def __mul__(self, other: Any) -> Var:
        return self._binary(Primitive.MUL, other)

    def __rmul__(self, other: Any) -> Var:
        return self._binary(Primitive.MUL, other, reflected=True)

    def __truediv__(self, other: Any) -> Var:
        return self._binary(Primitive.DIV, other)

    def __rtruediv__(self, other: Any) -> Var:
        return self._binary(Primitive.DIV, other, reflected=True)

    def __neg__(self) -> Var:
        return self.tape.record(Primitive.NEG, (self,))

    def __pow__(self, exponent: float) -> Var:
        if isinstance(exponent, Var):
            raise InputError("pow supports constant exponents only")
        return self.tape.record(Primitive.POW, (self,), exponent=float(exponent))


# ---------------- 分发函数 ---------------- #
def _unary(op: Primitive, x: Number) -> Number:
    if isinstance(x, Var):
        return x.tape.record(op, (x,))
    rule = REVERSE_RULES[op]
    if rule.check is not None:
        rule.check(x)
    return rule.forward(x)


def apply_primitive(op: PrimitiveKey, *operands: Number, **params: Any) -> Number:
    """Evaluate any registered primitive, recording it when an operand is taped."""
    tape = next((x.tape for x in operands if isinstance(x, Var)), None)
    if tape is not None:
        lifted = [x if isinstance(x, Var) else tape.constant(x) for x in operands]
        return tape.record(op, lifted, **params)
    try:
        rule = REVERSE_RULES[op]
    except KeyError as exc:
        raise InputError(f"unknown primitive {op!r}") from exc
    if rule.check is not None:
        rule.check(*operands, **params)
    return rule.forward(*operands, **params)


def exp(x: Number) -> Number:
    return _unary(Primitive.EXP, x)


def log(x: Number) -> Number:
    return _unary(Primitive.LOG, x)


def tanh(x: Number) -> Number:
    return _unary(Primitive.TANH, x)


def sin(x: Number) -> Number:
    return _unary(Primitive.SIN, x)


def cos(x: Number) -> Number:
    return _unary(Primitive.COS, x)


def sqrt(x: Number) -> Number:
    return _unary(Primitive.SQRT, x)


def sigmoid(x: Number) -> Number:
    return _unary(Primitive.SIGMOID, x)


def softplus(x: Number) -> Number:
    return _unary(Primitive.SOFTPLUS, x)


def power(x: Number, exponent: float) -> Number:
    if exponent == 0.0:
        return 1.0
    if exponent == 1.0:
        return x
    if isinstance(x, Var):
        return x**exponent
    _check_pow(x, exponent=exponent)
    return np.power(x, exponent)


def total(x: Number) -> Number:
    """Sum over the sample axis."""
    if isinstance(x, Var):
        return x.tape.record(Primitive.SUM, (x,))
    return np.sum(x)


def matvec(matrix: np.ndarray, x: Number) -> Number:
    """Apply a constant matrix to a batch vector."""
    if isinstance(x, Var):
        return x.tape.record(Primitive.MATVEC, (x,), matrix=matrix)
    return matrix @ x


def value_of(x: Number) -> Any:
    return x.value if isinstance(x, Var) else x


def is_zero(x: Any) -> bool:
    """True only for literal scalar zeros, the entries jets carry for vanishing derivatives."""
    return isinstance(x, float | int) and x == 0


# ---------------- 参数梯度 ---------------- #
def grad_params(
    loss_builder: Callable[[list[Var]], Number],
    theta: Sequence[float] | np.ndarray,
    *,
    check_replay: bool = False,
) -> tuple[float, np.ndarray]:
    """Evaluate ``loss_builder`` on taped parameters and return (loss, dloss/dtheta)."""
    tape = Tape()
    params = [tape.leaf(float(t)) for t in theta]
    loss = loss_builder(params)

    if not isinstance(loss, Var):
        value = float(np.asarray(loss))
        _LOGGER.debug("Loss does not depend on parameters (value=%s)", value)
        return value, np.zeros(len(params))
    if loss.shape != ():
        raise InputError(f"loss must be a scalar, got shape {loss.shape}")

    value = float(loss.value)
    if not np.isfinite(value):
        raise NumericError(f"non-finite loss {value}", index=loss.index)

    adjoints = tape.backward(loss)
    grad = np.array(
        [0.0 if adjoints[p.index] is None else float(adjoints[p.index]) for p in params]
    )
    bad = np.flatnonzero(~np.isfinite(grad))
    if bad.size:
        node = params[int(bad[0])].index
        raise NumericError(f"non-finite gradient entry {int(bad[0])}", index=node)

    if check_replay:
        replayed = tape.replay([tape.nodes[p.index].value for p in params])
        for index, (node, again) in enumerate(zip(tape.nodes, replayed, strict=True)):
            if not np.array_equal(node.value, again, equal_nan=True):
                raise TapeReplayError(f"node {index} ({node.op}) diverged on replay", index=index)

    _LOGGER.debug("Tape with %d nodes, loss=%s", len(tape.nodes), value)
    return value, grad
