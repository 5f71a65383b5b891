"""Dense arrays, seeded sampling, a recording tape for reverse-mode
differentiation, and Adam.

Every backward rule is written in terms of recorded operations. Asking
:func:`grad` for ``create_graph=True`` therefore leaves the gradient itself on
the tape, where it can be differentiated again. The gradient penalty of a
Wasserstein critic needs exactly this: the parameter gradient of a norm of an
input gradient.

Arrays are plain :class:`numpy.ndarray` objects wrapped in :class:`Tensor`.
A tensor is recorded on a :class:`Tape` when it is a watched leaf or when any
of its inputs is recorded; everything else is a constant and costs nothing
beyond the numpy call.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64


class UnrecordedLeafError(ValueError):
    """A requested leaf or output is not recorded on the tape in use."""


class ShapeError(ValueError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator from a 64-bit seed.

    PCG64 and numpy's normal/uniform transforms are platform independent, so
    equal seeds give equal streams everywhere for a fixed numpy version.
    """
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def derive_rng(seed: int, *tags: int | str) -> np.random.Generator:
    """Independent PCG64 stream for ``seed`` and a path of tags."""
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for t in tags:
        words.append(zlib.crc32(t.encode()) if isinstance(t, str) else int(t))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(words)))


def sample_gaussian(n: int, dim: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> np.ndarray:
    if n < 1 or dim < 1:
        raise ValueError(f"sample_gaussian needs n >= 1 and dim >= 1, got n={n}, dim={dim}")
    return rng.standard_normal((n, dim)).astype(dtype, copy=False)


def sample_uniform01(n: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> np.ndarray:
    if n < 1:
        raise ValueError(f"sample_uniform01 needs n >= 1, got n={n}")
    return rng.random(n).astype(dtype, copy=False)


# --------------------------------------------------------------------------
# Tensors and the tape


class Tensor:
    __slots__ = ("value", "parents", "fn", "vjp", "tape", "index", "name")

    def __init__(self, value, parents=(), fn=None, vjp=None, tape=None, name=None):
        self.value = value
        self.parents = parents
        self.fn = fn
        self.vjp = vjp
        self.tape = tape
        self.index = -1
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def recorded(self) -> bool:
        return self.tape is not None

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.value

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        kind = "leaf" if self.recorded and self.fn is None else ("node" if self.recorded else "const")
        return f"Tensor({kind}, shape={self.shape}, name={self.name!r})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


class Tape:
    """Ordered record of operations.

    Nodes are appended in creation order, which is a topological order; a
    gradient computed with ``create_graph=True`` appends its own nodes after
    the forward nodes it depends on.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def _record(self, t: Tensor) -> Tensor:
        t.tape = self
        t.index = len(self.nodes)
        self.nodes.append(t)
        return t

    def watch(self, value, name: str | None = None) -> Tensor:
        """Record ``value`` as a leaf. Arrays are wrapped without copying."""
        if isinstance(value, Tensor):
            value = value.value
        value = np.asarray(value)
        if value.dtype.kind != "f":
            value = value.astype(DEFAULT_DTYPE)
        return self._record(Tensor(value, name=name))

    def watch_all(self, params: dict[str, np.ndarray], prefix: str = "") -> dict[str, Tensor]:
        return {k: self.watch(v, name=prefix + k) for k, v in params.items()}

    def __len__(self) -> int:
        return len(self.nodes)

    def replay(self) -> list[np.ndarray]:
        """Recompute every node from its leaves, in tape order."""
        out: list[np.ndarray] = []
        for node in self.nodes:
            if node.fn is None:
                out.append(node.value)
                continue
            args = [out[p.index] if p.tape is self else p.value for p in node.parents]
            out.append(node.fn(*args))
        return out


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.value.dtype if like is not None else None
    arr = np.asarray(x, dtype=dtype)
    if arr.dtype.kind != "f":
        arr = arr.astype(DEFAULT_DTYPE)
    return Tensor(arr)


def constant(x) -> Tensor:
    return Tensor(np.asarray(x))


def _apply(fn: Callable, vjp: Callable, *inputs: Tensor) -> Tensor:
    value = fn(*(t.value for t in inputs))
    tape = None
    for t in inputs:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise ValueError("operands are recorded on different tapes")
            tape = t.tape
    if tape is None:
        return Tensor(value)
    return tape._record(Tensor(value, inputs, fn, vjp))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        b = as_tensor(b)
        a = as_tensor(a, b)
    elif not isinstance(b, Tensor):
        b = as_tensor(b, a)
    return a, b


# --------------------------------------------------------------------------
# Primitive operations. vjp(g, inputs, out, need) returns one cotangent per
# input; entries whose ``need`` flag is False may be None.


def _sum_to_np(a: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if a.shape == shape:
        return a
    lead = a.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and a.shape[i + lead] != 1
    )
    return a.sum(axis=axes, keepdims=True).reshape(shape)


def sum_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    if x.shape == shape:
        return x
    return _apply(
        lambda a: _sum_to_np(a, shape),
        lambda g, ins, out, need: (broadcast_to(g, ins[0].shape),),
        x,
    )


def broadcast_to(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    if x.shape == shape:
        return x
    return _apply(
        lambda a: np.broadcast_to(a, shape),
        lambda g, ins, out, need: (sum_to(g, ins[0].shape),),
        x,
    )


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _apply(
        np.add,
        lambda g, ins, out, need: (
            sum_to(g, ins[0].shape) if need[0] else None,
            sum_to(g, ins[1].shape) if need[1] else None,
        ),
        a,
        b,
    )


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _apply(
        np.subtract,
        lambda g, ins, out, need: (
            sum_to(g, ins[0].shape) if need[0] else None,
            sum_to(neg(g), ins[1].shape) if need[1] else None,
        ),
        a,
        b,
    )


def neg(a: Tensor) -> Tensor:
    return _apply(np.negative, lambda g, ins, out, need: (neg(g),), a)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _apply(
        np.multiply,
        lambda g, ins, out, need: (
            sum_to(mul(g, ins[1]), ins[0].shape) if need[0] else None,
            sum_to(mul(g, ins[0]), ins[1].shape) if need[1] else None,
        ),
        a,
        b,
    )


def div(a, b) -> Tensor:
    a, b = _pair(a, b)

    def vjp(g, ins, out, need):
        x, y = ins
        ga = sum_to(div(g, y), x.shape) if need[0] else None
        gb = sum_to(neg(mul(g, div(out, y))), y.shape) if need[1] else None
        return ga, gb

    return _apply(np.divide, vjp, a, b)


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return _apply(
        np.matmul,
        lambda g, ins, out, need: (
            matmul(g, transpose(ins[1])) if need[0] else None,
            matmul(transpose(ins[0]), g) if need[1] else None,
        ),
        a,
        b,
    )


def transpose(a: Tensor) -> Tensor:
    return _apply(np.transpose, lambda g, ins, out, need: (transpose(g),), a)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if a.shape == tuple(shape):
        return a
    return _apply(
        lambda x: np.reshape(x, shape),
        lambda g, ins, out, need: (reshape(g, ins[0].shape),),
        a,
    )


def sum_(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    def vjp(g, ins, out, need):
        shape = ins[0].shape
        if axis is None:
            g = reshape(g, (1,) * len(shape))
        elif not keepdims:
            kept = list(shape)
            kept[axis] = 1
            g = reshape(g, tuple(kept))
        return (broadcast_to(g, shape),)

    return _apply(lambda x: np.sum(x, axis=axis, keepdims=keepdims), vjp, a)


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.value.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def square(a: Tensor) -> Tensor:
    return _apply(np.square, lambda g, ins, out, need: (mul(g, mul(ins[0], 2.0)),), a)


def sqrt(a: Tensor) -> Tensor:
    return _apply(np.sqrt, lambda g, ins, out, need: (div(mul(g, 0.5), out),), a)


def exp(a: Tensor) -> Tensor:
    return _apply(np.exp, lambda g, ins, out, need: (mul(g, out),), a)


def log(a: Tensor) -> Tensor:
    return _apply(np.log, lambda g, ins, out, need: (div(g, ins[0]),), a)


def abs_(a: Tensor) -> Tensor:
    # d|x|/dx taken as sign(x), with 0 at x = 0
    return _apply(
        np.abs,
        lambda g, ins, out, need: (mul(g, constant(np.sign(ins[0].value))),),
        a,
    )


def relu(a: Tensor) -> Tensor:
    return _apply(
        lambda x: np.maximum(x, 0.0),
        lambda g, ins, out, need: (mul(g, constant((ins[0].value > 0).astype(ins[0].dtype))),),
        a,
    )


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    if not 0 <= slope < 1:
        raise ValueError(f"leaky_relu slope must lie in [0, 1), got {slope}")

    def fn(x):
        return np.maximum(x, slope * x)

    def vjp(g, ins, out, need):
        x = ins[0].value
        m = (x > 0).astype(x.dtype)
        m *= 1.0 - slope
        m += slope
        return (mul(g, constant(m)),)

    return _apply(fn, vjp, a)


def concat_cols(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols row mismatch: {a.shape} vs {b.shape}")
    na = a.shape[1]
    nb = b.shape[1]
    return _apply(
        lambda x, y: np.concatenate([x, y], axis=1),
        lambda g, ins, out, need: (
            take_cols(g, 0, na) if need[0] else None,
            take_cols(g, na, na + nb) if need[1] else None,
        ),
        a,
        b,
    )


def take_cols(a: Tensor, start: int, stop: int) -> Tensor:
    width = a.shape[1]
    return _apply(
        lambda x: x[:, start:stop],
        lambda g, ins, out, need: (pad_cols(g, start, width),),
        a,
    )


def pad_cols(a: Tensor, start: int, width: int) -> Tensor:
    stop = start + a.shape[1]

    def fn(x):
        out = np.zeros((x.shape[0], width), dtype=x.dtype)
        out[:, start:stop] = x
        return out

    return _apply(fn, lambda g, ins, out, need: (take_cols(g, start, stop),), a)


def row_norm(a: Tensor) -> Tensor:
    """Euclidean norm of each row, shape (n, 1).

    The derivative at a zero row is taken as zero (a valid subgradient), so a
    constant function yields a finite penalty gradient.
    """

    def fn(x):
        return np.sqrt(np.sum(x * x, axis=1, keepdims=True))

    def vjp(g, ins, out, need):
        safe = constant(np.where(out.value > 0, out.value, 1.0))
        mask = constant((out.value > 0).astype(out.dtype))
        # out is recorded when create_graph is on; divide by it only where nonzero
        denom = add(mul(out, mask), sub(safe, mul(safe, mask)))
        return (mul(ins[0], div(mul(g, mask), denom)),)

    return _apply(fn, vjp, a)


def log_softmax(a: Tensor) -> Tensor:
    def fn(x):
        shifted = x - np.max(x, axis=1, keepdims=True)
        return shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))

    def vjp(g, ins, out, need):
        return (sub(g, mul(exp(out), sum_(g, axis=1, keepdims=True))),)

    return _apply(fn, vjp, a)


# --------------------------------------------------------------------------
# Differentiation


def grad(
    tape: Tape,
    scalar: Tensor,
    leaves: Sequence[Tensor],
    create_graph: bool = False,
) -> list[Tensor]:
    """Reverse-mode gradients of ``scalar`` with respect to each leaf.

    Leaves that do not influence ``scalar`` get a zero array. With
    ``create_graph`` the returned gradients are recorded on ``tape``.
    """
    if scalar.tape is not tape:
        raise UnrecordedLeafError("output is not recorded on this tape")
    if scalar.value.size != 1:
        raise ShapeError(f"grad needs a single-element output, got shape {scalar.shape}")
    for leaf in leaves:
        if leaf.tape is not tape:
            raise UnrecordedLeafError(f"leaf {leaf.name or leaf!r} is not recorded on this tape")

    wanted = {leaf.index for leaf in leaves}
    lo = min(wanted, default=scalar.index + 1)
    nodes = tape.nodes
    # nodes on a path from some wanted leaf
    live = set(i for i in wanted if i <= scalar.index)
    for i in range(lo, scalar.index + 1):
        node = nodes[i]
        if node.fn is not None and any(p.tape is tape and p.index in live for p in node.parents):
            live.add(i)

    cot: dict[int, Tensor] = {}
    if scalar.index in live:
        cot[scalar.index] = Tensor(np.ones_like(scalar.value))
    found: dict[int, Tensor] = {}
    for i in range(scalar.index, lo - 1, -1):
        g = cot.pop(i, None)
        if g is None:
            continue
        node = nodes[i]
        if i in wanted:
            found[i] = g
        if node.fn is None:
            continue
        parents = node.parents
        need = tuple(p.tape is tape and p.index in live for p in parents)
        if create_graph:
            ins, out = parents, node
        else:
            g = Tensor(g.value)
            ins = tuple(Tensor(p.value) for p in parents)
            out = Tensor(node.value)
        pgs = node.vjp(g, ins, out, need)
        for p, n, pg in zip(parents, need, pgs):
            if not n:
                continue
            if not create_graph and pg.tape is not None:
                pg = Tensor(pg.value)
            prev = cot.get(p.index)
            cot[p.index] = pg if prev is None else add(prev, pg)

    result = []
    for leaf in leaves:
        g = found.get(leaf.index)
        if g is None:
            g = Tensor(np.zeros_like(leaf.value))
        elif g.shape != leaf.shape:
            g = Tensor(np.array(np.broadcast_to(g.value, leaf.shape))) if not g.recorded else broadcast_to(g, leaf.shape)
        elif not g.recorded and not g.value.flags.writeable:
            g = Tensor(np.array(g.value))
        result.append(g)
    return result


def input_gradient(tape: Tape, output: Tensor, x: Tensor) -> Tensor:
    """Per-row gradient of a row-wise network output with respect to its input.

    ``output`` must have one row per input row, each row depending only on the
    matching input row; the gradient of the summed output then splits row by
    row. The result is recorded on the tape.
    """
    if output.tape is not tape or x.tape is not tape:
        raise UnrecordedLeafError("input_gradient needs output and input recorded on the tape")
    return grad(tape, sum_(output), [x], create_graph=True)[0]


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for k in self.m:
            out[f"m/{k}"] = self.m[k]
            out[f"v/{k}"] = self.v[k]
        return out


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if set(params) != set(grads):
        raise ShapeError(f"parameter/gradient keys differ: {sorted(set(params) ^ set(grads))}")
    for k, p in params.items():
        if grads[k].shape != p.shape:
            raise ShapeError(f"gradient for {k!r} has shape {grads[k].shape}, parameter {p.shape}")
        if k in state.m and state.m[k].shape != p.shape:
            raise ShapeError(f"Adam moments for {k!r} have shape {state.m[k].shape}, parameter {p.shape}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for k, p in params.items():
        g = grads[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
