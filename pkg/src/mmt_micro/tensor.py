"""Dense float tensors with a define-by-run reverse-mode differentiation tape.

Data lives in numpy arrays, float32 by default. Building tensors from
float64 arrays keeps float64 end to end, which the gradient-check harness
uses for tight finite-difference comparisons (see ``gradcheck``).

Recording is scoped: operations executed inside a ``with Tape() as tape:``
block append backward records; outside any tape they are plain numpy
computations (used for decoding and evaluation).
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError

DEFAULT_DTYPE = np.float32

_UNARY_KINDS = ("tanh", "sigmoid", "relu")


class Tensor:
    """A dense n-dimensional array plus an optional gradient buffer.

    ``requires_grad`` marks leaves (parameters) whose gradients should be
    accumulated; it propagates automatically to results of recorded ops.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # arithmetic sugar; scalars are plain python floats
    def __add__(self, other):
        return add(self, _as_tensor(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        raise TypeError("tensor division only supports scalar divisors")

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)


def _as_tensor(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.data.dtype))


class Tape:
    """Ordered record of operations for one forward pass.

    Records are appended in execution order, so inputs of any record always
    precede it; ``backward`` walks the list once in reverse. An optional
    ``rng`` provides randomness to ops (dropout) recorded on this tape.
    """

    def __init__(self, rng: "Rng | None" = None):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], object]] = []
        self.rng = rng

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPE_STACK.pop()

    def __len__(self) -> int:
        return len(self.records)


_TAPE_STACK: list[Tape] = []


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.records.append((out, inputs, backward_fn))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate reverse-mode gradients of a scalar ``loss`` into ``.grad``.

    Every tensor reachable from ``loss`` on ``tape`` with ``requires_grad``
    receives its exact gradient; unreachable ones are left untouched (their
    gradient is zero by convention, see ``zero_grads``).
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    loss.grad = np.ones_like(loss.data)
    for out, inputs, backward_fn in reversed(tape.records):
        g = out.grad
        if g is None:
            continue
        grads = backward_fn(g)
        for inp, gin in zip(inputs, grads):
            if gin is None or not inp.requires_grad:
                continue
            if inp.grad is None:
                # fresh buffer: backward functions may return views/aliases
                inp.grad = np.zeros_like(inp.data)
            inp.grad += gin


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, inverting numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _record(out, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * a.data.dtype.type(s))

    def bwd(g):
        return (g * s,)

    return _record(out, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product; gradients are g @ bT and aT @ g."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul expects (m,k) @ (k,n), got {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _record(out, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got shape {a.shape}")
    out = Tensor(a.data.T)

    def bwd(g):
        return (g.T,)

    return _record(out, (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))

    def bwd(g):
        return (g.reshape(a.shape),)

    return _record(out, (a,), bwd)


def broadcast_to(a: Tensor, shape) -> Tensor:
    out = Tensor(np.broadcast_to(a.data, shape))

    def bwd(g):
        return (_unbroadcast(g, a.shape),)

    return _record(out, (a,), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    """Concatenate along ``axis``; the backward pass splits the gradient."""
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of an empty tensor list")
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(
            o != b for i, (o, b) in enumerate(zip(other, base)) if i != axis
        ):
            raise ShapeError(
                f"concat extents disagree off axis {axis}: {tensors[0].shape} vs {t.shape}"
            )
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    offsets = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bwd(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _record(out, tuple(tensors), bwd)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _record(out, (a,), bwd)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    return scale(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y)

    def bwd(g):
        return (g * (1.0 - y * y),)

    return _record(out, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    # split by sign to avoid overflow in exp
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    y = y.astype(d.dtype)
    out = Tensor(y)

    def bwd(g):
        return (g * y * (1.0 - y),)

    return _record(out, (x,), bwd)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0))

    def bwd(g):
        return (g * (x.data > 0),)

    return _record(out, (x,), bwd)


def apply_unary(kind: str, x: Tensor) -> Tensor:
    """Elementwise nonlinearity dispatch; ``kind`` is tanh, sigmoid, or relu."""
    if kind == "tanh":
        return tanh(x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "relu":
        return relu(x)
    raise ConfigError(f"unknown unary kind {kind!r}, expected one of {_UNARY_KINDS}")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along ``axis`` (max-subtracted)."""
    if axis >= x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for shape {x.shape}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record(out, (x,), bwd)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = Tensor(y)

    def bwd(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return _record(out, (x,), bwd)


def l2_normalize(x: Tensor, axis: int, eps: float = 1e-8) -> Tensor:
    """Scale slices along ``axis`` to unit L2 norm.

    The denominator is max(norm, eps), so near-zero slices pass through
    scaled by 1/eps-guard instead of dividing by zero.
    """
    if axis >= x.ndim:
        raise ShapeError(f"l2_normalize axis {axis} out of range for shape {x.shape}")
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    denom = np.maximum(norm, x.data.dtype.type(eps))
    y = x.data / denom
    out = Tensor(y)

    def bwd(g):
        # below the guard the denominator is a constant, so only the direct
        # 1/denom term survives there
        active = norm > eps
        dot = (g * x.data).sum(axis=axis, keepdims=True)
        return (g / denom - np.where(active, x.data * dot / denom**3, 0.0),)

    return _record(out, (x,), bwd)


def dropout(x: Tensor, p: float, rng: "Rng | None" = None, training: bool = True) -> Tensor:
    """Inverted dropout: zero with probability ``p`` and scale survivors by
    1/(1-p) during training; identity in eval mode."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        tape = active_tape()
        rng = tape.rng if tape is not None else None
    if rng is None:
        raise ConfigError("dropout in training mode needs an rng (argument or tape.rng)")
    keep = (rng.uniform(x.shape) >= p).astype(x.data.dtype)
    mask = keep / x.data.dtype.type(1.0 - p)
    out = Tensor(x.data * mask)

    def bwd(g):
        return (g * mask,)

    return _record(out, (x,), bwd)


def embedding(weight: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``weight[ids]``; the backward pass scatter-adds into the table."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= weight.shape[0]):
        raise ShapeError(
            f"embedding index out of range: ids in [{ids.min()}, {ids.max()}] "
            f"for table of {weight.shape[0]} rows"
        )
    out = Tensor(weight.data[ids])

    def bwd(g):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, ids, g)
        return (gw,)

    return _record(out, (weight,), bwd)


def gather_rows(a: Tensor, ids: np.ndarray) -> Tensor:
    """Select rows ``a[ids]`` of a 2-D tensor; backward scatter-adds."""
    if a.ndim != 2:
        raise ShapeError(f"gather_rows expects a 2-D tensor, got shape {a.shape}")
    return embedding(a, ids)


def gather_last(a: Tensor, ids: np.ndarray) -> Tensor:
    """Pick one entry per row of a 2-D tensor: out[i] = a[i, ids[i]]."""
    if a.ndim != 2:
        raise ShapeError(f"gather_last expects a 2-D tensor, got shape {a.shape}")
    ids = np.asarray(ids)
    rows = np.arange(a.shape[0])
    out = Tensor(a.data[rows, ids])

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (rows, ids), g)
        return (ga,)

    return _record(out, (a,), bwd)


def global_norm_clip(grads, c: float) -> float:
    """Rescale a collection of gradient buffers so their joint L2 norm is at
    most ``c``; returns the applied scale factor.

    Accepts Tensors (clips ``.grad`` in place) or raw numpy arrays.
    """
    if c <= 0:
        raise ConfigError(f"clip norm must be positive, got {c}")
    buffers = []
    total = 0.0
    for g in grads:
        buf = g.grad if isinstance(g, Tensor) else g
        if buf is None:
            continue
        buffers.append(buf)
        total += float((buf.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if norm <= c or norm == 0.0:
        return 1.0
    factor = c / norm
    for buf in buffers:
        buf *= buf.dtype.type(factor)
    return factor


class Rng:
    """Seeded, portable pseudorandom stream (Philox counter-based generator).

    The same (seed, stream) pair reproduces the identical sequence on any
    platform. ``state`` round-trips through plain ints for checkpointing.
    """

    ALGORITHM = "philox4x64"

    def __init__(self, seed: int = 0, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self._gen = np.random.Generator(
            np.random.Philox(np.random.SeedSequence([self.seed, self.stream]))
        )

    def uniform(self, shape=None) -> np.ndarray:
        return self._gen.random(shape, dtype=np.float64)

    def normal(self, shape=None, std: float = 1.0) -> np.ndarray:
        return self._gen.standard_normal(shape, dtype=np.float64) * std

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, options, size=None, replace: bool = True):
        return self._gen.choice(options, size=size, replace=replace)

    @property
    def state(self) -> dict:
        raw = self._gen.bit_generator.state
        return {
            "algorithm": self.ALGORITHM,
            "seed": self.seed,
            "stream": self.stream,
            "counter": [int(v) for v in raw["state"]["counter"]],
            "key": [int(v) for v in raw["state"]["key"]],
            "buffer": [int(v) for v in raw["buffer"]],
            "buffer_pos": int(raw["buffer_pos"]),
            "has_uint32": int(raw["has_uint32"]),
            "uinteger": int(raw["uinteger"]),
        }

    @state.setter
    def state(self, value: dict) -> None:
        if value.get("algorithm") != self.ALGORITHM:
            raise ConfigError(f"rng state algorithm mismatch: {value.get('algorithm')!r}")
        self.seed = int(value["seed"])
        self.stream = int(value["stream"])
        raw = self._gen.bit_generator.state
        raw["state"]["counter"] = np.array(value["counter"], dtype=np.uint64)
        raw["state"]["key"] = np.array(value["key"], dtype=np.uint64)
        raw["buffer"] = np.array(value["buffer"], dtype=np.uint64)
        raw["buffer_pos"] = int(value["buffer_pos"])
        raw["has_uint32"] = int(value["has_uint32"])
        raw["uinteger"] = int(value["uinteger"])
        self._gen.bit_generator.state = raw

    @classmethod
    def from_state(cls, value: dict) -> "Rng":
        rng = cls(value["seed"], value["stream"])
        rng.state = value
        return rng
