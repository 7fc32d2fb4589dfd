"""Dense float tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array (float32 by default) plus an optional
gradient buffer.  Operations executed while a :class:`Tape` is active are
recorded so that :meth:`Tape.backward` can populate ``grad`` on every tensor
with ``requires_grad=True``.  Tapes are rebuilt per forward pass and are
confined to a single thread.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Optional, Sequence

import numpy as np

EPS_NORM = 1e-8


class Tensor:
    """Dense multi-dimensional float array with an optional gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def copy(self) -> "Tensor":
        t = Tensor(self.data.copy(), requires_grad=self.requires_grad,
                   dtype=self.data.dtype)
        return t

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class _TapeStack(threading.local):
    def __init__(self):
        self.stack = []


_TAPES = _TapeStack()


def _current_tape() -> Optional["Tape"]:
    return _TAPES.stack[-1] if _TAPES.stack else None


class Tape:
    """Ordered record of operations for one forward pass.

    Every recorded entry keeps references to its input/output tensors and a
    backward rule.  Entries are appended in execution order, so a reverse
    sweep visits them in valid reverse-topological order.
    """

    def __init__(self):
        self._entries: list[tuple[list[Tensor], Tensor, Callable]] = []
        self._live: set[int] = set()

    def __enter__(self) -> "Tape":
        _TAPES.stack.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPES.stack.pop()
        assert popped is self

    def _is_live(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._live

    def record(self, inputs: Sequence[Tensor], output: Tensor,
               backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]):
        self._entries.append((list(inputs), output, backward_fn))
        self._live.add(id(output))

    def backward(self, loss: Tensor):
        """Populate ``grad`` on every requires_grad tensor reachable from ``loss``."""
        if loss.size != 1:
            raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for inputs, output, backward_fn in reversed(self._entries):
            g_out = grads.get(id(output))
            if g_out is None:
                continue
            g_ins = backward_fn(g_out)
            for t, g in zip(inputs, g_ins):
                if g is None or not self._is_live(t):
                    continue
                acc = grads.get(id(t))
                grads[id(t)] = g.astype(t.data.dtype, copy=False) if acc is None else acc + g
            # seen tensors stay in `grads` so that diamond patterns accumulate
        seen: dict[int, Tensor] = {}
        for inputs, output, _ in self._entries:
            for t in inputs:
                if t.requires_grad and id(t) in grads:
                    seen[id(t)] = t
        if loss.requires_grad:
            seen[id(loss)] = loss
        for tid, t in seen.items():
            g = grads[tid]
            t.grad = g.copy() if t.grad is None else t.grad + g


def _maybe_record(inputs: Sequence[Tensor], out: Tensor, backward_fn) -> Tensor:
    tape = _current_tape()
    if tape is not None and any(tape._is_live(t) for t in inputs):
        tape.record(inputs, out, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gs, s) in enumerate(zip(g.shape, shape)):
        if s == 1 and gs != 1:
            g = g.sum(axis=i, keepdims=True)
    return g.reshape(shape)


def _check_nonempty(name: str, *ts: Tensor):
    for t in ts:
        if t.size == 0:
            raise ValueError(f"{name}: empty tensor operand")


# ---------------------------------------------------------------------------
# elementwise / linear algebra


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_nonempty("add", a, b)
    try:
        out = Tensor(a.data + b.data, dtype=np.result_type(a.dtype, b.dtype))
    except ValueError:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return _maybe_record(
        [a, b], out,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_nonempty("sub", a, b)
    try:
        out = Tensor(a.data - b.data, dtype=np.result_type(a.dtype, b.dtype))
    except ValueError:
        raise ValueError(f"sub: shape mismatch {a.shape} vs {b.shape}")
    return _maybe_record(
        [a, b], out,
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_nonempty("mul", a, b)
    try:
        out = Tensor(a.data * b.data, dtype=np.result_type(a.dtype, b.dtype))
    except ValueError:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    return _maybe_record(
        [a, b], out,
        lambda g: (_unbroadcast(g * b.data, a.shape),
                   _unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, s: float) -> Tensor:
    _check_nonempty("scale", a)
    out = Tensor(a.data * s, dtype=a.dtype)
    return _maybe_record([a], out, lambda g: (g * s,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; supports stacked (batched) operands via np.matmul."""
    _check_nonempty("matmul", a, b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ValueError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(np.matmul(a.data, b.data),
                 dtype=np.result_type(a.dtype, b.dtype))

    def backward(g):
        if a.ndim == 1 and b.ndim == 1:
            return g * b.data, g * a.data
        if b.ndim == 1:
            ga = np.expand_dims(g, -1) * b.data
            gb = np.matmul(np.swapaxes(a.data, -1, -2),
                           np.expand_dims(g, -1))[..., 0]
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
        if a.ndim == 1:
            ga = np.matmul(np.expand_dims(g, -2),
                           np.swapaxes(b.data, -1, -2))[..., 0, :]
            gb = np.matmul(np.expand_dims(a.data, -1), np.expand_dims(g, -2))
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _maybe_record([a, b], out, backward)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    out = Tensor(np.transpose(a.data, axes), dtype=a.dtype)
    inv = np.argsort(axes)
    return _maybe_record([a], out, lambda g: (np.transpose(g, inv),))


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), dtype=a.dtype)
    return _maybe_record([a], out, lambda g: (g.reshape(a.shape),))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ValueError("concat: no operands")
    _check_nonempty("concat", *parts)
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis),
                 dtype=parts[0].dtype)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _maybe_record(list(parts), out, backward)


def slice_(a: Tensor, key) -> Tensor:
    out = Tensor(a.data[key], dtype=a.dtype)

    def backward(g):
        ga = np.zeros_like(a.data)
        ga[key] = g
        return (ga,)

    return _maybe_record([a], out, backward)


def mean(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    _check_nonempty("mean", a)
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims), dtype=a.dtype)
    n = a.size if axis is None else a.shape[axis]

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape) / n,)

    return _maybe_record([a], out, backward)


def sum_(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    _check_nonempty("sum", a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), dtype=a.dtype)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).astype(a.dtype),)

    return _maybe_record([a], out, backward)


def abs_(a: Tensor) -> Tensor:
    out = Tensor(np.abs(a.data), dtype=a.dtype)
    return _maybe_record([a], out, lambda g: (g * np.sign(a.data),))


# ---------------------------------------------------------------------------
# neural-net primitives


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    _check_nonempty("gelu", a)
    inv_sqrt2 = 1.0 / math.sqrt(2.0)
    erf = _erf(a.data * inv_sqrt2)
    out = Tensor(0.5 * a.data * (1.0 + erf), dtype=a.dtype)

    def backward(g):
        pdf = np.exp(-0.5 * a.data.astype(np.float64) ** 2) / math.sqrt(2 * math.pi)
        d = 0.5 * (1.0 + erf) + a.data * pdf
        return (g * d.astype(a.dtype),)

    return _maybe_record([a], out, backward)


def _erf(x: np.ndarray) -> np.ndarray:
    try:
        from scipy.special import erf as _serf  # vectorized, exact
        return _serf(x).astype(x.dtype)
    except ImportError:  # pragma: no cover
        return np.vectorize(math.erf)(x).astype(x.dtype)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply elementwise gain and bias."""
    _check_nonempty("layer_norm", a)
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv
    out = Tensor(xhat * gain.data + bias.data, dtype=a.dtype)
    n = a.shape[-1]

    def backward(g):
        gxhat = g * gain.data
        ga = inv * (gxhat
                    - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        ggain = _unbroadcast(g * xhat, gain.shape)
        gbias = _unbroadcast(g, bias.shape)
        return ga.astype(a.dtype), ggain, gbias

    return _maybe_record([a, gain, bias], out, backward)


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    _check_nonempty("softmax", a)
    x = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(x)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y, dtype=a.dtype)

    def backward(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _maybe_record([a], out, backward)


def l2_normalize(a: Tensor, eps: float = EPS_NORM) -> Tensor:
    """Scale rows (last axis) to unit L2 norm, with an epsilon guard."""
    _check_nonempty("l2_normalize", a)
    n = np.sqrt((a.data.astype(np.float64) ** 2).sum(axis=-1, keepdims=True))
    d = n + eps
    y = a.data / d
    out = Tensor(y, dtype=a.dtype)

    def backward(g):
        gd = g / d
        proj = (g * a.data).sum(axis=-1, keepdims=True)
        safe_n = np.maximum(n, 1e-30)
        ga = gd - a.data * (proj / (safe_n * d * d))
        return (ga.astype(a.dtype),)

    return _maybe_record([a], out, backward)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity of two vectors, differentiable w.r.t. both."""
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ValueError(f"cosine_similarity: shape mismatch {a.shape} vs {b.shape}")
    _check_nonempty("cosine_similarity", a, b)
    return sum_(mul(l2_normalize(a), l2_normalize(b)))


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    """−log softmax(logits)[target] for a single C-way logit vector."""
    if logits.ndim != 1 or logits.shape[0] < 2:
        raise ValueError(f"cross_entropy: need a logit vector with C >= 2, got {logits.shape}")
    if not 0 <= target < logits.shape[0]:
        raise ValueError(f"cross_entropy: target {target} out of range for C={logits.shape[0]}")
    x = logits.data.astype(np.float64)
    m = x.max()
    lse = m + np.log(np.exp(x - m).sum())
    out = Tensor(lse - x[target], dtype=logits.dtype)

    def backward(g):
        p = np.exp(x - lse)
        p[target] -= 1.0
        return (g * p.astype(logits.dtype),)

    return _maybe_record([logits], out, backward)


def softmax_cross_entropy_rows(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean over rows of −log softmax(logits_row)[label_row]."""
    if logits.ndim != 2:
        raise ValueError(f"softmax_cross_entropy_rows: need [B, C] logits, got {logits.shape}")
    labels = np.asarray(labels)
    B, C = logits.shape
    if labels.shape != (B,):
        raise ValueError(f"softmax_cross_entropy_rows: labels shape {labels.shape} != ({B},)")
    if labels.min() < 0 or labels.max() >= C:
        raise ValueError(f"softmax_cross_entropy_rows: label out of range for C={C}")
    x = logits.data.astype(np.float64)
    m = x.max(axis=-1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=-1))
    rows = np.arange(B)
    out = Tensor((lse - x[rows, labels]).mean(), dtype=logits.dtype)

    def backward(g):
        p = np.exp(x - lse[:, None])
        p[rows, labels] -= 1.0
        return (g * p.astype(logits.dtype) / B,)

    return _maybe_record([logits], out, backward)


def topk_mean(scores: Tensor, k: int, axis: int) -> Tensor:
    """Mean of the k largest entries along ``axis``; ties go to the lower index.

    Gradient flows only through the selected entries (hard mask).
    """
    _check_nonempty("topk_mean", scores)
    n = scores.shape[axis]
    if not 1 <= k <= n:
        raise ValueError(f"topk_mean: k={k} out of range for axis size {n}")
    order = np.argsort(-scores.data, axis=axis, kind="stable")
    top = np.take(order, np.arange(k), axis=axis)
    mask = np.zeros(scores.shape, dtype=scores.dtype)
    np.put_along_axis(mask, top, 1.0, axis=axis)
    out = Tensor((scores.data * mask).sum(axis=axis) / k, dtype=scores.dtype)

    def backward(g):
        return (np.expand_dims(g, axis) * mask / k,)

    return _maybe_record([scores], out, backward)


# ---------------------------------------------------------------------------
# verification oracle


def finite_difference_grad(f: Callable[[Tensor], float], x: Tensor,
                           h: float = 1e-3) -> Tensor:
    """Central finite differences of a scalar-valued function, per element."""
    if h <= 0:
        raise ValueError("finite_difference_grad: h must be positive")
    flat = x.data.reshape(-1)
    g = np.zeros(flat.shape, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = _scalar(f, x)
        flat[i] = orig - h
        fm = _scalar(f, x)
        flat[i] = orig
        g[i] = (fp - fm) / (2.0 * h)
    return Tensor(g.reshape(x.shape), dtype=x.dtype)


def _scalar(f, x) -> float:
    v = f(x)
    v = v.item() if isinstance(v, Tensor) else float(v)
    if not math.isfinite(v):
        raise ValueError("finite_difference_grad: function returned non-finite value")
    return v
