"""Dense tensors with reverse-mode automatic differentiation.

Every trainable operation in this package is assembled from the closed set
of primitives defined here.  A :class:`Tensor` wraps a contiguous numpy
buffer in the active numeric mode (float32 for training, float64 for
gradient verification); each primitive records the operation that produced
its output, and :func:`backward` replays the recorded tape in reverse to
populate ``grad`` buffers on every ancestor that requires gradients.

Broadcasting is deliberately restricted: binary ops accept equal shapes, a
1-D vector over the last axis (bias add / per-feature scale), or a
single-element tensor (scalar scale).  This keeps every backward rule short
enough to audit by eye.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erf

from .errors import ParameterError, ShapeError, LengthError

_ACTIVE_DTYPE = np.dtype(np.float32)

COSINE_EPS = 1e-8
NORM_EPS = 1e-5


def active_dtype() -> np.dtype:
    """Dtype new tensors are created with (float32 unless verifying)."""
    return _ACTIVE_DTYPE


@contextlib.contextmanager
def use_dtype(name: str):
    """Switch the numeric mode, e.g. ``with use_dtype("float64"): ...``."""
    global _ACTIVE_DTYPE
    dt = np.dtype(name)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ParameterError(f"unsupported numeric mode {name!r}")
    prev = _ACTIVE_DTYPE
    _ACTIVE_DTYPE = dt
    try:
        yield
    finally:
        _ACTIVE_DTYPE = prev


def _as_buffer(a) -> np.ndarray:
    # np.ascontiguousarray would promote 0-d scalars to 1-d; keep ranks intact
    a = np.asarray(a)
    return a if a.flags["C_CONTIGUOUS"] else np.ascontiguousarray(a)


class Tensor:
    """A dense n-d array, optionally participating in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_buffer(np.asarray(data, dtype=_ACTIVE_DTYPE))
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.op: Optional[TapeOp] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out.op = None
        return out

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


@dataclass
class TapeOp:
    """One recorded operation: inputs, output, and its backward rule.

    ``backward`` maps the gradient at the output to one gradient array per
    input (``None`` for inputs that need none).
    """

    name: str
    inputs: tuple
    output: "Tensor"
    backward: Callable[[np.ndarray], tuple]


@dataclass
class Tape:
    """Operations in topological order (inputs always precede consumers)."""

    ops: list = field(default_factory=list)

    @classmethod
    def trace(cls, root: "Tensor") -> "Tape":
        """Collect the recorded history of ``root``, each op exactly once."""
        ops: list[TapeOp] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if t.op is None:
                continue
            if expanded:
                ops.append(t.op)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for parent in t.op.inputs:
                stack.append((parent, False))
        return cls(ops)


def _wrap(name: str, data: np.ndarray, inputs: tuple, backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = _as_buffer(data)
    out.requires_grad = any(t.requires_grad for t in inputs)
    out.grad = None
    out.op = TapeOp(name, inputs, out, backward) if out.requires_grad else None
    return out


def _check_same_dtype(name: str, *tensors: Tensor):
    dts = {t.data.dtype for t in tensors}
    if len(dts) > 1:
        raise ShapeError(f"{name}: mixed dtypes {sorted(str(d) for d in dts)}; "
                         "all operands must be created under one numeric mode")


def backward(root: Tensor) -> None:
    """Populate ``grad`` on every requires-grad ancestor of a scalar root.

    Gradients accumulate additively across fan-out and across repeated
    calls; callers zero parameter grads between optimizer steps.  Leaf
    tensors always own their grad buffer outright; flowing buffers are
    never mutated in place, so intermediate grads may share storage with
    the arrays the backward rules returned.
    """
    if root.data.size != 1:
        raise ShapeError(f"backward root must be scalar, got shape {root.data.shape}")
    if not root.requires_grad:
        return
    tape = Tape.trace(root)
    flowing: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    holders: dict[int, Tensor] = {id(root): root}
    for op in reversed(tape.ops):
        g = flowing.get(id(op.output))
        if g is None:
            continue
        for parent, pg in zip(op.inputs, op.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pid = id(parent)
            if pid in flowing:
                flowing[pid] = flowing[pid] + pg
            else:
                flowing[pid] = pg
                holders[pid] = parent
    assigned: set[int] = set()
    for pid, g in flowing.items():
        t = holders[pid]
        if t.grad is not None:
            t.grad = t.grad + g
        elif t.op is None or id(g) in assigned:
            t.grad = np.array(g, copy=True)
        else:
            t.grad = g
            assigned.add(id(g))


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.data.shape} @ {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.data.shape} @ {b.data.shape}")
    _check_same_dtype("matmul", a, b)

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _wrap("matmul", a.data @ b.data, (a, b), bwd)


def transpose(x: Tensor) -> Tensor:
    """Swap the two axes of a matrix."""
    if x.data.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got {x.data.shape}")

    def bwd(g):
        return (g.T,)

    return _wrap("transpose", x.data.T, (x,), bwd)


def add(a: Tensor, b) -> Tensor:
    """Elementwise sum; ``b`` may also be a last-axis vector or a number."""
    if not isinstance(b, Tensor):
        c = float(b)

        def bwd_const(g):
            return (g,)

        return _wrap("add", a.data + c, (a,), bwd_const)

    _check_same_dtype("add", a, b)
    if a.data.shape == b.data.shape:
        def bwd_same(g):
            return g, g

        return _wrap("add", a.data + b.data, (a, b), bwd_same)
    if b.data.ndim == 1 and a.data.ndim >= 1 and a.data.shape[-1] == b.data.shape[0]:
        def bwd_bias(g):
            return g, g.reshape(-1, b.data.shape[0]).sum(axis=0)

        return _wrap("add", a.data + b.data, (a, b), bwd_bias)
    if b.data.size == 1:
        def bwd_scalar(g):
            return g, g.sum().reshape(b.data.shape)

        return _wrap("add", a.data + b.data.reshape(()), (a, b), bwd_scalar)
    raise ShapeError(f"add shapes do not conform: {a.data.shape} + {b.data.shape}")


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; ``b`` may also be a single-element tensor or a number."""
    if not isinstance(b, Tensor):
        c = float(b)

        def bwd_const(g):
            return (g * c,)

        return _wrap("mul", a.data * c, (a,), bwd_const)

    _check_same_dtype("mul", a, b)
    if a.data.shape == b.data.shape:
        def bwd_same(g):
            return g * b.data, g * a.data

        return _wrap("mul", a.data * b.data, (a, b), bwd_same)
    if b.data.size == 1:
        def bwd_scalar(g):
            return g * b.data.reshape(()), (g * a.data).sum().reshape(b.data.shape)

        return _wrap("mul", a.data * b.data.reshape(()), (a, b), bwd_scalar)
    if b.data.ndim == 1 and a.data.ndim >= 1 and a.data.shape[-1] == b.data.shape[0]:
        def bwd_vec(g):
            return g * b.data, (g * a.data).reshape(-1, b.data.shape[0]).sum(axis=0)

        return _wrap("mul", a.data * b.data, (a, b), bwd_vec)
    raise ShapeError(f"mul shapes do not conform: {a.data.shape} * {b.data.shape}")


def conv1d(x: Tensor, w: Tensor, stride: int, groups: int = 1) -> Tensor:
    """Valid (no padding) 1-D convolution.

    ``x`` is (C_in, T), ``w`` is (C_out, C_in // groups, K); output is
    (C_out, T_out) with T_out = floor((T - K) / stride) + 1.
    """
    if x.data.ndim != 2 or w.data.ndim != 3:
        raise ShapeError(f"conv1d expects x (C,T) and w (O,I,K), got {x.data.shape}, {w.data.shape}")
    _check_same_dtype("conv1d", x, w)
    c_in, t = x.data.shape
    c_out, c_in_g, k = w.data.shape
    if stride < 1:
        raise ParameterError(f"conv1d stride must be >= 1, got {stride}")
    if groups < 1 or c_in % groups or c_out % groups:
        raise ShapeError(f"conv1d groups={groups} does not divide channels ({c_in} in, {c_out} out)")
    if c_in_g != c_in // groups:
        raise ShapeError(f"conv1d weight expects {c_in // groups} input channels per group, got {c_in_g}")
    if t < k:
        raise LengthError(f"conv1d input length {t} is shorter than kernel {k}")

    t_out = (t - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=1)[:, ::stride, :]  # (C_in, T_out, K)
    outs = []
    for gi in range(groups):
        ci = slice(gi * c_in_g, (gi + 1) * c_in_g)
        co = slice(gi * (c_out // groups), (gi + 1) * (c_out // groups))
        flat = win[ci].transpose(1, 0, 2).reshape(t_out, c_in_g * k)
        outs.append(flat @ w.data[co].reshape(c_out // groups, -1).T)  # (T_out, O_g)
    out = np.concatenate(outs, axis=1).T  # (C_out, T_out)

    def bwd(g):
        dx = np.zeros_like(x.data)
        dw = np.empty_like(w.data)
        for gi in range(groups):
            ci = slice(gi * c_in_g, (gi + 1) * c_in_g)
            co = slice(gi * (c_out // groups), (gi + 1) * (c_out // groups))
            g_g = g[co]  # (O_g, T_out)
            flat = win[ci].transpose(1, 0, 2).reshape(t_out, c_in_g * k)
            dw[co] = (g_g @ flat).reshape(-1, c_in_g, k)
            dxw = (w.data[co].reshape(c_out // groups, -1).T @ g_g).reshape(c_in_g, k, t_out)
            for kk in range(k):
                dx[ci, kk:kk + stride * t_out:stride] += dxw[:, kk, :]
        return dx, dw

    return _wrap("conv1d", out, (x, w), bwd)


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = NORM_EPS) -> Tensor:
    """Normalize (C, T) features within channel groups, then apply affine."""
    if x.data.ndim != 2:
        raise ShapeError(f"group_norm expects (C, T), got {x.data.shape}")
    c, t = x.data.shape
    if groups < 1 or c % groups:
        raise ShapeError(f"group_norm groups={groups} does not divide {c} channels")
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError(f"group_norm affine must be ({c},), got {gamma.data.shape}, {beta.data.shape}")
    _check_same_dtype("group_norm", x, gamma, beta)

    grouped = x.data.reshape(groups, c // groups * t)
    mu = grouped.mean(axis=1, keepdims=True)
    var = grouped.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((grouped - mu) * inv).reshape(c, t)
    out = gamma.data[:, None] * xhat + beta.data[:, None]
    n = c // groups * t

    def bwd(g):
        dxhat = (g * gamma.data[:, None]).reshape(groups, n)
        xh = xhat.reshape(groups, n)
        dx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                    - xh * (dxhat * xh).mean(axis=1, keepdims=True))
        return dx.reshape(c, t), (g * xhat).sum(axis=1), g.sum(axis=1)

    return _wrap("group_norm", out, (x, gamma, beta), bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = NORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError(f"layer_norm affine must be ({d},), got {gamma.data.shape}, {beta.data.shape}")
    _check_same_dtype("layer_norm", x, gamma, beta)

    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def bwd(g):
        dxhat = g * gamma.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(x.data.ndim - 1))
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _wrap("layer_norm", gamma.data * xhat + beta.data, (x, gamma, beta), bwd)


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-CDF gelu: x * Phi(x) (not the tanh approximation)."""
    cdf = (0.5 * (1.0 + erf(x.data * _INV_SQRT2))).astype(x.data.dtype, copy=False)

    def bwd(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        return (g * (cdf + x.data * pdf),)

    return _wrap("gelu", x.data * cdf, (x,), bwd)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _wrap("softmax", s, (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    pos = x.data >= 0
    s = np.empty_like(x.data)
    s[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    s[~pos] = ex / (1.0 + ex)

    def bwd(g):
        return (g * s * (1.0 - s),)

    return _wrap("sigmoid", s, (x,), bwd)


def log(x: Tensor) -> Tensor:
    def bwd(g):
        return (g / x.data,)

    return _wrap("log", np.log(x.data), (x,), bwd)


def l1_distance(a: Tensor, b: Tensor) -> Tensor:
    """Per-row L1 distance of two (T, D) tensors -> (T,)."""
    if a.data.shape != b.data.shape or a.data.ndim != 2:
        raise ShapeError(f"l1_distance expects matching 2-D shapes, got {a.data.shape}, {b.data.shape}")
    _check_same_dtype("l1_distance", a, b)
    diff = a.data - b.data

    def bwd(g):
        s = np.sign(diff) * g[:, None]
        return s, -s

    return _wrap("l1_distance", np.abs(diff).sum(axis=1), (a, b), bwd)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Per-row cosine similarity of two (T, D) tensors -> (T,).

    Each norm in the denominator carries an epsilon of ``COSINE_EPS`` so the
    value and its gradient stay finite for zero rows (which then score 0).
    """
    if a.data.shape != b.data.shape or a.data.ndim != 2:
        raise ShapeError(f"cosine_similarity expects matching 2-D shapes, got {a.data.shape}, {b.data.shape}")
    _check_same_dtype("cosine_similarity", a, b)
    na = np.linalg.norm(a.data, axis=1)
    nb = np.linalg.norm(b.data, axis=1)
    dot = (a.data * b.data).sum(axis=1)
    denom = (na + COSINE_EPS) * (nb + COSINE_EPS)
    c = dot / denom

    def bwd(g):
        tiny = np.finfo(a.data.dtype).tiny
        ua = a.data / np.maximum(na, tiny)[:, None]
        ub = b.data / np.maximum(nb, tiny)[:, None]
        da = g[:, None] * (b.data / denom[:, None] - (c / (na + COSINE_EPS))[:, None] * ua)
        db = g[:, None] * (a.data / denom[:, None] - (c / (nb + COSINE_EPS))[:, None] * ub)
        return da, db

    return _wrap("cosine_similarity", c, (a, b), bwd)


def _reduce(x: Tensor, axis: Optional[int], mean_: bool) -> Tensor:
    if axis is not None and not (0 <= axis < x.data.ndim):
        raise ShapeError(f"reduction axis {axis} out of range for shape {x.data.shape}")
    n = x.data.size if axis is None else x.data.shape[axis]
    out = x.data.mean(axis=axis) if mean_ else x.data.sum(axis=axis)

    def bwd(g):
        scale = 1.0 / n if mean_ else 1.0
        if axis is None:
            return (np.full_like(x.data, g.reshape(()) * scale),)
        return (np.broadcast_to(np.expand_dims(g * scale, axis), x.data.shape).copy(),)

    return _wrap("mean" if mean_ else "sum", out, (x,), bwd)


def sum_(x: Tensor, axis: Optional[int] = None) -> Tensor:
    """Sum over one axis, or over everything (scalar) when axis is None."""
    return _reduce(x, axis, mean_=False)


def mean(x: Tensor, axis: Optional[int] = None) -> Tensor:
    """Mean over one axis, or over everything (scalar) when axis is None."""
    return _reduce(x, axis, mean_=True)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise ShapeError("concat of zero tensors")
    nd = ts[0].data.ndim
    if not (0 <= axis < nd):
        raise ShapeError(f"concat axis {axis} out of range for ndim {nd}")
    base = list(ts[0].data.shape)
    for t in ts[1:]:
        other = list(t.data.shape)
        if t.data.ndim != nd or other[:axis] + other[axis + 1:] != base[:axis] + base[axis + 1:]:
            raise ShapeError(f"concat shapes differ off axis {axis}: {ts[0].data.shape} vs {t.data.shape}")
    _check_same_dtype("concat", *ts)
    sizes = [t.data.shape[axis] for t in ts]
    bounds = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, bounds, axis=axis))

    return _wrap("concat", np.concatenate([t.data for t in ts], axis=axis), tuple(ts), bwd)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice ``[start, stop)`` along one axis."""
    if not (0 <= axis < x.data.ndim):
        raise ShapeError(f"slice axis {axis} out of range for shape {x.data.shape}")
    if not (0 <= start < stop <= x.data.shape[axis]):
        raise ShapeError(f"slice [{start}:{stop}) out of range on axis {axis} of shape {x.data.shape}")
    idx = tuple(slice(None) if i != axis else slice(start, stop) for i in range(x.data.ndim))

    def bwd(g):
        dx = np.zeros_like(x.data)
        dx[idx] = g
        return (dx,)

    return _wrap("slice", x.data[idx], (x,), bwd)
