"""Finite-difference verification of the tape gradients.

The tape gradient of a scalar-valued function is compared against central
differences computed from the same forward pass.  Checks must run in the
float64 mode; 32-bit arithmetic drowns the h^2 truncation error of the
central stencil in rounding noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict

import numpy as np

from . import tensor as tz
from .errors import ParameterError, ShapeError

# below this magnitude a gradient pair is compared absolutely, not relatively
_REL_FLOOR = 1e-4


@dataclass
class GradCheckReport:
    max_rel_err: float
    mean_rel_err: float
    n_elements: int

    def ok(self, tol: float = 1e-5) -> bool:
        return np.isfinite(self.max_rel_err) and self.max_rel_err <= tol


def grad_check(f: Callable[[tz.Tensor], tz.Tensor], point, step: float) -> GradCheckReport:
    """Compare the tape gradient of ``f`` at ``point`` with central differences.

    ``f`` must map one tensor to a scalar tensor.  Elements where both
    gradients are below 1e-4 in magnitude are compared absolutely (the
    relative quotient is meaningless against the h^2 truncation floor there).
    """
    if step <= 0:
        raise ParameterError(f"finite-difference step must be positive, got {step}")
    if tz.active_dtype() != np.dtype(np.float64):
        raise ParameterError("grad_check requires the float64 mode (use_dtype('float64'))")

    base = np.asarray(point.data if isinstance(point, tz.Tensor) else point, dtype=np.float64)
    x = tz.Tensor(base, requires_grad=True)
    y = f(x)
    if y.data.size != 1:
        raise ShapeError(f"grad_check target must be scalar-valued, got shape {y.data.shape}")
    tz.backward(y)
    g = x.grad if x.grad is not None else np.zeros_like(base)

    flat = base.reshape(-1)
    fd = np.empty_like(flat)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + step
        hi = f(tz.Tensor(bumped.reshape(base.shape))).item()
        bumped[i] = flat[i] - step
        lo = f(tz.Tensor(bumped.reshape(base.shape))).item()
        fd[i] = (hi - lo) / (2.0 * step)
    fd = fd.reshape(base.shape)

    diff = np.abs(g - fd)
    scale = np.maximum(np.abs(g), np.abs(fd))
    rel = np.where(scale > _REL_FLOOR, diff / np.maximum(scale, _REL_FLOOR), diff)
    return GradCheckReport(float(rel.max()), float(rel.mean()), int(rel.size))


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _signed_uniform(rng, shape, lo=0.25, hi=1.5):
    # magnitudes bounded away from zero keep |.| and sign() differentiable
    mag = rng.uniform(lo, hi, size=shape)
    return mag * np.where(rng.uniform(size=shape) < 0.5, -1.0, 1.0)


def _probe(rng, shape):
    # fixed random linear functional; makes the scalar target generic
    return rng.uniform(0.5, 1.5, size=shape) * np.where(rng.uniform(size=shape) < 0.5, -1.0, 1.0)


def _dot(y: tz.Tensor, c: np.ndarray) -> tz.Tensor:
    return tz.sum_(tz.mul(y, tz.Tensor(c)))


def primitive_cases(seed: int = 0) -> Dict[str, list]:
    """(name -> list of (f, point)) covering every primitive at >= 3 shapes."""
    rng = _rng(seed)
    cases: Dict[str, list] = {}

    def case(name, f, point):
        cases.setdefault(name, []).append((f, np.asarray(point, dtype=np.float64)))

    for m, k, n in [(2, 3, 4), (1, 5, 2), (4, 4, 3)]:
        b = _signed_uniform(rng, (k, n))
        c = _probe(rng, (m, n))
        case("matmul", lambda x, b=b, c=c: _dot(tz.matmul(x, tz.Tensor(b)), c), _signed_uniform(rng, (m, k)))
    for shape in [(2, 3), (4, 1), (3, 5)]:
        c = _probe(rng, shape[::-1])
        case("transpose", lambda x, c=c: _dot(tz.transpose(x), c), _signed_uniform(rng, shape))
    for shape in [(3, 4), (2, 2), (5,)]:
        other = _signed_uniform(rng, shape)
        c = _probe(rng, shape)
        case("add", lambda x, o=other, c=c: _dot(tz.add(x, tz.Tensor(o)), c), _signed_uniform(rng, shape))
    for rows in [2, 3, 5]:
        bias = _signed_uniform(rng, (4,))
        c = _probe(rng, (rows, 4))
        case("add", lambda x, b=bias, c=c: _dot(tz.add(x, tz.Tensor(b)), c), _signed_uniform(rng, (rows, 4)))
        case("add_bias_grad", lambda x, r=rows, c=c: _dot(tz.add(tz.Tensor(_probe(_rng(7), (r, 4))), x), c), bias)
    for shape in [(3, 4), (6,), (2, 5)]:
        other = _signed_uniform(rng, shape)
        c = _probe(rng, shape)
        case("mul", lambda x, o=other, c=c: _dot(tz.mul(x, tz.Tensor(o)), c), _signed_uniform(rng, shape))
        case("mul", lambda x, o=other, c=c: _dot(tz.mul(x, 0.7), c), _signed_uniform(rng, shape))
    for shape in [(3, 4), (2, 2), (5,)]:
        c = _probe(rng, shape)
        s = _signed_uniform(rng, ())
        case("mul_scalar_tensor", lambda x, sh=shape, c=c: _dot(tz.mul(tz.Tensor(_probe(_rng(8), sh)), x), c), s)
    convs = [
        ((1, 12), (2, 1, 4), 2, 1),
        ((3, 10), (4, 3, 3), 1, 1),
        ((4, 9), (6, 2, 2), 3, 2),
    ]
    for xs, ws, stride, groups in convs:
        w = _signed_uniform(rng, ws)
        oc = ws[0]
        t_out = (xs[1] - ws[2]) // stride + 1
        c = _probe(rng, (oc, t_out))
        case("conv1d", lambda x, w=w, s=stride, g=groups, c=c: _dot(tz.conv1d(x, tz.Tensor(w), s, g), c), _signed_uniform(rng, xs))
        case("conv1d_w", lambda wv, xs=xs, s=stride, g=groups, c=c: _dot(
            tz.conv1d(tz.Tensor(_signed_uniform(_rng(9), xs)), wv, s, g), c), w)
    for c_ch, t, groups in [(4, 5, 2), (6, 3, 3), (4, 7, 1)]:
        gam = rng.uniform(0.5, 1.5, size=(c_ch,))
        bet = _signed_uniform(rng, (c_ch,), lo=0.0, hi=0.5)
        c = _probe(rng, (c_ch, t))
        case("group_norm", lambda x, g=groups, ga=gam, be=bet, c=c: _dot(
            tz.group_norm(x, g, tz.Tensor(ga), tz.Tensor(be)), c), _signed_uniform(rng, (c_ch, t)))
    for shape in [(3, 4), (1, 6), (5, 2)]:
        gam = rng.uniform(0.5, 1.5, size=(shape[-1],))
        bet = _signed_uniform(rng, (shape[-1],), lo=0.0, hi=0.5)
        c = _probe(rng, shape)
        case("layer_norm", lambda x, ga=gam, be=bet, c=c: _dot(
            tz.layer_norm(x, tz.Tensor(ga), tz.Tensor(be)), c), _signed_uniform(rng, shape))
    for shape in [(3, 4), (7,), (2, 6)]:
        c = _probe(rng, shape)
        case("gelu", lambda x, c=c: _dot(tz.gelu(x), c), _signed_uniform(rng, shape))
        case("sigmoid", lambda x, c=c: _dot(tz.sigmoid(x), c), _signed_uniform(rng, shape))
        case("softmax", lambda x, c=c: _dot(tz.softmax(x), c), _signed_uniform(rng, shape))
        case("log", lambda x, c=c: _dot(tz.log(x), c), rng.uniform(0.3, 2.0, size=shape))
    for shape in [(3, 4), (1, 6), (5, 2)]:
        cvec = _probe(rng, (shape[0],))
        base = _signed_uniform(rng, shape)
        offset = rng.uniform(0.05, 0.4, size=shape) * np.where(rng.uniform(size=shape) < 0.5, -1.0, 1.0)
        other = base + offset  # elementwise gaps keep sign() away from zero
        case("l1_distance", lambda x, o=other, c=cvec: _dot(tz.l1_distance(x, tz.Tensor(o)), c), base)
        case("cosine_similarity", lambda x, o=other, c=cvec: _dot(
            tz.cosine_similarity(x, tz.Tensor(o)), c), base)
    for shape, axis in [((3, 4), None), ((3, 4), 0), ((2, 5), 1)]:
        cs = _probe(rng, () if axis is None else tuple(s for i, s in enumerate(shape) if i != axis))
        case("sum", lambda x, a=axis, c=cs: _dot(tz.sum_(x, a), c), _signed_uniform(rng, shape))
        case("mean", lambda x, a=axis, c=cs: _dot(tz.mean(x, a), c), _signed_uniform(rng, shape))
    for shape, axis in [((2, 3), 0), ((3, 2), 1), ((4,), 0)]:
        other = _signed_uniform(rng, shape)
        out_shape = list(shape)
        out_shape[axis] *= 2
        c = _probe(rng, tuple(out_shape))
        case("concat", lambda x, o=other, a=axis, c=c: _dot(tz.concat([x, tz.Tensor(o)], a), c), _signed_uniform(rng, shape))
    for shape, axis, lo, hi in [((4, 3), 0, 1, 3), ((3, 6), 1, 2, 5), ((5,), 0, 0, 4)]:
        out_shape = list(shape)
        out_shape[axis] = hi - lo
        c = _probe(rng, tuple(out_shape))
        case("slice", lambda x, a=axis, l=lo, h=hi, c=c: _dot(tz.slice_axis(x, a, l, h), c), _signed_uniform(rng, shape))
    return cases


def run_primitive_checks(seed: int = 0, step: float = 1e-5) -> Dict[str, GradCheckReport]:
    """Gradient-check every primitive; returns the worst report per op."""
    results: Dict[str, GradCheckReport] = {}
    with tz.use_dtype("float64"):
        for name, fns in primitive_cases(seed).items():
            worst = None
            errs = []
            for f, point in fns:
                rep = grad_check(f, point, step)
                errs.append(rep.mean_rel_err)
                if worst is None or rep.max_rel_err > worst.max_rel_err:
                    worst = rep
            results[name] = GradCheckReport(worst.max_rel_err, float(np.mean(errs)), worst.n_elements)
    return results
