"""Differentiable operations over :class:`Tensor`.

Images and feature maps are single samples laid out ``H x W x C``.
Convolution kernels are ``k x k x Cin x Cout``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided
from scipy.special import expit

from ..errors import ConfigurationError, DimensionError
from .tensor import Tensor, make_result

BCE_EPS = 1e-7


def _shape_err(op: str, *shapes) -> DimensionError:
    return DimensionError(f"{op}: incompatible shapes " + " vs ".join(str(tuple(s)) for s in shapes))


def _broadcast_kind(a: Tensor, b: Tensor, op: str) -> str:
    if a.shape == b.shape:
        return "same"
    if b.size == 1:
        return "b_scalar"
    if a.size == 1:
        return "a_scalar"
    if b.data.ndim == 1 and a.data.ndim >= 1 and b.shape[0] == a.shape[-1]:
        return "b_channel"
    if a.data.ndim == 1 and b.data.ndim >= 1 and a.shape[0] == b.shape[-1]:
        return "a_channel"
    raise _shape_err(op, a.shape, b.shape)


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    if int(np.prod(shape)) == 1:
        return g.sum().reshape(shape)
    return g.reshape(-1, shape[-1]).sum(axis=0)


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_kind(a, b, "add")
    out = a.data + b.data
    sa, sb = a.shape, b.shape

    def backward(g):
        return _reduce_to(g, sa), _reduce_to(g, sb)

    return make_result(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product; a channel vector broadcasts over sites."""
    _broadcast_kind(a, b, "mul")
    ad, bd = a.data, b.data
    out = ad * bd

    def backward(g):
        ga = _reduce_to(g * bd, a.shape) if a.requires_grad else None
        gb = _reduce_to(g * ad, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), backward)


def scale(x: Tensor, c: float) -> Tensor:
    out = x.data * x.data.dtype.type(c)
    return make_result(out, (x,), lambda g: (g * g.dtype.type(c),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = x.data * mask
    return make_result(out, (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)
    return make_result(s, (x,), lambda g: (g * s * (1 - s),))


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    return make_result(e, (x,), lambda g: (g * e,))


# ----------------------------------------------------------------- shaping


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise _shape_err("reshape", src, shape) from None
    return make_result(out, (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.shape}")
    return make_result(x.data.T, (x,), lambda g: (g.T,))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = list(xs)
    if not xs:
        raise DimensionError("concat of an empty list")
    nd = xs[0].data.ndim
    ax = axis % nd
    for t in xs[1:]:
        if t.data.ndim != nd or any(
            t.shape[i] != xs[0].shape[i] for i in range(nd) if i != ax
        ):
            raise _shape_err("concat", *(t.shape for t in xs))
    if len(xs) == 1:
        return make_result(xs[0].data, (xs[0],), lambda g: (g,))
    out = np.concatenate([t.data for t in xs], axis=ax)
    cuts = np.cumsum([t.shape[ax] for t in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=ax))

    return make_result(out, tuple(xs), backward)


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Select rows ``x[idx]`` of a matrix."""
    idx = np.asarray(idx, dtype=np.int64)
    n = x.shape[0]
    out = x.data[idx]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"gather_rows: index out of range for {n} rows")
    return make_result(out, (x,), backward)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    if int(factor) != factor or factor < 1:
        raise ConfigurationError(f"upsample factor must be an integer >= 1, got {factor}")
    f = int(factor)
    if x.data.ndim != 3:
        raise DimensionError(f"upsample_nearest expects H x W x C, got {x.shape}")
    H, W, C = x.shape
    if f == 1:
        return make_result(x.data, (x,), lambda g: (g,))
    out = np.broadcast_to(x.data[:, None, :, None, :], (H, f, W, f, C)).reshape(H * f, W * f, C)

    def backward(g):
        return (g.reshape(H, f, W, f, C).sum(axis=(1, 3)),)

    return make_result(out, (x,), backward)


# --------------------------------------------------------------- reductions


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    out = np.asarray(x.data.sum(), dtype=x.data.dtype).reshape(1)
    return make_result(out, (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x: Tensor, axis: int | tuple[int, ...] | None = None) -> Tensor:
    if axis is None:
        n = x.size
        out = np.asarray(x.data.mean(), dtype=x.data.dtype).reshape(1)
        return make_result(out, (x,), lambda g: (np.full(x.shape, g[0] / n, dtype=g.dtype),))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % x.data.ndim for a in axes)
    n = int(np.prod([x.shape[a] for a in axes]))
    out = x.data.mean(axis=axes)
    keep = [1 if i in axes else s for i, s in enumerate(x.shape)]

    def backward(g):
        return (np.broadcast_to(g.reshape(keep) / g.dtype.type(n), x.shape).copy(),)

    return make_result(out, (x,), backward)


# ------------------------------------------------------------------ linear


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_err("matmul", a.shape, b.shape)
    ad, bd = a.data, b.data
    out = ad @ bd

    def backward(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = ad.T @ g if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` applied along the last axis; ``w`` is ``din x dout``."""
    din = w.shape[0]
    if w.data.ndim != 2 or x.shape[-1] != din or (b is not None and b.shape != (w.shape[1],)):
        raise _shape_err("linear", x.shape, w.shape, b.shape if b is not None else ())
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, din)
    wd = w.data
    out = x2 @ wd
    if b is not None:
        out += b.data
    out = out.reshape(lead + (wd.shape[1],))

    def backward(g):
        g2 = g.reshape(-1, wd.shape[1])
        gx = (g2 @ wd.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    inputs = (x, w) if b is None else (x, w, b)
    return make_result(out, inputs, backward)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    V = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        bad = ids[(ids < 0) | (ids >= V)][0]
        raise IndexError(f"embedding id {bad} out of range for vocabulary of {V}")
    out = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return make_result(out, (table,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_result(s, (x,), backward)


def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True)) + x.data.dtype.type(1e-12)
    y = x.data / norm

    def backward(g):
        # the projection cancels heavily; accumulate in float64
        g64, y64 = g.astype(np.float64), y.astype(np.float64)
        gx = (g64 - y64 * (g64 * y64).sum(axis=axis, keepdims=True)) / norm
        return (gx.astype(g.dtype),)

    return make_result(y, (x,), backward)


# -------------------------------------------------------------- convolution


def _out_size(n: int, k: int, s: int, p: int, op: str) -> int:
    span = n + 2 * p - k
    if span < 0 or span % s:
        raise ConfigurationError(
            f"{op}: input {n} with kernel {k}, stride {s}, padding {p} gives non-integral output size"
        )
    return span // s + 1


def _im2col(xp: np.ndarray, k: int, s: int, Ho: int, Wo: int) -> np.ndarray:
    sH, sW, sC = xp.strides
    C = xp.shape[2]
    win = as_strided(xp, (Ho, Wo, k, k, C), (s * sH, s * sW, sH, sW, sC), writeable=False)
    return win.reshape(Ho * Wo, k * k * C)


def _col2im(cols: np.ndarray, Hp: int, Wp: int, C: int, k: int, s: int, Ho: int, Wo: int) -> np.ndarray:
    # kernel offsets first so every slice added below is contiguous
    cols = np.ascontiguousarray(cols.reshape(Ho, Wo, k, k, C).transpose(2, 3, 0, 1, 4))
    out = np.zeros((Hp, Wp, C), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[i : i + s * (Ho - 1) + 1 : s, j : j + s * (Wo - 1) + 1 : s] += cols[i, j]
    return out


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((p, p), (p, p), (0, 0)))


def _check_kernel(x: Tensor, w: Tensor, b: Tensor | None, cin_axis: int, op: str) -> None:
    if x.data.ndim != 3 or w.data.ndim != 4 or w.shape[0] != w.shape[1]:
        raise _shape_err(op, x.shape, w.shape)
    if x.shape[2] != w.shape[cin_axis]:
        raise _shape_err(op, x.shape, w.shape)
    cout_axis = 3 if cin_axis == 2 else 2
    if b is not None and b.shape != (w.shape[cout_axis],):
        raise _shape_err(op, w.shape, b.shape)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of an ``H x W x Cin`` map with a ``k x k x Cin x Cout`` kernel."""
    if stride < 1 or padding < 0:
        raise ConfigurationError(f"conv2d: stride {stride}, padding {padding}")
    _check_kernel(x, w, b, 2, "conv2d")
    H, W, C = x.shape
    k, cout = w.shape[0], w.shape[3]
    Ho = _out_size(H, k, stride, padding, "conv2d")
    Wo = _out_size(W, k, stride, padding, "conv2d")
    w2 = w.data.reshape(k * k * C, cout)
    if k == 1 and stride == 1 and padding == 0:
        cols = x.data.reshape(H * W, C)
    else:
        xp = np.ascontiguousarray(_pad(x.data, padding))
        cols = _im2col(xp, k, stride, Ho, Wo)
    out = cols @ w2
    if b is not None:
        out += b.data
    out = out.reshape(Ho, Wo, cout)

    def backward(g):
        g2 = g.reshape(Ho * Wo, cout)
        gx = gw = None
        if x.requires_grad:
            if k == 1 and stride == 1 and padding == 0:
                gx = (g2 @ w2.T).reshape(H, W, C)
            elif stride == 1 and padding <= k - 1:
                # full correlation with the flipped kernel: one matmul, no scatter
                gp = np.ascontiguousarray(_pad(g, k - 1 - padding))
                wf = w.data[::-1, ::-1].transpose(0, 1, 3, 2).reshape(k * k * cout, C)
                gx = (_im2col(gp, k, 1, H, W) @ wf).reshape(H, W, C)
            else:
                dcols = g2 @ w2.T
                gxp = _col2im(dcols, H + 2 * padding, W + 2 * padding, C, k, stride, Ho, Wo)
                gx = gxp[padding : padding + H, padding : padding + W] if padding else gxp
        if w.requires_grad:
            gw = (cols.T @ g2).reshape(w.shape)
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    inputs = (x, w) if b is None else (x, w, b)
    return make_result(out, inputs, backward)


def conv_transpose2d(
    y: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0
) -> Tensor:
    """Adjoint of :func:`conv2d` with the same kernel.

    ``w`` is ``k x k x Cout x Cin`` where ``Cin`` is the channel count of ``y``,
    i.e. exactly the kernel of the forward convolution this op transposes.
    Output side is ``(n - 1) * stride + k - 2 * padding``.
    """
    if stride < 1 or padding < 0:
        raise ConfigurationError(f"conv_transpose2d: stride {stride}, padding {padding}")
    _check_kernel(y, w, b, 3, "conv_transpose2d")
    Hy, Wy, Cy = y.shape
    k, Co = w.shape[0], w.shape[2]
    Hp, Wp = (Hy - 1) * stride + k, (Wy - 1) * stride + k
    H, W = Hp - 2 * padding, Wp - 2 * padding
    if H < 1 or W < 1:
        raise ConfigurationError(f"conv_transpose2d: padding {padding} too large for output")
    w2 = w.data.reshape(k * k * Co, Cy)
    y2 = y.data.reshape(Hy * Wy, Cy)
    outp = _col2im(y2 @ w2.T, Hp, Wp, Co, k, stride, Hy, Wy)
    out = outp[padding : padding + H, padding : padding + W] if padding else outp
    if b is not None:
        out = out + b.data

    def backward(g):
        gp = np.ascontiguousarray(_pad(g, padding))
        cols = _im2col(gp, k, stride, Hy, Wy)
        gy = (cols @ w2).reshape(y.shape) if y.requires_grad else None
        gw = (cols.T @ y2).reshape(w.shape) if w.requires_grad else None
        if b is None:
            return gy, gw
        return gy, gw, g.reshape(-1, Co).sum(axis=0)

    inputs = (y, w) if b is None else (y, w, b)
    return make_result(np.ascontiguousarray(out), inputs, backward)


# ------------------------------------------------------------------- losses


def bce(pred: Tensor, target, mask=None) -> Tensor:
    """Mean binary cross entropy over unmasked elements.

    ``mask`` may match ``pred`` or ``pred.shape[:-1]`` (broadcast over the last
    axis). An empty mask yields an exact zero that contributes no gradient.
    """
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if t.shape != pred.shape:
        raise _shape_err("bce", pred.shape, t.shape)
    t = t.astype(pred.data.dtype, copy=False)
    dt = pred.data.dtype.type
    eps = dt(BCE_EPS)
    p = np.clip(pred.data, eps, dt(1) - eps)
    inside = (pred.data >= eps) & (pred.data <= dt(1) - eps)
    elem = -(t * np.log(p) + (1 - t) * np.log1p(-p))
    if mask is None:
        m = None
        count = elem.size
    else:
        m = np.asarray(mask)
        if m.shape == pred.shape:
            count = int(m.sum())
        elif m.shape == pred.shape[:-1]:
            count = int(m.sum()) * pred.shape[-1]
            m = m[..., None]
        else:
            raise _shape_err("bce mask", pred.shape, m.shape)
        m = m.astype(pred.data.dtype)
        elem = elem * m
    if count == 0:
        out = np.zeros(1, dtype=pred.data.dtype)
        return make_result(out, (pred,), lambda g: (None,))
    out = np.asarray(elem.sum(dtype=np.float64) / count, dtype=pred.data.dtype).reshape(1)

    def backward(g):
        d = (p - t) / (p * (1 - p)) * inside
        if m is not None:
            d = d * m
        return (d * (g[0] / dt(count)),)

    return make_result(out, (pred,), backward)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross entropy of ``N x C`` logits against integer labels."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise _shape_err("cross_entropy", logits.shape, labels.shape)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    n = logits.shape[0]
    out = np.asarray(-logp[np.arange(n), labels].mean(), dtype=logits.data.dtype).reshape(1)

    def backward(g):
        d = np.exp(logp)
        d[np.arange(n), labels] -= 1
        return (d * (g[0] / n),)

    return make_result(out, (logits,), backward)
