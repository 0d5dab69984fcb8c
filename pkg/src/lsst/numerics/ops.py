"""Differentiable primitives.

Every function takes the tape as its first argument and returns a new
Tensor; passing ``tape=None`` runs the same kernel without recording
(pure inference).  Convolutions use cross-correlation semantics (no
kernel flip) on channels-last arrays, matching deep-learning convention.
"""

import math

import numpy as np
from scipy.special import erf

from ..errors import ConfigError, ShapeError
from .engine import Tensor

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(tape, a, b):
    out = Tensor._wrap(a.data + b.data)
    if tape is not None:
        tape.record(out, (a, b), lambda g: (_unbroadcast(g, a.shape),
                                            _unbroadcast(g, b.shape)))
    return out


def sub(tape, a, b):
    out = Tensor._wrap(a.data - b.data)
    if tape is not None:
        tape.record(out, (a, b), lambda g: (_unbroadcast(g, a.shape),
                                            _unbroadcast(-g, b.shape)))
    return out


def mul(tape, a, b):
    out = Tensor._wrap(a.data * b.data)
    if tape is not None:
        ad, bd = a.data, b.data
        tape.record(out, (a, b), lambda g: (_unbroadcast(g * bd, a.shape),
                                            _unbroadcast(g * ad, b.shape)))
    return out


def scale(tape, a, c):
    """Multiply by a python scalar constant."""
    c = float(c)
    out = Tensor._wrap(a.data * c)
    if tape is not None:
        tape.record(out, (a,), lambda g: (g * c,))
    return out


def sqrt(tape, a):
    """Elementwise square root of a nonnegative tensor.

    The derivative at exactly zero is taken as 0 (subgradient convention),
    so losses built on per-band RMSE have a well-defined zero gradient at
    perfect reconstruction instead of 0 * inf = NaN.
    """
    if np.any(a.data < 0):
        raise ValueError("sqrt requires nonnegative input")
    y = np.sqrt(a.data)
    out = Tensor._wrap(y)
    if tape is not None:
        def vjp(g):
            d = np.zeros_like(y)
            nz = y > 0
            d[nz] = 0.5 / y[nz]
            return (g * d,)
        tape.record(out, (a,), vjp)
    return out


def gelu(tape, a):
    """Exact Gaussian-CDF GELU: x * Phi(x), with Phi the standard normal CDF."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = Tensor._wrap(x * cdf)
    if tape is not None:
        def vjp(g):
            pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
            return (g * (cdf + x * pdf),)
        tape.record(out, (a,), vjp)
    return out


# ---------------------------------------------------------------------------
# reductions and shape


def sum_axes(tape, a, axes):
    axes = tuple(axes)
    out = Tensor._wrap(a.data.sum(axis=axes))
    if tape is not None:
        in_shape = a.shape

        def vjp(g):
            gexp = np.expand_dims(g, axes)
            return (np.broadcast_to(gexp, in_shape).copy(),)
        tape.record(out, (a,), vjp)
    return out


def sum_all(tape, a):
    return sum_axes(tape, a, tuple(range(a.ndim)))


def mean_all(tape, a):
    return scale(tape, sum_all(tape, a), 1.0 / a.size)


def reshape(tape, a, shape):
    out = Tensor._wrap(a.data.reshape(shape))
    if tape is not None:
        old = a.shape
        tape.record(out, (a,), lambda g: (g.reshape(old),))
    return out


def transpose(tape, a):
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    out = Tensor._wrap(np.ascontiguousarray(a.data.T))
    if tape is not None:
        tape.record(out, (a,), lambda g: (np.ascontiguousarray(g.T),))
    return out


def concat_channels(tape, parts):
    """Concatenate along the last (channel) axis."""
    out = Tensor._wrap(np.concatenate([p.data for p in parts], axis=-1))
    if tape is not None:
        splits = np.cumsum([p.shape[-1] for p in parts])[:-1]
        tape.record(out, tuple(parts),
                    lambda g: tuple(np.split(g, splits, axis=-1)))
    return out


def slice_channels(tape, a, lo, hi):
    """Take channels [lo, hi) along the last axis."""
    out = Tensor._wrap(np.ascontiguousarray(a.data[..., lo:hi]))
    if tape is not None:
        in_shape = a.shape

        def vjp(g):
            gx = np.zeros(in_shape, dtype=g.dtype)
            gx[..., lo:hi] = g
            return (gx,)
        tape.record(out, (a,), vjp)
    return out


def permute_channels(tape, a, perm):
    """Reorder the last axis: out[..., i] = a[..., perm[i]]."""
    perm = np.asarray(perm)
    if perm.shape != (a.shape[-1],):
        raise ShapeError("permutation length must equal channel count")
    out = Tensor._wrap(np.ascontiguousarray(a.data[..., perm]))
    if tape is not None:
        inv = np.argsort(perm)
        tape.record(out, (a,), lambda g: (np.ascontiguousarray(g[..., inv]),))
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(tape, a, b):
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul expects matrices, got "
                         f"{a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    out = Tensor._wrap(a.data @ b.data)
    if tape is not None:
        if tape.counter is not None:
            tape.counter.add(a.shape[0] * a.shape[1] * b.shape[1])
        ad, bd = a.data, b.data
        tape.record(out, (a, b), lambda g: (g @ bd.T, ad.T @ g))
    return out


def softmax_rows(tape, a):
    """Row-wise softmax of a matrix, stabilized by per-row max subtraction."""
    if a.ndim != 2:
        raise ShapeError(f"softmax_rows expects a matrix, got {a.shape}")
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor._wrap(y)
    if tape is not None:
        def vjp(g):
            dot = (g * y).sum(axis=1, keepdims=True)
            return (y * (g - dot),)
        tape.record(out, (a,), vjp)
    return out


def layer_norm(tape, a, gamma, beta, eps=1e-12):
    """Normalize the channel (last) axis to zero mean / unit variance, then
    apply the per-channel affine ``gamma * xhat + beta``.

    eps only guards exactly-constant channel vectors; it is kept tiny so the
    pre-affine variance is 1 to double precision on ordinary data.
    """
    C = a.shape[-1]
    if C < 1:
        raise ShapeError("layer_norm needs at least one channel")
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError("gamma/beta must have shape (C,)")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor._wrap(xhat * gamma.data + beta.data)
    if tape is not None:
        gd = gamma.data

        def vjp(g):
            lead = tuple(range(g.ndim - 1))
            dgamma = (g * xhat).sum(axis=lead)
            dbeta = g.sum(axis=lead)
            dxhat = g * gd
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            dx = inv * (dxhat - m1 - xhat * m2)
            return (dx, dgamma, dbeta)
        tape.record(out, (a, gamma, beta), vjp)
    return out


# ---------------------------------------------------------------------------
# convolution


def _resolve_padding(padding, kh, kw, stride):
    if padding == "same":
        if stride != 1 or kh % 2 == 0 or kw % 2 == 0:
            raise ConfigError('"same" padding needs stride 1 and odd kernels')
        return kh // 2, kw // 2
    if padding == "valid":
        return 0, 0
    p = int(padding)
    if p < 0:
        raise ConfigError("padding must be nonnegative")
    return p, p


def _im2col(xp, kh, kw, stride, Ho, Wo):
    cols = np.empty((Ho, Wo, kh, kw, xp.shape[2]), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j, :] = xp[i:i + stride * (Ho - 1) + 1:stride,
                                     j:j + stride * (Wo - 1) + 1:stride, :]
    return cols


def _col2im(gcols, xp_shape, kh, kw, stride, Ho, Wo):
    gx = np.zeros(xp_shape, dtype=gcols.dtype)
    for i in range(kh):
        for j in range(kw):
            gx[i:i + stride * (Ho - 1) + 1:stride,
               j:j + stride * (Wo - 1) + 1:stride, :] += gcols[:, :, i, j, :]
    return gx


def _conv_forward(cols, w, groups):
    Ho, Wo = cols.shape[:2]
    kh, kw, cin_g, cout = w.shape
    cin = cols.shape[4]
    if groups == cin and cout == cin:
        # depthwise fast path (one filter per channel)
        return np.einsum("xyijc,ijc->xyc", cols, w[:, :, 0, :], optimize=True)
    cout_g = cout // groups
    out = np.empty((Ho, Wo, cout), dtype=cols.dtype)
    for g in range(groups):
        cg = cols[:, :, :, :, g * cin_g:(g + 1) * cin_g]
        mat = cg.reshape(Ho * Wo, kh * kw * cin_g)
        wg = w[:, :, :, g * cout_g:(g + 1) * cout_g].reshape(kh * kw * cin_g,
                                                             cout_g)
        out[:, :, g * cout_g:(g + 1) * cout_g] = (mat @ wg).reshape(Ho, Wo,
                                                                    cout_g)
    return out


def _conv_weight_grad(cols, g, wshape, groups):
    kh, kw, cin_g, cout = wshape
    Ho, Wo, cin = cols.shape[0], cols.shape[1], cols.shape[4]
    if groups == cin and cout == cin:
        gw = np.einsum("xyijc,xyc->ijc", cols, g, optimize=True)
        return gw[:, :, None, :]
    cout_g = cout // groups
    gw = np.empty(wshape, dtype=g.dtype)
    for gi in range(groups):
        cg = cols[:, :, :, :, gi * cin_g:(gi + 1) * cin_g]
        mat = cg.reshape(Ho * Wo, kh * kw * cin_g)
        gg = g[:, :, gi * cout_g:(gi + 1) * cout_g].reshape(Ho * Wo, cout_g)
        gw[:, :, :, gi * cout_g:(gi + 1) * cout_g] = (mat.T @ gg).reshape(
            kh, kw, cin_g, cout_g)
    return gw


def _conv_cols_grad(g, w, groups):
    Ho, Wo = g.shape[:2]
    kh, kw, cin_g, cout = w.shape
    cin = cin_g * groups
    if groups == cin and cout == cin:
        return np.einsum("xyc,ijc->xyijc", g, w[:, :, 0, :], optimize=True)
    cout_g = cout // groups
    gcols = np.empty((Ho, Wo, kh, kw, cin), dtype=g.dtype)
    for gi in range(groups):
        gg = g[:, :, gi * cout_g:(gi + 1) * cout_g].reshape(Ho * Wo, cout_g)
        wg = w[:, :, :, gi * cout_g:(gi + 1) * cout_g].reshape(
            kh * kw * cin_g, cout_g)
        gcols[:, :, :, :, gi * cin_g:(gi + 1) * cin_g] = (gg @ wg.T).reshape(
            Ho, Wo, kh, kw, cin_g)
    return gcols


def _count_conv(tape, Ho, Wo, kh, kw, cin_g, cout):
    if tape is not None and tape.counter is not None:
        tape.counter.add(Ho * Wo * kh * kw * cin_g * cout, tag="conv")


def conv2d(tape, x, w, b=None, stride=1, padding="same", groups=1):
    """2-D cross-correlation on a channels-last image.

    x: (H, W, Cin), w: (kh, kw, Cin/groups, Cout), optional bias b: (Cout,).
    Output spatial size is floor((H + 2p - kh)/stride) + 1 per axis.
    ``groups == Cin`` gives a depth-wise convolution; output channel c then
    sees input channel c only.
    """
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError("conv2d expects x (H,W,Cin) and w (kh,kw,Cin/g,Cout)")
    H, W, cin = x.shape
    kh, kw, cin_g, cout = w.shape
    if cin % groups != 0 or cout % groups != 0:
        raise ConfigError(f"channels ({cin}->{cout}) not divisible by "
                          f"groups={groups}")
    if cin_g != cin // groups:
        raise ShapeError(f"weight expects {cin_g} channels per group, "
                         f"input provides {cin // groups}")
    if b is not None and b.shape != (cout,):
        raise ShapeError("bias must have shape (Cout,)")
    ph, pw = _resolve_padding(padding, kh, kw, stride)
    xp = np.pad(x.data, ((ph, ph), (pw, pw), (0, 0)))
    Ho = (H + 2 * ph - kh) // stride + 1
    Wo = (W + 2 * pw - kw) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ShapeError("kernel larger than padded input")
    cols = _im2col(xp, kh, kw, stride, Ho, Wo)
    y = _conv_forward(cols, w.data, groups)
    if b is not None:
        y = y + b.data
    _count_conv(tape, Ho, Wo, kh, kw, cin_g, cout)
    out = Tensor._wrap(y)
    if tape is not None:
        wd = w.data
        xp_shape = xp.shape

        def vjp(g):
            gw = _conv_weight_grad(cols, g, wd.shape, groups)
            gcols = _conv_cols_grad(g, wd, groups)
            gxp = _col2im(gcols, xp_shape, kh, kw, stride, Ho, Wo)
            gx = gxp[ph:ph + H, pw:pw + W, :]
            if b is None:
                return (np.ascontiguousarray(gx), gw)
            return (np.ascontiguousarray(gx), gw, g.sum(axis=(0, 1)))
        inputs = (x, w) if b is None else (x, w, b)
        tape.record(out, inputs, vjp)
    return out


def transposed_conv2d(tape, y, w, b=None, stride=2, padding=0):
    """Exact adjoint of ``conv2d(..., stride, padding)`` with the same weights.

    y: (Hi, Wi, Cout), w: (kh, kw, Cin, Cout); output (Ho, Wo, Cin) with
    Ho = stride*(Hi-1) + kh - 2*padding.  Satisfies
    <conv2d(x, w), y> == <x, transposed_conv2d(y, w)> for all x, y.
    """
    if y.ndim != 3 or w.ndim != 4:
        raise ShapeError("transposed_conv2d expects y (H,W,Cout) and "
                         "w (kh,kw,Cin,Cout)")
    Hi, Wi, cout = y.shape
    kh, kw, cin, wcout = w.shape
    if wcout != cout:
        raise ShapeError(f"weight expects {wcout} input channels, got {cout}")
    ph, pw = _resolve_padding(padding, kh, kw, stride)
    Ho = stride * (Hi - 1) + kh - 2 * ph
    Wo = stride * (Wi - 1) + kw - 2 * pw
    if Ho < 1 or Wo < 1:
        raise ShapeError("output would be empty")
    if b is not None and b.shape != (cin,):
        raise ShapeError("bias must have shape (Cin,)")
    xp_shape = (Ho + 2 * ph, Wo + 2 * pw, cin)
    gcols = _conv_cols_grad(y.data, w.data, 1)
    full = _col2im(gcols, xp_shape, kh, kw, stride, Hi, Wi)
    out_arr = np.ascontiguousarray(full[ph:ph + Ho, pw:pw + Wo, :])
    if b is not None:
        out_arr = out_arr + b.data
    _count_conv(tape, Hi, Wi, kh, kw, cin, cout)
    out = Tensor._wrap(out_arr)
    if tape is not None:
        wd = w.data

        def vjp(g):
            gp = np.pad(g, ((ph, ph), (pw, pw), (0, 0)))
            cols = _im2col(gp, kh, kw, stride, Hi, Wi)
            gy = _conv_forward(cols, wd, 1)
            gw = _conv_weight_grad(cols, y.data, wd.shape, 1)
            if b is None:
                return (gy, gw)
            return (gy, gw, g.sum(axis=(0, 1)))
        inputs = (y, w) if b is None else (y, w, b)
        tape.record(out, inputs, vjp)
    return out
