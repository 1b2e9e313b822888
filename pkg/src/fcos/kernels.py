"""Forward and backward kernels for every supported layer kind.

Each kernel is a pure function: forward returns (output, cache) and the
matching backward consumes (cache, output_grad) and returns input/parameter
gradients. Batch reductions use numpy's fixed summation order, so results do
not depend on worker count. Kernels are dtype-agnostic (fp32 or fp64).
"""
from __future__ import annotations

import numpy as np

from .errors import ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


# ---------------------------------------------------------------------------
# conv1d


def conv1d_out_length(length: int, k: int, stride: int, pad_l: int, pad_r: int) -> int:
    eff = length + pad_l + pad_r - k
    if eff < 0:
        raise ShapeError(f"conv window k={k} longer than padded input {length + pad_l + pad_r}")
    return eff // stride + 1


def conv1d_forward(x, w, b, stride=1, pad_l=0, pad_r=0):
    """x: [B, c_in, L], w: [c_out, c_in, k], b: [c_out] -> [B, c_out, L_out]."""
    batch, c_in, length = x.shape
    c_out, w_cin, k = w.shape
    if w_cin != c_in:
        raise ShapeError(f"conv weight expects c_in={w_cin}, input has {c_in}")
    l_out = conv1d_out_length(length, k, stride, pad_l, pad_r)
    xp = np.pad(x, ((0, 0), (0, 0), (pad_l, pad_r))) if (pad_l or pad_r) else x
    # windows: [B, c_in, L_out, k]
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    cols = win.transpose(0, 2, 1, 3).reshape(batch * l_out, c_in * k)
    y = cols @ w.reshape(c_out, c_in * k).T
    y += b
    y = y.reshape(batch, l_out, c_out).transpose(0, 2, 1)
    cache = (cols, x.shape, w, stride, pad_l, pad_r, l_out)
    return np.ascontiguousarray(y), cache


def conv1d_backward(cache, gy):
    """gy: [B, c_out, L_out] -> (gx, gw, gb)."""
    cols, x_shape, w, stride, pad_l, pad_r, l_out = cache
    batch, c_in, length = x_shape
    c_out, _, k = w.shape
    g = gy.transpose(0, 2, 1).reshape(batch * l_out, c_out)
    gw = (g.T @ cols).reshape(c_out, c_in, k)
    gb = g.sum(axis=0)
    gcols = g @ w.reshape(c_out, c_in * k)  # [B*L_out, c_in*k]
    gwin = gcols.reshape(batch, l_out, c_in, k).transpose(0, 2, 1, 3)
    gxp = np.zeros((batch, c_in, length + pad_l + pad_r), dtype=gy.dtype)
    for kk in range(k):
        gxp[:, :, kk : kk + stride * (l_out - 1) + 1 : stride] += gwin[:, :, :, kk]
    gx = gxp[:, :, pad_l : pad_l + length]
    return np.ascontiguousarray(gx), gw, gb


# ---------------------------------------------------------------------------
# batch normalization (per channel over batch and time)


def batchnorm_forward(x, gamma, beta, running_mean, running_var, training):
    """x: [B, C, L]. Returns (y, new_running_mean, new_running_var, cache)."""
    if training:
        mean = x.mean(axis=(0, 2))
        xc = x - mean[None, :, None]
        var = np.einsum("bcl,bcl->c", xc, xc) / (x.shape[0] * x.shape[2])
        new_rm = (1.0 - BN_MOMENTUM) * running_mean + BN_MOMENTUM * mean
        new_rv = (1.0 - BN_MOMENTUM) * running_var + BN_MOMENTUM * var
    else:
        mean, var = running_mean, running_var
        xc = x - mean[None, :, None]
        new_rm, new_rv = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = xc * inv_std[None, :, None]
    y = gamma[None, :, None] * xhat + beta[None, :, None]
    cache = (xhat, inv_std, gamma, training)
    return y.astype(x.dtype, copy=False), new_rm.astype(x.dtype, copy=False), new_rv.astype(x.dtype, copy=False), cache


def batchnorm_backward(cache, gy):
    """Returns (gx, ggamma, gbeta)."""
    xhat, inv_std, gamma, training = cache
    ggamma = (gy * xhat).sum(axis=(0, 2))
    gbeta = gy.sum(axis=(0, 2))
    if training:
        n = gy.shape[0] * gy.shape[2]
        gh = gy * gamma[None, :, None]
        gh_mean = gh.mean(axis=(0, 2))
        ghx_mean = np.einsum("bcl,bcl->c", gh, xhat) / n
        gx = (gh - gh_mean[None, :, None] - xhat * ghx_mean[None, :, None]) * inv_std[None, :, None]
    else:
        gx = gy * (gamma * inv_std)[None, :, None]
    return gx.astype(gy.dtype, copy=False), ggamma, gbeta


# ---------------------------------------------------------------------------
# activations / pooling


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(mask, gy):
    return gy * mask


def maxpool1d_forward(x, width, stride):
    """x: [B, C, L] -> [B, C, L_out]; remainder samples at the end are dropped."""
    batch, ch, length = x.shape
    l_out = (length - width) // stride + 1
    if l_out <= 0:
        raise ShapeError(f"pool window {width} longer than input {length}")
    win = np.lib.stride_tricks.sliding_window_view(x, width, axis=2)[:, :, ::stride, :]
    arg = win.argmax(axis=3)
    y = np.take_along_axis(win, arg[..., None], axis=3)[..., 0]
    cache = (arg, x.shape, width, stride, l_out)
    return np.ascontiguousarray(y), cache


def maxpool1d_backward(cache, gy):
    arg, x_shape, width, stride, l_out = cache
    batch, ch, length = x_shape
    gx = np.zeros(x_shape, dtype=gy.dtype)
    # source position of each pooled output element
    base = (np.arange(l_out) * stride)[None, None, :]
    pos = base + arg  # [B, C, L_out]
    bi = np.arange(batch)[:, None, None]
    ci = np.arange(ch)[None, :, None]
    if stride >= width:
        gx[bi, ci, pos] = gy  # windows disjoint: plain scatter
    else:
        np.add.at(gx, (bi, ci, pos), gy)
    return gx


def global_avg_pool_forward(x):
    """x: [B, C, L] -> [B, C]."""
    return x.mean(axis=2), x.shape


def global_avg_pool_backward(x_shape, gy):
    batch, ch, length = x_shape
    return np.repeat(gy[:, :, None] / length, length, axis=2).astype(gy.dtype, copy=False)


# ---------------------------------------------------------------------------
# dense / residual add


def dense_forward(x, w, b):
    """x: [B, F], w: [out, F], b: [out] -> [B, out]."""
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"dense expects {w.shape[1]} features, got {x.shape[1]}")
    return x @ w.T + b, (x, w)


def dense_backward(cache, gy):
    x, w = cache
    gw = gy.T @ x
    gb = gy.sum(axis=0)
    gx = gy @ w
    return gx, gw, gb


def add_forward(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"residual add shapes differ: {a.shape} vs {b.shape}")
    return a + b, None


def add_backward(_cache, gy):
    return gy, gy


# ---------------------------------------------------------------------------
# softmax cross-entropy (loss head)


def softmax_cross_entropy(logits, labels):
    """logits: [B, K], labels: int [B] -> (mean loss, dloss/dlogits).

    Numerically stabilized by max subtraction; the returned gradient already
    includes the 1/B mean factor.
    """
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    probs = ez / ez.sum(axis=1, keepdims=True)
    batch = logits.shape[0]
    nll = -np.log(np.maximum(probs[np.arange(batch), labels], 1e-300))
    loss = float(nll.mean())
    dlogits = probs.copy()
    dlogits[np.arange(batch), labels] -= 1.0
    dlogits /= batch
    return loss, dlogits.astype(logits.dtype, copy=False)
