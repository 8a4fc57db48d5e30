"""Forward/backward kernels for the two UNets.

Public functions take ``(batch, channel, H, W)`` arrays.  The ``*_cn`` kernels
work on ``(channel, batch, H, W)`` arrays, which turns im2col convolution into
a single matmul with no transposes; the networks run entirely in that layout.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError


def _check_conv(x, w, stride):
    if w.ndim != 4:
        raise ConfigurationError(f"weights must be (out, in, kH, kW), got {w.shape}")
    kh, kw = w.shape[2:]
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigurationError(f"kernel dims must be odd, got {kh}x{kw}")
    if stride not in (1, 2):
        raise ConfigurationError(f"stride must be 1 or 2, got {stride}")
    if x.shape[0] != w.shape[1]:
        raise ConfigurationError(f"input has {x.shape[0]} channels, weights expect {w.shape[1]}")


def _out_size(n, k, stride):
    return (n + 2 * (k // 2) - k) // stride + 1


def im2col_cn(x, kh, kw, stride=1, pad_value=0.0):
    """``(C, N, H, W) -> (C*kh*kw, N*Ho*Wo)`` with ``(k-1)/2`` padding."""
    C, N, H, W = x.shape
    ph, pw = kh // 2, kw // 2
    Ho, Wo = _out_size(H, kh, stride), _out_size(W, kw, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), constant_values=pad_value)
    cols = np.empty((C, kh, kw, N, Ho, Wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride]
    return cols.reshape(C * kh * kw, N * Ho * Wo), (Ho, Wo)


def col2im_cn(dcols, x_shape, kh, kw, stride=1):
    C, N, H, W = x_shape
    ph, pw = kh // 2, kw // 2
    Ho, Wo = _out_size(H, kh, stride), _out_size(W, kw, stride)
    dcols = dcols.reshape(C, kh, kw, N, Ho, Wo)
    dxp = np.zeros((C, N, H + 2 * ph, W + 2 * pw), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += dcols[:, i, j]
    return dxp[:, :, ph:ph + H, pw:pw + W]


def conv_cn_forward(x, w, b, stride=1):
    """Returns ``(y, cols)``; ``cols`` is the cache for :func:`conv_cn_backward`."""
    _check_conv(x, w, stride)
    O, C, kh, kw = w.shape
    cols, (Ho, Wo) = im2col_cn(x, kh, kw, stride)
    y = (w.reshape(O, -1) @ cols).reshape(O, x.shape[1], Ho, Wo)
    y = y + b.reshape(O, 1, 1, 1)
    return y, cols


def conv_cn_backward(dy, cols, x_shape, w, stride=1, need_dx=True):
    O, C, kh, kw = w.shape
    dy2 = dy.reshape(O, -1)
    dw = (dy2 @ cols.T).reshape(w.shape)
    db = dy2.sum(axis=1)
    dx = None
    if need_dx:
        dx = col2im_cn(w.reshape(O, -1).T @ dy2, x_shape, kh, kw, stride)
    return dx, dw, db


def _mask_window_sum(m, kh, kw, stride):
    """Valid-count per output window; padding counts as valid."""
    C = m.shape[0]
    cols, (Ho, Wo) = im2col_cn(m.sum(axis=0, keepdims=True), kh, kw, stride, pad_value=float(C))
    return cols.sum(axis=0).reshape(1, m.shape[1], Ho, Wo)


def pconv_cn_forward(x, m, w, b, stride=1):
    """Partial convolution on ``(C, N, H, W)`` features.

    ``m`` is ``(1, N, H, W)`` (shared across channels) or ``(C, N, H, W)``.
    Returns ``(y, m_out, cache)`` with ``m_out`` of shape ``(1, N, Ho, Wo)``.
    """
    _check_conv(x, w, stride)
    if m.shape[0] not in (1, x.shape[0]) or m.shape[1:] != x.shape[1:]:
        raise ConfigurationError(f"mask shape {m.shape} incompatible with input {x.shape}")
    O, C, kh, kw = w.shape
    xm = x * m
    cols, (Ho, Wo) = im2col_cn(xm, kh, kw, stride)
    raw = (w.reshape(O, -1) @ cols).reshape(O, x.shape[1], Ho, Wo)
    msum = _mask_window_sum(np.broadcast_to(m, x.shape) if m.shape[0] == 1 else m, kh, kw, stride)
    valid = msum > 0
    ratio = np.zeros_like(msum)
    np.divide(float(C * kh * kw), msum, out=ratio, where=valid)
    m_out = valid.astype(x.dtype)
    y = raw * ratio + b.reshape(O, 1, 1, 1) * m_out
    return y, m_out, (cols, ratio, m_out, m)


def pconv_cn_backward(dy, cache, x_shape, w, stride=1, need_dx=True):
    cols, ratio, m_out, m = cache
    O = w.shape[0]
    db = (dy * m_out).reshape(O, -1).sum(axis=1)
    dx, dw, _ = conv_cn_backward(dy * ratio, cols, x_shape, w, stride, need_dx)
    if need_dx:
        dx = dx * m
    return dx, dw, db


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(x, dy):
    return dy * (x > 0)


def maxpool2x2_forward(x):
    """2x2/2 max pool over the last two axes; returns ``(y, argmax)``."""
    *lead, H, W = x.shape
    if H % 2 or W % 2:
        raise ConfigurationError(f"maxpool needs even spatial dims, got {H}x{W}")
    win = x.reshape(*lead, H // 2, 2, W // 2, 2).swapaxes(-3, -2).reshape(*lead, H // 2, W // 2, 4)
    idx = win.argmax(axis=-1)  # first maximum in row-major window order
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return y, idx


def maxpool2x2_backward(idx, dy):
    *lead, h, w = dy.shape
    dwin = np.zeros((*lead, h, w, 4), dtype=dy.dtype)
    np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
    return dwin.reshape(*lead, h, w, 2, 2).swapaxes(-3, -2).reshape(*lead, 2 * h, 2 * w)


def upsample_nearest2x(x):
    return x.repeat(2, axis=-2).repeat(2, axis=-1)


def upsample_nearest2x_backward(dy):
    *lead, H, W = dy.shape
    return dy.reshape(*lead, H // 2, 2, W // 2, 2).sum(axis=(-3, -1))


def l1_loss_weighted(pred, target, hole_mask=None, hole_weight=1.0):
    """Mean of ``w * |pred - target|``; ``w = hole_weight`` on the hole, 1 elsewhere.

    Returns ``(loss, dloss/dpred)``; the subgradient is 0 at exact ties.
    """
    pred = np.asarray(pred)
    diff = pred - target
    w = np.ones_like(diff) if hole_mask is None else np.where(hole_mask, hole_weight, 1.0).astype(diff.dtype)
    loss = float(np.mean(w * np.abs(diff)))
    grad = w * np.sign(diff) / diff.size
    return loss, grad


# -- NCHW wrappers -----------------------------------------------------------

def _cn(a):
    return np.ascontiguousarray(np.swapaxes(a, 0, 1))


def conv2d_forward(x, w, b, stride=1):
    """Zero-padded cross-correlation of ``(N, C, H, W)`` input."""
    x = np.asarray(x)
    if x.ndim != 4:
        raise ConfigurationError(f"expected (N, C, H, W) input, got {x.shape}")
    y, _ = conv_cn_forward(_cn(x), w, b, stride)
    return _cn(y)


def conv2d_backward(x, w, dy, stride=1):
    """Gradients ``(dx, dw, db)`` of :func:`conv2d_forward` given upstream ``dy``."""
    xc = _cn(x)
    cols, _ = im2col_cn(xc, w.shape[2], w.shape[3], stride)
    dx, dw, db = conv_cn_backward(_cn(dy), cols, xc.shape, w, stride)
    return _cn(dx), dw, db


def _check_binary(m):
    if not np.all((m == 0) | (m == 1)):
        raise ConfigurationError("partial convolution masks must be binary")


def partial_conv2d_forward(x, m, w, b, stride=1):
    """Masked, renormalised convolution; ``m`` is ``(N, 1, H, W)`` or ``(N, C, H, W)``.

    Returns ``(y, m_out)`` with ``m_out`` of shape ``(N, 1, Ho, Wo)``.
    """
    x, m = np.asarray(x), np.asarray(m, dtype=np.asarray(x).dtype)
    _check_binary(m)
    y, m_out, _ = pconv_cn_forward(_cn(x), _cn(m), w, b, stride)
    return _cn(y), _cn(m_out)


def partial_conv2d_backward(x, m, w, b, dy, stride=1):
    x, m = np.asarray(x), np.asarray(m, dtype=np.asarray(x).dtype)
    _check_binary(m)
    xc = _cn(x)
    _, _, cache = pconv_cn_forward(xc, _cn(m), w, b, stride)
    dx, dw, db = pconv_cn_backward(_cn(dy), cache, xc.shape, w, stride)
    return _cn(dx), dw, db
