"""Inference operators on single images.

Image tensors are ``(channels, height, width)`` float32 arrays; fully
connected layers take any shape and flatten it row-major.  Arithmetic is
done in float64 and rounded to float32 on output, so results do not depend
on BLAS blocking of float32 sums.
"""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


def _pair(v):
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def conv_output_size(size, kernel, stride, pad):
    return (size + 2 * pad - kernel) // stride + 1


def pool_output_size(size, kernel, stride, pad):
    """Ceil-mode pooled size; the last window must start inside image + leading pad.

    With ``pad > 0`` this is the usual ceil-mode correction.  It is also
    applied without padding so that a stride longer than the kernel never
    yields a window lying wholly past the image.
    """
    if size + 2 * pad < kernel:
        raise ShapeError(f"pooling window {kernel} larger than padded input {size + 2 * pad}")
    out = int(math.ceil((size + 2 * pad - kernel) / stride)) + 1
    while (out - 1) * stride >= size + pad:
        out -= 1
    return out


def conv2d(x, kernel, bias=None, stride=1, pad=0, groups=1):
    """Grouped 2-D cross-correlation with zero padding.

    ``kernel`` has shape ``(out_channels, in_channels // groups, kh, kw)``.
    """
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"conv2d expects a (C, H, W) input, got shape {x.shape}")
    c, h, w = x.shape
    o, cg, kh, kw = kernel.shape
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    if groups < 1 or c % groups:
        raise ShapeError(f"in_channels {c} not divisible by groups {groups}")
    if o % groups:
        raise ShapeError(f"out_channels {o} not divisible by groups {groups}")
    if cg != c // groups:
        raise ShapeError(f"kernel in_channels {cg} != in_channels/groups {c // groups}")
    if kh > h + 2 * ph or kw > w + 2 * pw:
        raise ShapeError(f"kernel {kh}x{kw} does not fit padded input {h + 2 * ph}x{w + 2 * pw}")
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw))) if ph or pw else x
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
    oh, ow = win.shape[1:3]
    og = o // groups
    out = np.empty((o, oh, ow))
    for g in range(groups):
        cols = win[g * cg:(g + 1) * cg].transpose(1, 2, 0, 3, 4).reshape(oh * ow, cg * kh * kw)
        k = kernel[g * og:(g + 1) * og].reshape(og, -1)
        out[g * og:(g + 1) * og] = (k @ cols.T).reshape(og, oh, ow)
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)[:, None, None]
    return out.astype(np.float32)


def relu(x):
    x = np.asarray(x, dtype=np.float32)
    return np.maximum(x, np.float32(0))


def lrn(x, size=5, alpha=1e-4, beta=0.75, k=1.0):
    """Across-channel local response normalization.

    ``b_c = a_c / (k + alpha / size * sum_{c' in window(c)} a_c'^2) ** beta``
    with the window of ``size`` channels centred on ``c`` and clipped at the
    channel boundaries.
    """
    if size < 1 or size % 2 == 0:
        raise ShapeError(f"lrn size must be a positive odd number, got {size}")
    a = np.asarray(x, dtype=np.float64)
    half = size // 2
    sq = np.pad(a * a, ((half, half),) + ((0, 0),) * (a.ndim - 1))
    cs = np.concatenate([np.zeros((1,) + sq.shape[1:]), np.cumsum(sq, axis=0)])
    win = cs[size:] - cs[:-size]
    return (a / (k + alpha / size * win) ** beta).astype(np.float32)


def _pool(x, kernel, stride, pad, fill):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"pooling expects a (C, H, W) input, got shape {x.shape}")
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    if min(kh, kw, sh, sw) < 1:
        raise ShapeError("pooling kernel and stride must be >= 1")
    if ph >= kh or pw >= kw:
        raise ShapeError(f"pooling pad {pad} must be smaller than kernel {kernel}")
    _, h, w = x.shape
    oh = pool_output_size(h, kh, sh, ph)
    ow = pool_output_size(w, kw, sw, pw)
    need_h = (oh - 1) * sh + kh
    need_w = (ow - 1) * sw + kw
    xp = np.pad(x, ((0, 0), (ph, max(need_h - h - ph, 0)), (pw, max(need_w - w - pw, 0))),
                constant_values=fill)
    return sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::sh, ::sw][:, :oh, :ow]


def maxpool(x, kernel, stride=1, pad=0):
    """Ceil-mode max pooling; padded positions never win."""
    return _pool(x, kernel, stride, pad, -np.inf).max(axis=(3, 4)).astype(np.float32)


def avgpool(x, kernel, stride=1, pad=0):
    """Ceil-mode average pooling; every window is divided by the full kernel area."""
    kh, kw = _pair(kernel)
    return (_pool(x, kernel, stride, pad, 0.0).sum(axis=(3, 4)) / (kh * kw)).astype(np.float32)


def fully_connected(x, matrix, bias=None):
    """``matrix @ flatten(x) + bias`` with ``matrix`` of shape ``(out, in)``."""
    v = np.asarray(x, dtype=np.float64).ravel()
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[1] != v.size:
        raise ShapeError(f"fully connected layer expects {m.shape[-1]} inputs, got {v.size}")
    y = m @ v
    if bias is not None:
        y += np.asarray(bias, dtype=np.float64)
    return y.astype(np.float32)


def softmax(x):
    """Softmax over the leading (channel) axis."""
    a = np.asarray(x, dtype=np.float64)
    if a.size == 0:
        raise ShapeError("softmax of an empty tensor")
    e = np.exp(a - a.max(axis=0, keepdims=True))
    return (e / e.sum(axis=0, keepdims=True)).astype(np.float32)


def concat(inputs, axis=0):
    inputs = [np.asarray(t, dtype=np.float32) for t in inputs]
    if not inputs:
        raise ShapeError("concat needs at least one input")
    ref = inputs[0].shape
    for t in inputs[1:]:
        if t.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(t.shape, ref)) if i != axis):
            raise ShapeError(f"concat shapes {ref} and {t.shape} differ off axis {axis}")
    return np.concatenate(inputs, axis=axis)
