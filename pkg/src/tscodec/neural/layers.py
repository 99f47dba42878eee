"""1D convolution, transposed convolution, dense and leaky-ReLU with backward passes.

Tensors are ``(batch, channels, length)`` float64 arrays. Convolution weights
are ``(out_channels, in_channels, kernel)``; transposed-convolution weights are
``(in_channels, out_channels, kernel)`` so that a transposed convolution with
weight ``w`` is exactly the adjoint of the convolution with the same ``w``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided


class ShapeError(ValueError):
    pass


def conv_out_len(length: int, kernel: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - kernel) // stride + 1


def _windows(xp: np.ndarray, kernel: int, stride: int, out_len: int) -> np.ndarray:
    """Strided view ``(B, C, out_len, kernel)`` of a padded input."""
    b, c, _ = xp.shape
    s0, s1, s2 = xp.strides
    return as_strided(xp, (b, c, out_len, kernel), (s0, s1, s2 * stride, s2), writeable=False)


def _scatter_windows(cols: np.ndarray, padded_len: int, stride: int) -> np.ndarray:
    """Adjoint of :func:`_windows`: sum ``(B, L_out, C, K)`` columns back onto positions."""
    b, out_len, c, k = cols.shape
    xp = np.zeros((b, c, padded_len))
    stop = stride * (out_len - 1) + 1
    for j in range(k):
        xp[:, :, j : j + stop : stride] += cols[:, :, :, j].transpose(0, 2, 1)
    return xp


def _check(x: np.ndarray, w: np.ndarray, axis_c: int, what: str) -> None:
    if x.ndim != 3 or w.ndim != 3:
        raise ShapeError(f"{what}: expected 3-d input and weights, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[axis_c]:
        raise ShapeError(f"{what}: input has {x.shape[1]} channels, weights expect {w.shape[axis_c]}")


def conv1d_forward(x, w, b=None, stride: int = 1, padding: int = 0) -> np.ndarray:
    """Cross-correlation of ``x`` with ``w`` after zero padding on both sides."""
    _check(x, w, 1, "conv1d")
    k = w.shape[2]
    out_len = conv_out_len(x.shape[2], k, stride, padding)
    if out_len < 1:
        raise ShapeError(f"conv1d: input length {x.shape[2]} too short for kernel {k}")
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else np.ascontiguousarray(x)
    cols = _windows(xp, k, stride, out_len)
    out = np.tensordot(cols, w, axes=([1, 3], [1, 2])).transpose(0, 2, 1)
    if b is not None:
        out = out + b[None, :, None]
    return np.ascontiguousarray(out)


def conv1d_backward(gout, x, w, stride: int = 1, padding: int = 0):
    """Gradients ``(gx, gw, gb)`` of a conv1d given the upstream gradient."""
    k = w.shape[2]
    out_len = gout.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding))) if padding else np.ascontiguousarray(x)
    cols = _windows(xp, k, stride, out_len)
    gw = np.tensordot(gout, cols, axes=([0, 2], [0, 2]))
    gb = gout.sum(axis=(0, 2))
    gcols = np.tensordot(gout.transpose(0, 2, 1), w, axes=([2], [0]))  # (B, L_out, C, K)
    gxp = _scatter_windows(gcols, xp.shape[2], stride)
    gx = gxp[:, :, padding : padding + x.shape[2]]
    return np.ascontiguousarray(gx), gw, gb


def tconv_out_len(length: int, kernel: int, stride: int, padding: int) -> int:
    return (length - 1) * stride - 2 * padding + kernel


def transposed_conv1d_forward(y, w, b=None, stride: int = 1, padding: int = 0, out_len: int | None = None):
    """Adjoint of :func:`conv1d_forward` (plus bias).

    ``out_len`` selects among the input lengths that a convolution with these
    settings maps onto ``y``'s length; the default is the shortest one.
    """
    _check(y, w, 0, "transposed_conv1d")
    k = w.shape[2]
    if out_len is None:
        out_len = tconv_out_len(y.shape[2], k, stride, padding)
    if out_len < 1 or conv_out_len(out_len, k, stride, padding) != y.shape[2]:
        raise ShapeError(
            f"transposed_conv1d: output length {out_len} is not mapped to {y.shape[2]} "
            f"by a stride-{stride} kernel-{k} padding-{padding} convolution"
        )
    gcols = np.tensordot(y.transpose(0, 2, 1), w, axes=([2], [0]))  # (B, L_in, C_out, K)
    xp = _scatter_windows(gcols, out_len + 2 * padding, stride)
    out = xp[:, :, padding : padding + out_len]
    if b is not None:
        out = out + b[None, :, None]
    return np.ascontiguousarray(out)


def transposed_conv1d_backward(gout, y, w, stride: int = 1, padding: int = 0):
    """Gradients ``(gy, gw, gb)`` of a transposed conv1d."""
    k = w.shape[2]
    gp = np.pad(gout, ((0, 0), (0, 0), (padding, padding))) if padding else np.ascontiguousarray(gout)
    cols = _windows(gp, k, stride, y.shape[2])  # (B, C_out, L_in, K)
    # gy[b, o, t] = sum_{c, k} w[o, c, k] * gp[b, c, t*stride + k]
    gy = np.tensordot(cols, w, axes=([1, 3], [1, 2])).transpose(0, 2, 1)
    gw = np.tensordot(y, cols, axes=([0, 2], [0, 2]))
    gb = gout.sum(axis=(0, 2))
    return np.ascontiguousarray(gy), gw, gb


def dense_forward(x, w, b):
    return x @ w.T + b


def dense_backward(gout, x, w):
    return gout @ w, gout.T @ x, gout.sum(axis=0)


def leaky_forward(h, slope: float):
    return np.where(h > 0, h, slope * h)


def leaky_backward(gout, h, slope: float):
    return gout * np.where(h > 0, 1.0, slope)
