"""Differentiable image and embedding operators built on :class:`Tensor`.

Convolutions go through an im2col layout ``(N, Ho, Wo, C, kh, kw)`` so both the
forward pass and the weight gradient are single matrix products.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor

PAD_MODES = ("zero", "reflect")


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible with an operator."""


# --------------------------------------------------------------------- helpers
def _im2col(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # x: (N, C, H, W) already padded -> (N, Ho, Wo, C, kh, kw), contiguous
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))


def _col2im(cols: np.ndarray, out_shape: tuple, stride: int) -> np.ndarray:
    # cols: (C, kh, kw, N, Ho, Wo) -> summed into (N, C, H, W)
    c, kh, kw, n, ho, wo = cols.shape
    buf = np.zeros((c, n, out_shape[2], out_shape[3]), dtype=cols.dtype)
    h_span = stride * (ho - 1) + 1
    w_span = stride * (wo - 1) + 1
    for i in range(kh):
        for j in range(kw):
            buf[:, :, i : i + h_span : stride, j : j + w_span : stride] += cols[:, i, j]
    return np.ascontiguousarray(buf.transpose(1, 0, 2, 3))


def _fold_reflect(g: np.ndarray, p: int, axis: int) -> np.ndarray:
    n = g.shape[axis] - 2 * p
    core = np.take(g, np.arange(p, p + n), axis=axis).copy()
    for k in range(1, p + 1):
        # padded index p-k mirrors source k; padded p+n-1+k mirrors n-1-k
        idx_lo = [slice(None)] * g.ndim
        idx_lo[axis] = k
        src_lo = [slice(None)] * g.ndim
        src_lo[axis] = p - k
        core[tuple(idx_lo)] += g[tuple(src_lo)]
        idx_hi = [slice(None)] * g.ndim
        idx_hi[axis] = n - 1 - k
        src_hi = [slice(None)] * g.ndim
        src_hi[axis] = p + n - 1 + k
        core[tuple(idx_hi)] += g[tuple(src_hi)]
    return core


# ------------------------------------------------------------------- padding
def pad2d(x: Tensor, padding: int, mode: str = "zero") -> Tensor:
    """Pad the two trailing spatial axes of an NCHW tensor."""
    if mode not in PAD_MODES:
        raise ValueError(f"padding_type must be one of {PAD_MODES}, got {mode!r}")
    if padding == 0:
        return x
    p = padding
    h, w = x.shape[2], x.shape[3]
    if mode == "reflect" and (p >= h or p >= w):
        raise ShapeError(f"reflect padding {p} needs spatial size > {p}, got H={h}, W={w}")
    np_mode = "constant" if mode == "zero" else "reflect"
    out = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)), mode=np_mode)

    def back(g):
        if mode == "zero":
            return (g[:, :, p : p + h, p : p + w],)
        return (_fold_reflect(_fold_reflect(g, p, 3), p, 2),)

    return Tensor._make(out, (x,), back)


# --------------------------------------------------------------- convolution
def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    padding_type: str = "zero",
) -> Tensor:
    """Cross-correlation of ``x`` (N, C, H, W) with ``weight`` (O, C, kh, kw)."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be NCHW, got shape {x.shape}")
    if weight.ndim != 4:
        raise ShapeError(f"conv2d weight must be (O, C, kh, kw), got shape {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"conv2d channel mismatch: input axis 1 has {x.shape[1]} channels, "
            f"weight axis 1 expects {weight.shape[1]}"
        )
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    xp = pad2d(x, padding, padding_type)
    o, c, kh, kw = weight.shape
    n, _, hp, wp = xp.shape
    if hp < kh or wp < kw:
        raise ShapeError(f"conv2d kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    cols = _im2col(xp.data, kh, kw, stride)
    ho, wo = cols.shape[1], cols.shape[2]
    cols2 = cols.reshape(n * ho * wo, c * kh * kw)
    wmat = weight.data.reshape(o, -1)
    out = cols2 @ wmat.T
    if bias is not None:
        out += bias.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    xp_shape = xp.shape
    parents = (xp, weight) if bias is None else (xp, weight, bias)

    def back(g):
        gc = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(o, n * ho * wo)
        gw = (gc @ cols2).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if xp.requires_grad:
            gcols = (wmat.T @ gc).reshape(c, kh, kw, n, ho, wo)
            gx = _col2im(gcols, xp_shape, stride)
        if bias is None:
            return gx, gw
        return gx, gw, gc.sum(axis=1)

    return Tensor._make(np.ascontiguousarray(out), parents, back)


def conv_transpose2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    output_padding: int = 0,
) -> Tensor:
    """Transposed convolution; ``weight`` is laid out (C_in, C_out, kh, kw).

    Output side is ``(in - 1) * stride - 2 * padding + kernel + output_padding``.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv_transpose2d expects NCHW input and 4-d weight, got {x.shape}, {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError(
            f"conv_transpose2d channel mismatch: input axis 1 has {x.shape[1]} channels, "
            f"weight axis 0 expects {weight.shape[0]}"
        )
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if output_padding >= max(stride, 1) and output_padding > 0:
        raise ShapeError(f"output_padding {output_padding} must be smaller than stride {stride}")
    n, cin, h, w = x.shape
    _, cout, kh, kw = weight.shape
    full_h = (h - 1) * stride + kh
    full_w = (w - 1) * stride + kw
    out_h = full_h - 2 * padding + output_padding
    out_w = full_w - 2 * padding + output_padding
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"conv_transpose2d output would be empty ({out_h}x{out_w})")
    xmat = x.data.transpose(0, 2, 3, 1).reshape(n * h * w, cin)
    wmat = weight.data.reshape(cin, cout * kh * kw)
    xc = np.ascontiguousarray(x.data.transpose(1, 0, 2, 3)).reshape(cin, n * h * w)
    cols = (wmat.T @ xc).reshape(cout, kh, kw, n, h, w)
    buf_shape = (n, cout, full_h + output_padding, full_w + output_padding)
    full = _col2im(cols, buf_shape, stride)
    out = full[:, :, padding : padding + out_h, padding : padding + out_w]
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        gfull = np.zeros(buf_shape, dtype=g.dtype)
        gfull[:, :, padding : padding + out_h, padding : padding + out_w] = g
        gcols = _im2col(gfull[:, :, :full_h, :full_w], kh, kw, stride)  # (N, h, w, Cout, kh, kw)
        gcols2 = gcols.reshape(n * h * w, cout * kh * kw)
        gx = (gcols2 @ wmat.T).reshape(n, h, w, cin).transpose(0, 3, 1, 2) if x.requires_grad else None
        gw = (xmat.T @ gcols2).reshape(weight.shape) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return Tensor._make(np.ascontiguousarray(out), parents, back)


# -------------------------------------------------------------- normalisation
def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel standardisation over H and W (no affine)."""
    if x.ndim != 4:
        raise ShapeError(f"instance_norm expects NCHW, got {x.shape}")
    a = x.data
    mu = a.mean(axis=(2, 3), keepdims=True)
    xc = a - mu
    var = (xc * xc).mean(axis=(2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv

    def back(g):
        gm = g.mean(axis=(2, 3), keepdims=True)
        gy = (g * y).mean(axis=(2, 3), keepdims=True)
        return (inv * (g - gm - y * gy),)

    return Tensor._make(y.astype(a.dtype, copy=False), (x,), back)


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    a = x.data
    norm = np.sqrt((a * a).sum(axis=axis, keepdims=True))
    denom = np.maximum(norm, eps)
    y = a / denom
    clipped = norm < eps

    def back(g):
        proj = (g * y).sum(axis=axis, keepdims=True)
        return (np.where(clipped, g / denom, (g - y * proj) / denom),)

    return Tensor._make(y, (x,), back)


# ----------------------------------------------------------------- pooling
def global_max_pool(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, C); ties route the gradient to the first row-major max."""
    n, c, h, w = x.shape
    return x.reshape(n, c, h * w).max(axis=-1)


# ------------------------------------------------------------------- dense
def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` shaped (out_features, in_features)."""
    if x.shape[-1] != weight.shape[-1]:
        raise ShapeError(
            f"linear: input last axis has {x.shape[-1]} features, weight expects {weight.shape[-1]}"
        )
    out = x @ weight.T
    if bias is not None:
        out = out + bias
    return out


# ------------------------------------------------------------- activations
def relu(x: Tensor) -> Tensor:
    return x.relu()


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    return x.leaky_relu(slope)


def tanh(x: Tensor) -> Tensor:
    return x.tanh()


def sigmoid(x: Tensor) -> Tensor:
    return x.sigmoid()
