"""Single-sample tensor ops with exact hand-derived backward passes.

Tensors are (channels, height, width) numpy arrays. Convolutions are
cross-correlations. Backward functions are the analytic adjoints of the
forwards and preserve the input dtype, so the same code paths run in
float32 for training and float64 for finite-difference verification.
"""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError


def _pad_hw(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad)))


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Read-only (C, OH, OW, kh, kw) view of sliding windows."""
    c, h, w = xp.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    s0, s1, s2 = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, (c, oh, ow, kh, kw), (s0, stride * s1, stride * s2, s1, s2), writeable=False
    )


def conv2d_forward(
    x: np.ndarray, weights: np.ndarray, bias: np.ndarray, stride: int = 1, pad: int = 0
) -> np.ndarray:
    """Cross-correlate ``x`` (Cin,H,W) with ``weights`` (Cout,Cin,kh,kw)."""
    cout, cin, kh, kw = weights.shape
    if x.ndim != 3 or x.shape[0] != cin:
        raise ArgumentError(f"input shape {x.shape} does not match {cin} weight channels")
    xp = _pad_hw(x, pad)
    if xp.shape[1] < kh or xp.shape[2] < kw:
        raise ArgumentError(f"kernel {kh}x{kw} does not fit padded input {xp.shape[1:]}")
    win = _windows(xp, kh, kw, stride)
    out = np.einsum("ihwkl,oikl->ohw", win, weights, optimize=True)
    return out + bias[:, None, None]


def conv2d_backward(
    x: np.ndarray,
    weights: np.ndarray,
    grad_out: np.ndarray,
    stride: int = 1,
    pad: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d_forward w.r.t. (input, weights, bias)."""
    cout, cin, kh, kw = weights.shape
    if x.shape[0] != cin or grad_out.shape[0] != cout:
        raise ArgumentError(
            f"shapes {x.shape}/{grad_out.shape} do not match weights {weights.shape}"
        )
    xp = _pad_hw(x, pad)
    win = _windows(xp, kh, kw, stride)
    oh, ow = grad_out.shape[1:]
    if win.shape[1:3] != (oh, ow):
        raise ArgumentError(f"grad_out spatial {grad_out.shape[1:]} != forward {win.shape[1:3]}")
    grad_b = grad_out.sum(axis=(1, 2))
    grad_w = np.einsum("ihwkl,ohw->oikl", win, grad_out, optimize=True)
    grad_xp = np.zeros_like(xp)
    for ki in range(kh):
        for kj in range(kw):
            contrib = np.einsum("oi,ohw->ihw", weights[:, :, ki, kj], grad_out, optimize=True)
            grad_xp[:, ki : ki + stride * oh : stride, kj : kj + stride * ow : stride] += contrib
    grad_x = grad_xp if pad == 0 else grad_xp[:, pad:-pad, pad:-pad]
    return grad_x, grad_w, grad_b


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * (x > 0)


def maxpool_forward(
    x: np.ndarray, size: int = 2, stride: int = 2
) -> tuple[np.ndarray, np.ndarray]:
    """Per-window maximum; ties go to the first element in row-major order.

    Returns (pooled, argmax) where argmax holds flat row-major in-window
    indices, as consumed by :func:`maxpool_backward`.
    """
    c, h, w = x.shape
    if h < size or w < size:
        raise ArgumentError(f"input {h}x{w} smaller than pool window {size}")
    win = _windows(x, size, size, stride)
    flat = win.reshape(*win.shape[:3], size * size)
    idx = np.argmax(flat, axis=3)
    out = np.take_along_axis(flat, idx[..., None], axis=3)[..., 0]
    return out, idx


def maxpool_backward(
    grad_out: np.ndarray,
    argmax: np.ndarray,
    input_shape: tuple[int, int, int],
    size: int = 2,
    stride: int = 2,
) -> np.ndarray:
    """Route each window's gradient to its stored argmax position."""
    c, oh, ow = grad_out.shape
    grad_x = np.zeros(input_shape, dtype=grad_out.dtype)
    rows = (np.arange(oh) * stride)[None, :, None] + argmax // size
    cols = (np.arange(ow) * stride)[None, None, :] + argmax % size
    chan = np.arange(c)[:, None, None]
    np.add.at(grad_x, (np.broadcast_to(chan, argmax.shape), rows, cols), grad_out)
    return grad_x


def deconv_forward(x: np.ndarray, weights: np.ndarray, stride: int) -> np.ndarray:
    """Transposed convolution: ``x`` (Cin,H,W), ``weights`` (Cin,Cout,kh,kw).

    Output spatial size is (H-1)*stride + kh by (W-1)*stride + kw.
    """
    if stride < 1:
        raise ArgumentError(f"stride must be >= 1, got {stride}")
    cin, cout, kh, kw = weights.shape
    if x.ndim != 3 or x.shape[0] != cin:
        raise ArgumentError(f"input shape {x.shape} does not match {cin} weight channels")
    _, h, w = x.shape
    out = np.zeros((cout, (h - 1) * stride + kh, (w - 1) * stride + kw), dtype=x.dtype)
    for ki in range(kh):
        for kj in range(kw):
            contrib = np.einsum("io,ihw->ohw", weights[:, :, ki, kj], x, optimize=True)
            out[:, ki : ki + stride * h : stride, kj : kj + stride * w : stride] += contrib
    return out


def deconv_backward(
    x: np.ndarray, weights: np.ndarray, grad_out: np.ndarray, stride: int
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of deconv_forward w.r.t. (input, weights)."""
    cin, cout, kh, kw = weights.shape
    _, h, w = x.shape
    expected = ((h - 1) * stride + kh, (w - 1) * stride + kw)
    if grad_out.shape != (cout, *expected):
        raise ArgumentError(f"grad_out shape {grad_out.shape} != {(cout, *expected)}")
    win = _windows(grad_out, kh, kw, stride)
    grad_x = np.einsum("ohwkl,iokl->ihw", win, weights, optimize=True)
    grad_w = np.einsum("ihw,ohwkl->iokl", x, win, optimize=True)
    return grad_x, grad_w


def bilinear_kernel(channels: int, size: int, dtype=np.float64) -> np.ndarray:
    """Per-channel bilinear upsampling kernel of shape (ch, ch, size, size).

    With stride = size/2 this kernel is a partition of unity: a constant
    map upsamples to the same constant everywhere in the interior.
    """
    factor = (size + 1) // 2
    center = factor - 1 if size % 2 == 1 else factor - 0.5
    og = np.ogrid[:size, :size]
    filt = (1 - np.abs(og[0] - center) / factor) * (1 - np.abs(og[1] - center) / factor)
    w = np.zeros((channels, channels, size, size), dtype=dtype)
    w[np.arange(channels), np.arange(channels)] = filt.astype(dtype)
    return w


def softmax_forward(x: np.ndarray) -> np.ndarray:
    """Per-pixel softmax over the channel axis."""
    z = x - x.max(axis=0, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=0, keepdims=True)


def softmax_backward(y: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient through softmax given its output ``y``."""
    dot = (grad_out * y).sum(axis=0, keepdims=True)
    return y * (grad_out - dot)
