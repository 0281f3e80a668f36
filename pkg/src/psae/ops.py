"""Differentiable building blocks for the encoder/decoder network.

All functions take and return :class:`~psae.tensor.Tensor` and register
their backward closures on the tape. Shapes follow the (batch, channel,
height, width) convention for image ops.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit

from .tensor import ShapeError, Tensor

__all__ = [
    "ConvTransposeSpec",
    "BatchNormState",
    "dense",
    "conv_transpose2d",
    "batch_norm",
    "leaky_relu",
    "sigmoid",
    "avg_pool2",
    "uniform_window_mean",
    "weighted_window_mean",
]


@dataclass(frozen=True)
class ConvTransposeSpec:
    """Geometry of one transposed-convolution stage.

    Output height is ``(H_in - 1) * stride - 2 * padding + kernel +
    output_padding`` (same along width); it must come out positive.
    """

    in_channels: int
    out_channels: int
    kernel: Tuple[int, int]
    stride: Tuple[int, int] = (1, 1)
    padding: Tuple[int, int] = (0, 0)
    output_padding: Tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.in_channels <= 0 or self.out_channels <= 0:
            raise ValueError(f"channel counts must be positive, got "
                             f"{self.in_channels}->{self.out_channels}")
        for name in ("kernel", "stride", "padding", "output_padding"):
            value = getattr(self, name)
            if len(value) != 2 or any(int(v) != v for v in value):
                raise ValueError(f"{name} must be a pair of ints, got {value}")
        if any(k <= 0 for k in self.kernel) or any(s <= 0 for s in self.stride):
            raise ValueError(f"kernel {self.kernel} and stride {self.stride} must be positive")
        if any(p < 0 for p in self.padding) or any(o < 0 for o in self.output_padding):
            raise ValueError("padding and output_padding must be non-negative")
        if not all(o < s for o, s in zip(self.output_padding, self.stride)):
            raise ValueError(f"output_padding {self.output_padding} must be < "
                             f"stride {self.stride} elementwise")

    @property
    def weight_shape(self) -> Tuple[int, int, int, int]:
        return (self.in_channels, self.out_channels, *self.kernel)

    def output_size(self, in_size: Tuple[int, int]) -> Tuple[int, int]:
        out = tuple((n - 1) * s - 2 * p + k + o
                    for n, s, p, k, o in zip(in_size, self.stride, self.padding,
                                             self.kernel, self.output_padding))
        if any(n <= 0 for n in out):
            raise ValueError(f"transposed conv with {self} maps input {in_size} "
                             f"to non-positive output {out}")
        return out

    def parameter_count(self) -> int:
        kh, kw = self.kernel
        return self.in_channels * self.out_channels * kh * kw + self.out_channels


def dense(inp: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """Fully-connected layer: ``out[b, j] = sum_i inp[b, i] w[i, j] + bias[j]``."""
    if inp.ndim != 2 or weights.ndim != 2 or inp.shape[1] != weights.shape[0]:
        raise ShapeError(f"dense: input {inp.shape} does not conform to "
                         f"weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ShapeError(f"dense: bias {bias.shape} does not conform to "
                         f"weights {weights.shape}")
    return inp @ weights + bias


def conv_transpose2d(inp: Tensor, spec: ConvTransposeSpec,
                     weights: Tensor, bias: Tensor) -> Tensor:
    """Transposed 2D convolution (scatter-accumulate of stride-spaced kernels).

    ``weights`` has shape (in_channels, out_channels, kh, kw). The gradient
    w.r.t. the input is the corresponding forward convolution with the same
    kernel; weight and bias gradients are the matching correlations.
    """
    if inp.ndim != 4:
        raise ShapeError(f"conv_transpose2d: input must be 4D, got {inp.shape}")
    if weights.shape != spec.weight_shape:
        raise ShapeError(f"conv_transpose2d: weights {weights.shape} do not match "
                         f"spec {spec.weight_shape}")
    if bias.shape != (spec.out_channels,):
        raise ShapeError(f"conv_transpose2d: bias {bias.shape} does not match "
                         f"out_channels {spec.out_channels}")
    if inp.shape[1] != spec.in_channels:
        raise ShapeError(f"conv_transpose2d: input {inp.shape} does not match "
                         f"in_channels {spec.in_channels}")

    B, Cin, H, W = inp.shape
    Cout = spec.out_channels
    kh, kw = spec.kernel
    sh, sw = spec.stride
    ph, pw = spec.padding
    H_out, W_out = spec.output_size((H, W))
    # scatter canvas before padding crop / output_padding extension
    SH, SW = (H - 1) * sh + kh, (W - 1) * sw + kw
    if SH - 2 * ph < 1 or SW - 2 * pw < 1:
        raise ValueError(f"transposed conv with {spec} has an empty kernel footprint "
                         f"for input {(H, W)}")

    x = inp.data
    w = weights.data
    K = Cout * kh * kw
    xm = x.reshape(B, Cin, H * W)
    wm = w.reshape(Cin, K)

    cols = np.matmul(wm.T[None], xm).reshape(B, Cout, kh, kw, H, W)
    full = np.zeros((B, Cout, SH, SW), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            full[:, :, i:i + sh * H:sh, j:j + sw * W:sw] += cols[:, :, i, j]

    out_data = np.zeros((B, Cout, H_out, W_out), dtype=full.dtype)
    out_data[:, :, :SH - 2 * ph, :SW - 2 * pw] = full[:, :, ph:SH - ph, pw:SW - pw]
    out_data += bias.data.reshape(1, Cout, 1, 1)

    def backward(g):
        gfull = np.zeros((B, Cout, SH, SW), dtype=g.dtype)
        gfull[:, :, ph:SH - ph, pw:SW - pw] = g[:, :, :SH - 2 * ph, :SW - 2 * pw]
        gstack = np.empty((B, Cout, kh, kw, H, W), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gstack[:, :, i, j] = gfull[:, :, i:i + sh * H:sh, j:j + sw * W:sw]
        gmat = gstack.reshape(B, K, H * W)
        if inp.requires_grad:
            inp._accumulate(np.matmul(wm[None], gmat).reshape(B, Cin, H, W))
        if weights.requires_grad:
            xt = xm.transpose(1, 0, 2).reshape(Cin, B * H * W)
            gt = gmat.transpose(0, 2, 1).reshape(B * H * W, K)
            weights._accumulate((xt @ gt).reshape(Cin, Cout, kh, kw))
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))

    return Tensor._make(out_data, (inp, weights, bias), backward)


class BatchNormState:
    """Running mean/variance for one batch-norm layer (inference statistics)."""

    def __init__(self, channels: int, momentum: float = 0.99, eps: float = 1e-5,
                 dtype=np.float32):
        self.channels = channels
        self.momentum = float(momentum)
        self.eps = float(eps)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def update(self, batch_mean: np.ndarray, batch_var: np.ndarray) -> None:
        m = self.momentum
        self.running_mean = (m * self.running_mean
                             + (1.0 - m) * batch_mean.astype(self.running_mean.dtype))
        self.running_var = (m * self.running_var
                            + (1.0 - m) * batch_var.astype(self.running_var.dtype))


def batch_norm(inp: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
               mode: str = "train") -> Tensor:
    """Per-channel batch normalization over (batch, height, width).

    Train mode normalizes by the biased batch statistics and folds them into
    the running statistics; infer mode uses the running statistics only.
    """
    if inp.ndim != 4:
        raise ShapeError(f"batch_norm: input must be 4D, got {inp.shape}")
    C = inp.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"batch_norm: gamma {gamma.shape} / beta {beta.shape} "
                         f"do not match {C} channels")
    if mode not in ("train", "infer"):
        raise ValueError(f"batch_norm mode must be 'train' or 'infer', got {mode!r}")

    g = gamma.reshape(1, C, 1, 1)
    b = beta.reshape(1, C, 1, 1)
    if mode == "train":
        if inp.shape[0] < 2:
            raise ValueError(f"batch_norm in train mode needs batch >= 2 "
                             f"(variance undefined), got {inp.shape[0]}")
        mu = inp.mean(axis=(0, 2, 3), keepdims=True)
        centered = inp - mu
        var = (centered * centered).mean(axis=(0, 2, 3), keepdims=True)
        state.update(mu.data.reshape(C), var.data.reshape(C))
        inv = (var + state.eps) ** -0.5
        return centered * inv * g + b
    mean = Tensor(state.running_mean.reshape(1, C, 1, 1).astype(inp.dtype))
    inv = Tensor((1.0 / np.sqrt(state.running_var + state.eps))
                 .reshape(1, C, 1, 1).astype(inp.dtype))
    return (inp - mean) * inv * g + b


def leaky_relu(inp: Tensor, slope: float = 0.2) -> Tensor:
    """x for x >= 0, slope * x otherwise."""
    mask = inp.data >= 0
    out_data = np.where(mask, inp.data, slope * inp.data)

    def backward(g):
        inp._accumulate(g * np.where(mask, 1.0, slope).astype(g.dtype))

    return Tensor._make(out_data, (inp,), backward)


def sigmoid(inp: Tensor) -> Tensor:
    """Logistic function, clipped away from the saturation values so the
    output stays strictly inside (0, 1) even where float rounding saturates."""
    eps = np.finfo(inp.dtype).eps
    out_data = np.clip(expit(inp.data), eps, 1.0 - eps)

    def backward(g):
        inp._accumulate(g * out_data * (1.0 - out_data))

    return Tensor._make(out_data.astype(inp.dtype, copy=False), (inp,), backward)


def avg_pool2(inp: Tensor) -> Tensor:
    """Mean over non-overlapping 2x2 blocks on the last two axes.

    Odd extents are replicate-padded with the trailing row/column first; the
    returned tensor's ``meta['replicated']`` records the applied padding.
    """
    if inp.ndim < 2:
        raise ShapeError(f"avg_pool2: input must be at least 2D, got {inp.shape}")
    H, W = inp.shape[-2:]
    pad_h, pad_w = H % 2, W % 2
    x = inp.data
    if pad_h:
        x = np.concatenate([x, x[..., -1:, :]], axis=-2)
    if pad_w:
        x = np.concatenate([x, x[..., :, -1:]], axis=-1)
    lead = x.shape[:-2]
    H2, W2 = x.shape[-2] // 2, x.shape[-1] // 2
    out_data = x.reshape(*lead, H2, 2, W2, 2).mean(axis=(-3, -1))

    def backward(g):
        gx = np.repeat(np.repeat(g * 0.25, 2, axis=-2), 2, axis=-1)
        if pad_h:
            gx[..., -2, :] += gx[..., -1, :]
            gx = gx[..., :-1, :]
        if pad_w:
            gx[..., :, -2] += gx[..., :, -1]
            gx = gx[..., :, :-1]
        inp._accumulate(np.ascontiguousarray(gx))

    out = Tensor._make(out_data, (inp,), backward)
    if pad_h or pad_w:
        out.meta = {"replicated": (pad_h, pad_w)}
    return out


def _box_sums(arr: np.ndarray, k: int) -> np.ndarray:
    """Valid-mode k x k window sums over the last two axes (float64 inner)."""
    c = arr.cumsum(axis=-2, dtype=np.float64).cumsum(axis=-1)
    pad = [(0, 0)] * (arr.ndim - 2) + [(1, 0), (1, 0)]
    c = np.pad(c, pad)
    s = c[..., k:, k:] - c[..., :-k, k:] - c[..., k:, :-k] + c[..., :-k, :-k]
    return s.astype(arr.dtype, copy=False)


def uniform_window_mean(inp: Tensor, size: int, stride: int = 1) -> Tensor:
    """Mean over dense sliding size x size windows (valid mode, uniform weights)."""
    H, W = inp.shape[-2:]
    if H < size or W < size:
        raise ShapeError(f"window size {size} exceeds image {(H, W)}")
    inv = 1.0 / (size * size)
    out_data = _box_sums(inp.data, size)[..., ::stride, ::stride] * inv

    def backward(g):
        canvas = np.zeros(inp.shape[:-2] + (H - size + 1, W - size + 1), dtype=g.dtype)
        canvas[..., ::stride, ::stride] = g
        pad = [(0, 0)] * (inp.ndim - 2) + [(size - 1, size - 1)] * 2
        inp._accumulate(_box_sums(np.pad(canvas, pad), size) * inv)

    return Tensor._make(np.ascontiguousarray(out_data), (inp,), backward)


def weighted_window_mean(inp: Tensor, window: np.ndarray, stride: int = 1) -> Tensor:
    """Weighted mean over sliding windows with a fixed (non-trainable) kernel.

    ``window`` is normalized to unit sum; the Gaussian option of the
    similarity loss goes through here.
    """
    k = window.shape[0]
    if window.shape != (k, k):
        raise ShapeError(f"window must be square, got {window.shape}")
    H, W = inp.shape[-2:]
    if H < k or W < k:
        raise ShapeError(f"window size {k} exceeds image {(H, W)}")
    kern = (window / window.sum()).astype(inp.dtype)

    view = np.lib.stride_tricks.sliding_window_view(inp.data, (k, k), axis=(-2, -1))
    out_data = np.einsum("...ij,ij->...", view[..., ::stride, ::stride, :, :], kern,
                         optimize=True)

    def backward(g):
        canvas = np.zeros(inp.shape[:-2] + (H - k + 1, W - k + 1), dtype=g.dtype)
        canvas[..., ::stride, ::stride] = g
        pad = [(0, 0)] * (inp.ndim - 2) + [(k - 1, k - 1)] * 2
        padded = np.pad(canvas, pad)
        gview = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(-2, -1))
        inp._accumulate(np.einsum("...ij,ij->...", gview, kern[::-1, ::-1],
                                  optimize=True))

    return Tensor._make(np.ascontiguousarray(out_data), (inp,), backward)
