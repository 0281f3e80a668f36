"""Multi-scale structural-similarity loss and baseline losses.

The similarity index ``h`` compares two non-negative images through windowed
luminance (l), contrast (c) and structure (s) statistics. The top scale
contributes the mean of l*c*s, every coarser-to-finer scale below it the mean
of c*s, each raised to its exponent:

    h = [mean lcs @ scale M]^alpha_M * prod_{j<M} [mean cs @ scale j]^alpha_j

Scale j is the input downsampled j times by 2x2 average pooling. All three
components are kept in [0, 1] (guaranteed for non-negative data up to the
covariance sign, which is clamped), so ``h`` lands in [0, 1] and ``1 - h``
is a well-behaved training loss. Gradients flow w.r.t. both images.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .ops import avg_pool2, uniform_window_mean, weighted_window_mean
from .tensor import ShapeError, Tensor

__all__ = [
    "MsSsimConfig",
    "WindowStats",
    "window_stats",
    "ssim_components",
    "ms_ssim",
    "scale_terms",
    "batch_loss",
    "mse_loss",
    "single_scale_ssim",
    "gaussian_window",
]

_DEFAULT_ALPHAS = (0.05, 0.30, 0.65)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalized isotropic Gaussian window weights."""
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-0.5 * (ax / sigma) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


@dataclass(frozen=True)
class MsSsimConfig:
    """Knobs of the multi-scale similarity index.

    ``top_scale`` is the coarsest scale index M; ``alphas`` holds the M+1
    exponents from scale 0 (full resolution) upward. The uniform window is
    8x8 by default; the Gaussian option (11x11, sigma 1.5) exists for the
    window-shape comparison. C3 defaults to C2/2, the symmetric choice that
    fuses contrast and structure into a single covariance ratio.
    """

    top_scale: int = 2
    alphas: Tuple[float, ...] = _DEFAULT_ALPHAS
    window: str = "uniform"
    window_size: Optional[int] = None
    window_stride: int = 1
    window_sigma: float = 1.5
    c1: float = 0.01 ** 2
    c2: float = 0.03 ** 2
    c3: Optional[float] = None

    def __post_init__(self):
        if self.top_scale < 0:
            raise ValueError(f"top_scale must be >= 0, got {self.top_scale}")
        if len(self.alphas) != self.top_scale + 1:
            raise ValueError(f"need {self.top_scale + 1} exponents for "
                             f"top_scale {self.top_scale}, got {len(self.alphas)}")
        if any(a < 0 for a in self.alphas):
            raise ValueError(f"exponents must be non-negative, got {self.alphas}")
        if self.window not in ("uniform", "gaussian"):
            raise ValueError(f"window must be 'uniform' or 'gaussian', got {self.window!r}")
        if self.window_stride < 1:
            raise ValueError(f"window_stride must be >= 1, got {self.window_stride}")

    @property
    def size(self) -> int:
        if self.window_size is not None:
            return self.window_size
        return 8 if self.window == "uniform" else 11

    @property
    def c3_value(self) -> float:
        return self.c2 / 2.0 if self.c3 is None else self.c3

    def weights(self) -> Optional[np.ndarray]:
        """Explicit window weights, or None for the uniform fast path."""
        if self.window == "uniform":
            return None
        return gaussian_window(self.size, self.window_sigma)


def _window_mean(t: Tensor, config: MsSsimConfig) -> Tensor:
    w = config.weights()
    if w is None:
        return uniform_window_mean(t, config.size, config.window_stride)
    return weighted_window_mean(t, w, config.window_stride)


def _as_tensor(img) -> Tensor:
    return img if isinstance(img, Tensor) else Tensor(img)


def _check_pair(a: Tensor, b: Tensor, require_nonneg: bool = True) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    if require_nonneg and (a.data.min() < 0 or b.data.min() < 0):
        raise ValueError("negative pixel values; clip inputs to >= 0 before the loss")


@dataclass
class WindowStats:
    """Per-window first and second moments of an image pair."""

    mu_a: np.ndarray
    mu_b: np.ndarray
    sigma_a: np.ndarray
    sigma_b: np.ndarray
    cov: np.ndarray


def window_stats(y, y_hat, config: MsSsimConfig = MsSsimConfig()) -> WindowStats:
    """Windowed means, standard deviations and covariance (valid windows only)."""
    a, b = _as_tensor(y), _as_tensor(y_hat)
    _check_pair(a, b)
    mu_a = _window_mean(a, config).data
    mu_b = _window_mean(b, config).data
    var_a = _window_mean(a * a, config).data - mu_a * mu_a
    var_b = _window_mean(b * b, config).data - mu_b * mu_b
    cov = _window_mean(a * b, config).data - mu_a * mu_b
    return WindowStats(mu_a, mu_b,
                       np.sqrt(np.maximum(var_a, 0.0)),
                       np.sqrt(np.maximum(var_b, 0.0)), cov)


def ssim_components(stats: WindowStats,
                    config: MsSsimConfig = MsSsimConfig()) -> Tuple[np.ndarray, ...]:
    """Per-window luminance, contrast, structure; each clipped into [0, 1].

    For non-negative data only the structure term can leave the range (its
    covariance may undershoot -C3); clipping enforces the documented bounds.
    """
    c1, c2, c3 = config.c1, config.c2, config.c3_value
    lum = (2.0 * stats.mu_a * stats.mu_b + c1) / (stats.mu_a ** 2 + stats.mu_b ** 2 + c1)
    con = (2.0 * stats.sigma_a * stats.sigma_b + c2) / (stats.sigma_a ** 2
                                                        + stats.sigma_b ** 2 + c2)
    stru = (stats.cov + c3) / (stats.sigma_a * stats.sigma_b + c3)
    clip = lambda v: np.clip(v, 0.0, 1.0)
    return clip(lum), clip(con), clip(stru)


def _scale_term(a: Tensor, b: Tensor, config: MsSsimConfig,
                with_luminance: bool) -> Tensor:
    """Mean over windows of c*s (plus l at the top scale) for one scale."""
    c1, c2, c3 = config.c1, config.c2, config.c3_value
    mu_a = _window_mean(a, config)
    mu_b = _window_mean(b, config)
    var_a = _window_mean(a * a, config) - mu_a * mu_a
    var_b = _window_mean(b * b, config) - mu_b * mu_b
    cov = _window_mean(a * b, config) - mu_a * mu_b

    if c3 == c2 / 2.0:
        # algebraically fused c*s; no sqrt, safe at zero variance
        cs = (cov * 2.0 + c2) / (var_a + var_b + c2)
    else:
        sig_ab = (var_a.clamp_min(0.0) * var_b.clamp_min(0.0)).sqrt()
        con = (sig_ab * 2.0 + c2) / (var_a + var_b + c2)
        stru = (cov + c3) / (sig_ab + c3)
        cs = con * stru
    term = cs.clamp_min(0.0)
    if with_luminance:
        lum = (mu_a * mu_b * 2.0 + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
        term = lum * term
    return term.mean(axis=(-2, -1))


def _validate_scale_size(shape: Tuple[int, ...], config: MsSsimConfig) -> None:
    h, w = shape[-2:]
    for _ in range(config.top_scale):
        h, w = (h + 1) // 2, (w + 1) // 2
    if h < config.size or w < config.size:
        raise ShapeError(f"image {shape[-2:]} is smaller than the {config.size}x"
                         f"{config.size} window at scale {config.top_scale}")


def scale_terms(y, y_hat, config: MsSsimConfig = MsSsimConfig()) -> list:
    """Per-scale mean terms entering the index: [cs_0, ..., cs_{M-1}, lcs_M].

    Returned tensors have the images' leading (batch) shape; gradients flow.
    """
    a, b = _as_tensor(y), _as_tensor(y_hat)
    _check_pair(a, b)
    _validate_scale_size(a.shape, config)
    terms = []
    for j in range(config.top_scale + 1):
        if j > 0:
            a, b = avg_pool2(a), avg_pool2(b)
        terms.append(_scale_term(a, b, config, with_luminance=(j == config.top_scale)))
    return terms


def ms_ssim(y, y_hat, config: MsSsimConfig = MsSsimConfig()) -> Tensor:
    """Multi-scale similarity index in [0, 1]; 1 iff the images match.

    Accepts single images (H, W) or batches (..., H, W) compared pairwise;
    differentiable w.r.t. both inputs.
    """
    terms = scale_terms(y, y_hat, config)
    h = None
    for alpha, term in zip(config.alphas, terms):
        # floor keeps the fractional-power gradient finite when every window
        # of a scale clamps to zero (fully anticorrelated pair)
        factor = term.clamp_min(1e-12) ** float(alpha)
        h = factor if h is None else h * factor
    return h.clamp_max(1.0)


def batch_loss(y_batch, y_hat_batch, config: MsSsimConfig = MsSsimConfig()) -> Tensor:
    """Mean over the batch of (1 - h); zero for perfect predictions."""
    a, b = _as_tensor(y_batch), _as_tensor(y_hat_batch)
    if a.ndim < 3:
        raise ShapeError(f"batch loss expects (batch, H, W), got {a.shape}")
    if a.shape[0] == 0:
        raise ValueError("empty batch")
    h = ms_ssim(a, b, config)
    return (1.0 - h).mean()


def mse_loss(y_batch, y_hat_batch) -> Tensor:
    """Mean squared pixel difference over everything."""
    a, b = _as_tensor(y_batch), _as_tensor(y_hat_batch)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("empty batch")
    diff = a - b
    return (diff * diff).mean()


def single_scale_ssim(y, y_hat, config: Optional[MsSsimConfig] = None) -> Tensor:
    """Single-scale index: top_scale 0 with unit exponent, same window setup."""
    base = config if config is not None else MsSsimConfig()
    cfg = MsSsimConfig(top_scale=0, alphas=(1.0,), window=base.window,
                       window_size=base.window_size, window_stride=base.window_stride,
                       window_sigma=base.window_sigma, c1=base.c1, c2=base.c2,
                       c3=base.c3)
    return ms_ssim(y, y_hat, cfg)
