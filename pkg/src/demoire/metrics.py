"""Image fidelity metrics on [0, 1] tensors."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .tensor import Tensor

PSNR_CAP_DB = 100.0
_MSE_FLOOR = 1e-10

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def psnr(a: Tensor, b: Tensor) -> float:
    """Peak signal-to-noise ratio in dB against a unit dynamic range."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a.data - b.data) ** 2))
    if mse < _MSE_FLOOR:
        return PSNR_CAP_DB
    return float(10.0 * np.log10(1.0 / mse))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def _windowed_moments(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    """Gaussian-weighted window means of a 2-D map (valid positions only)."""
    k = win.shape[0]
    view = np.lib.stride_tricks.sliding_window_view(x, (k, k))
    return np.einsum("hwij,ij->hw", view, win)


def ssim(a: Tensor, b: Tensor) -> float:
    """Structural similarity with an 11x11 Gaussian window, per channel,
    averaged over channels and batch."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    n, c, h, w = a.shape
    k = SSIM_WINDOW
    if h < k or w < k:
        raise ShapeError(f"images must be at least {k}x{k} for SSIM, got {h}x{w}")
    win = gaussian_window()
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    vals = []
    for i in range(n):
        for ch in range(c):
            x = a.data[i, ch]
            y = b.data[i, ch]
            mu_x = _windowed_moments(x, win)
            mu_y = _windowed_moments(y, win)
            xx = _windowed_moments(x * x, win)
            yy = _windowed_moments(y * y, win)
            xy = _windowed_moments(x * y, win)
            var_x = xx - mu_x * mu_x
            var_y = yy - mu_y * mu_y
            cov = xy - mu_x * mu_y
            num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2)
            den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
            vals.append((num / den).mean())
    return float(np.mean(vals))
