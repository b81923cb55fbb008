"""PSNR closed forms and SSIM against a direct windowed oracle."""

import numpy as np
import pytest

import demoire as dm
from demoire.errors import ShapeError
from demoire.metrics import (
    PSNR_CAP_DB,
    SSIM_K1,
    SSIM_K2,
    SSIM_WINDOW,
    gaussian_window,
    psnr,
    ssim,
)
from demoire.tensor import Tensor


def ssim_oracle(a: np.ndarray, b: np.ndarray) -> float:
    """Straightforward double-loop windowed SSIM over one 2-D channel."""
    win = gaussian_window()
    k = SSIM_WINDOW
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    h, w = a.shape
    vals = []
    for i in range(h - k + 1):
        for j in range(w - k + 1):
            x = a[i:i + k, j:j + k]
            y = b[i:i + k, j:j + k]
            mu_x = (win * x).sum()
            mu_y = (win * y).sum()
            var_x = (win * x * x).sum() - mu_x * mu_x
            var_y = (win * y * y).sum() - mu_y * mu_y
            cov = (win * x * y).sum() - mu_x * mu_y
            vals.append(((2 * mu_x * mu_y + c1) * (2 * cov + c2))
                        / ((mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)))
    return float(np.mean(vals))


def test_psnr_identical_hits_cap():
    a = dm.uniform((1, 3, 8, 8), 0, 1, seed=1)
    assert psnr(a, a) == PSNR_CAP_DB


def test_psnr_uniform_offset_closed_form():
    a = dm.full((1, 3, 16, 16), 0.4)
    b = dm.full((1, 3, 16, 16), 0.5)
    assert abs(psnr(a, b) - 20.0) < 0.01


def test_psnr_shape_mismatch():
    with pytest.raises(ShapeError):
        psnr(dm.zeros((1, 3, 8, 8)), dm.zeros((1, 3, 8, 6)))


def test_ssim_identical_is_exactly_one():
    a = dm.uniform((1, 3, 16, 16), 0, 1, seed=2)
    assert ssim(a, a) == 1.0


@pytest.mark.parametrize("seed", [3, 4, 5])
def test_ssim_matches_direct_oracle(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, size=(16, 16))
    b = np.clip(a + rng.normal(scale=0.1, size=(16, 16)), 0, 1)
    got = ssim(Tensor(a[None, None]), Tensor(b[None, None]))
    want = ssim_oracle(a, b)
    assert abs(got - want) < 1e-8


def test_ssim_averages_over_channels():
    rng = np.random.default_rng(6)
    a = rng.uniform(0, 1, size=(1, 3, 16, 16))
    b = np.clip(a + rng.normal(scale=0.05, size=a.shape), 0, 1)
    got = ssim(Tensor(a), Tensor(b))
    per_channel = [ssim_oracle(a[0, c], b[0, c]) for c in range(3)]
    assert abs(got - float(np.mean(per_channel))) < 1e-8


def test_ssim_window_too_small():
    with pytest.raises(ShapeError):
        ssim(dm.zeros((1, 1, 8, 8)), dm.zeros((1, 1, 8, 8)))


def test_gaussian_window_normalized():
    win = gaussian_window()
    assert win.shape == (11, 11)
    assert abs(win.sum() - 1.0) < 1e-12
    assert win[5, 5] == win.max()
