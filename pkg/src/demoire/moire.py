"""Synthetic clean/degraded image pairs via screen-capture aliasing.

The degradation pipeline mimics how photographing a screen produces
interference patterns: the image is modulated by an RGB subpixel stripe
lattice, resampled through a rotated and scaled grid, pushed through a
Bayer mosaic and bilinear demosaic, and finally blended with the original.
Everything is a pure function of (input, spec), so pairs are bit-exactly
reproducible from their stored parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, FormatError, ShapeError
from .tensor import Tensor

CFA_PATTERNS = ("RGGB", "GRBG", "GBRG", "BGGR")
_STRIPE_FLOOR = 0.25

_KERNEL_G = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]], dtype=np.float64) / 4.0
_KERNEL_RB = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]], dtype=np.float64) / 4.0


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of one synthetic degradation."""

    angle: float
    scale: float
    lattice_period: float
    cfa: str = "RGGB"
    intensity: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.lattice_period < 2:
            raise ConfigError(f"lattice_period must be >= 2, got {self.lattice_period}")
        if not 0.0 <= self.intensity <= 1.0:
            raise ConfigError(f"intensity must be in [0, 1], got {self.intensity}")
        if self.scale <= 0:
            raise ConfigError("scale must be positive")
        if self.cfa not in CFA_PATTERNS:
            raise ConfigError(f"cfa must be one of {CFA_PATTERNS}, got {self.cfa!r}")


@dataclass
class ImagePair:
    clean: Tensor
    moire: Tensor
    spec: SynthSpec

    def __post_init__(self):
        if self.clean.shape != self.moire.shape:
            raise ShapeError("clean and moire shapes must match")


def _stripe_mask(width: int, period: float, phase: float) -> np.ndarray:
    """(3, width) multiplicative subpixel mask, mean-normalized per channel."""
    cols = (np.arange(width) + phase) / period % 1.0
    band = np.minimum((cols * 3).astype(int), 2)
    mask = np.full((3, width), _STRIPE_FLOOR)
    for c in range(3):
        mask[c, band == c] = 1.0
    return mask / mask.mean(axis=1, keepdims=True)


def _resample(img: np.ndarray, angle_deg: float, scale: float,
              jitter: np.ndarray) -> np.ndarray:
    """Bilinear sampling of (3, h, w) through a rotated/scaled inverse map."""
    _, h, w = img.shape
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    cy = (h - 1) / 2.0 + jitter[0]
    cx = (w - 1) / 2.0 + jitter[1]
    th = math.radians(angle_deg)
    dx = (xx - cx) / scale
    dy = (yy - cy) / scale
    sx = math.cos(th) * dx + math.sin(th) * dy + cx
    sy = -math.sin(th) * dx + math.cos(th) * dy + cy
    sx = np.clip(sx, 0.0, w - 1.0)
    sy = np.clip(sy, 0.0, h - 1.0)
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sx - x0
    fy = sy - y0
    out = np.empty_like(img)
    for c in range(3):
        p = img[c]
        top = p[y0, x0] * (1 - fx) + p[y0, x1] * fx
        bot = p[y1, x0] * (1 - fx) + p[y1, x1] * fx
        out[c] = top * (1 - fy) + bot * fy
    return out


def _conv3_reflect(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    xp = np.pad(x, 1, mode="reflect")
    view = np.lib.stride_tricks.sliding_window_view(xp, (3, 3))
    return np.einsum("hwij,ij->hw", view, kernel)


def _cfa_masks(pattern: str, h: int, w: int) -> dict[str, np.ndarray]:
    layout = {(0, 0): pattern[0], (0, 1): pattern[1],
              (1, 0): pattern[2], (1, 1): pattern[3]}
    masks = {ch: np.zeros((h, w)) for ch in "RGB"}
    for (dy, dx), ch in layout.items():
        masks[ch][dy::2, dx::2] = 1.0
    return masks


def _mosaic_demosaic(img: np.ndarray, pattern: str) -> np.ndarray:
    """(3, h, w) -> Bayer raw -> bilinear RGB reconstruction."""
    _, h, w = img.shape
    masks = _cfa_masks(pattern, h, w)
    raw = img[0] * masks["R"] + img[1] * masks["G"] + img[2] * masks["B"]
    out = np.empty_like(img)
    out[0] = _conv3_reflect(raw * masks["R"], _KERNEL_RB)
    out[1] = _conv3_reflect(raw * masks["G"], _KERNEL_G)
    out[2] = _conv3_reflect(raw * masks["B"], _KERNEL_RB)
    return out


def synth_pair(clean: Tensor, spec: SynthSpec) -> ImagePair:
    """Degrade a clean [0,1] image; intensity 0 returns it unchanged."""
    n, c, h, w = clean.shape
    if n != 1 or c != 3:
        raise ShapeError(f"expected a (1, 3, h, w) image, got {clean.shape}")
    if spec.intensity == 0.0:
        return ImagePair(clean, clean.copy(), spec)
    rng = np.random.default_rng(spec.seed)
    phase = rng.uniform(0.0, spec.lattice_period)
    jitter = rng.uniform(-0.5, 0.5, size=2)
    img = clean.data[0]
    latticed = img * _stripe_mask(w, spec.lattice_period, phase)[:, None, :]
    warped = _resample(latticed, spec.angle, spec.scale, jitter)
    degraded = _mosaic_demosaic(warped, spec.cfa)
    blended = (1.0 - spec.intensity) * img + spec.intensity * degraded
    moire = np.clip(blended, 0.0, 1.0)
    return ImagePair(clean, Tensor(moire[None]), spec)


# ---------------------------------------------------------------------------
# Procedural clean sources (keeps the repo free of external image data)


def _bilinear_zoom(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    ys = np.linspace(0.0, a.shape[0] - 1.0, out_h)
    xs = np.linspace(0.0, a.shape[1] - 1.0, out_w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, a.shape[0] - 1)
    x1 = np.minimum(x0 + 1, a.shape[1] - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = a[np.ix_(y0, x0)] * (1 - fx) + a[np.ix_(y0, x1)] * fx
    bot = a[np.ix_(y1, x0)] * (1 - fx) + a[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


PROCEDURAL_KINDS = ("smooth", "gradient", "checker")


def procedural_image(kind: str, size: int, seed: int) -> Tensor:
    """Deterministic synthetic photo stand-in of the given size."""
    rng = np.random.default_rng(seed)
    img = np.empty((3, size, size))
    if kind == "smooth":
        g = int(rng.integers(3, 7))
        for c in range(3):
            img[c] = _bilinear_zoom(rng.uniform(0.05, 0.95, size=(g, g)), size, size)
    elif kind == "gradient":
        yy, xx = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size),
                             indexing="ij")
        for c in range(3):
            a, b = rng.uniform(-1, 1, size=2)
            base = a * xx + b * yy
            lo, hi = base.min(), base.max()
            span = hi - lo if hi > lo else 1.0
            img[c] = 0.05 + 0.9 * (base - lo) / span
    elif kind == "checker":
        period = int(rng.integers(6, 16))
        yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
        cell = ((yy // period) + (xx // period)) % 2
        col_a = rng.uniform(0.1, 0.9, size=3)
        col_b = rng.uniform(0.1, 0.9, size=3)
        for c in range(3):
            img[c] = np.where(cell == 0, col_a[c], col_b[c])
    else:
        raise ConfigError(f"unknown procedural kind {kind!r}")
    return Tensor(np.clip(img, 0.0, 1.0)[None])


def default_sources(count: int, size: int, seed: int = 0) -> list[Tensor]:
    return [procedural_image(PROCEDURAL_KINDS[i % len(PROCEDURAL_KINDS)], size,
                             seed * 10007 + i) for i in range(count)]


# ---------------------------------------------------------------------------
# Dataset assembly


@dataclass(frozen=True)
class SynthRanges:
    """Uniform sampling ranges for dataset generation."""

    angle: tuple[float, float] = (2.0, 12.0)
    scale: tuple[float, float] = (0.85, 1.15)
    lattice_period: tuple[float, float] = (3.0, 7.0)
    intensity: tuple[float, float] = (0.5, 0.9)
    cfa: str = "RGGB"


def make_dataset(source_images: list[Tensor], ranges: SynthRanges,
                 n_pairs: int, seed: int) -> list[ImagePair]:
    if not source_images:
        raise ConfigError("at least one source image is required")
    if n_pairs < 1:
        raise ConfigError("n_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n_pairs):
        spec = SynthSpec(
            angle=float(rng.uniform(*ranges.angle)),
            scale=float(rng.uniform(*ranges.scale)),
            lattice_period=float(rng.uniform(*ranges.lattice_period)),
            cfa=ranges.cfa,
            intensity=float(rng.uniform(*ranges.intensity)),
            seed=int(rng.integers(0, 2 ** 31)),
        )
        pairs.append(synth_pair(source_images[i % len(source_images)], spec))
    return pairs


def split_dataset(pairs: list[ImagePair]) -> tuple[list[ImagePair], list[ImagePair]]:
    """Fixed 90/10 split by index; at least one validation pair when n >= 2."""
    n = len(pairs)
    n_val = max(1, n // 10) if n >= 2 else 0
    return pairs[: n - n_val], pairs[n - n_val:]


def sample_patch(pair: ImagePair, size: int, seed: int) -> ImagePair:
    """Aligned random crop of both images at the same offset."""
    _, _, h, w = pair.clean.shape
    if size > h or size > w:
        raise ShapeError(f"patch size {size} exceeds image {h}x{w}")
    rng = np.random.default_rng(seed)
    oy = int(rng.integers(0, h - size + 1))
    ox = int(rng.integers(0, w - size + 1))
    clean = Tensor(pair.clean.data[:, :, oy:oy + size, ox:ox + size].copy())
    moire = Tensor(pair.moire.data[:, :, oy:oy + size, ox:ox + size].copy())
    return ImagePair(clean, moire, pair.spec)


# ---------------------------------------------------------------------------
# PNG and manifest I/O

MANIFEST_NAME = "manifest.tsv"


def save_png(path: str | Path, img: Tensor):
    n, c, h, w = img.shape
    if n != 1 or c != 3:
        raise ShapeError(f"expected (1, 3, h, w), got {img.shape}")
    arr = np.clip(img.data[0], 0.0, 1.0)
    arr = np.round(arr * 255.0).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(arr, mode="RGB").save(str(path), format="PNG")


def load_png(path: str | Path) -> Tensor:
    with Image.open(str(path)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return Tensor(arr.transpose(2, 0, 1)[None])


def write_dataset(out_dir: str | Path, pairs: list[ImagePair]) -> Path:
    """Write PNG pairs plus a tab-separated manifest; returns its path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, pair in enumerate(pairs):
        clean_name = f"clean_{i:04d}.png"
        moire_name = f"moire_{i:04d}.png"
        save_png(out / clean_name, pair.clean)
        save_png(out / moire_name, pair.moire)
        s = pair.spec
        lines.append("\t".join([
            clean_name, moire_name, repr(s.angle), repr(s.scale),
            repr(s.lattice_period), s.cfa, repr(s.intensity), str(s.seed),
        ]))
    manifest = out / MANIFEST_NAME
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def load_dataset(manifest_path: str | Path) -> list[ImagePair]:
    manifest = Path(manifest_path)
    base = manifest.parent
    pairs = []
    for ln, line in enumerate(manifest.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 8:
            raise FormatError(f"{manifest}:{ln}: expected 8 fields, got {len(fields)}")
        clean_name, moire_name, angle, scale, period, cfa, intensity, seed = fields
        missing = [p for p in (base / clean_name, base / moire_name) if not p.exists()]
        if missing:
            raise FileNotFoundError(
                f"{manifest}:{ln}: missing files: " + ", ".join(map(str, missing)))
        try:
            spec = SynthSpec(float(angle), float(scale), float(period), cfa,
                             float(intensity), int(seed))
        except (ValueError, ConfigError) as exc:
            raise FormatError(f"{manifest}:{ln}: bad spec fields: {exc}") from exc
        pairs.append(ImagePair(load_png(base / clean_name),
                               load_png(base / moire_name), spec))
    return pairs
