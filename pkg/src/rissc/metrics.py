"""Image-quality metrics and the evaluation report."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1, K2 = 0.01, 0.03

REPORT_HEADER = [
    "snr_test_db", "psnr_db_mean", "psnr_db_std", "ms_ssim_mean", "ms_ssim_std",
    "cr", "n_images", "seed",
]


def psnr(ref, est) -> float:
    """PSNR in dB for images scaled to [0, 1]; ``inf`` when identical."""
    ref, est = np.asarray(ref, dtype=np.float64), np.asarray(est, dtype=np.float64)
    if ref.shape != est.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {est.shape}")
    mse = float(np.mean((ref - est) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size: int = WINDOW_SIZE) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2 * WINDOW_SIGMA**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable 'valid' correlation over the two spatial axes
    k = g.size
    h, w = img.shape[:2]
    rows = sum(g[i] * img[i:h - k + 1 + i] for i in range(k))
    return sum(g[j] * rows[:, j:w - k + 1 + j] for j in range(k))


def _ssim_terms(x: np.ndarray, y: np.ndarray, size: int = WINDOW_SIZE) -> tuple[float, float]:
    g = _gaussian_window(size)
    c1, c2 = K1**2, K2**2
    mx, my = _filter_valid(x, g), _filter_valid(y, g)
    sxx = _filter_valid(x * x, g) - mx * mx
    syy = _filter_valid(y * y, g) - my * my
    sxy = _filter_valid(x * y, g) - mx * my
    cs_map = (2 * sxy + c2) / (sxx + syy + c2)
    lum_map = (2 * mx * my + c1) / (mx * mx + my * my + c1)
    return float(np.mean(lum_map * cs_map)), float(np.mean(cs_map))


def max_scales(min_side: int, scales: int = 5) -> int:
    """Largest scale count (<= ``scales``) whose coarsest level still fits the window."""
    if min_side < 1:
        raise ValueError("images must be at least 1x1")
    s = scales
    while s > 1 and min_side < 2 ** (s - 1) * WINDOW_SIZE:
        s -= 1
    return s


def window_size(min_side: int) -> int:
    """11, or the largest odd size that fits an image smaller than that."""
    if min_side >= WINDOW_SIZE:
        return WINDOW_SIZE
    return min_side if min_side % 2 else min_side - 1


def ms_ssim(ref, est, scales: int = 5) -> float:
    """Multi-scale SSIM on [0, 1] images (H x W or H x W x C).

    Scales are dropped until the coarsest level fits the 11-pixel window,
    and the remaining exponents are renormalized to sum to one.  Images
    smaller than the window get one scale with the Gaussian truncated to
    the largest odd size that fits.  Negative
    per-scale terms are clamped to zero, so the result lies in [0, 1].
    """
    x, y = np.asarray(ref, dtype=np.float64), np.asarray(est, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x, y = x[..., None], y[..., None]
    levels = max_scales(min(x.shape[:2]), scales)
    win = window_size(min(x.shape[:2]))
    weights = np.asarray(MS_SSIM_WEIGHTS[:levels])
    weights = weights / weights.sum()

    per_channel = []
    for c in range(x.shape[2]):
        xc, yc = x[..., c], y[..., c]
        vals = []
        for lvl in range(levels):
            ssim_val, cs_val = _ssim_terms(xc, yc, win)
            if lvl == levels - 1:
                vals.append(max(ssim_val, 0.0))
            else:
                vals.append(max(cs_val, 0.0))
                h2, w2 = (xc.shape[0] // 2) * 2, (xc.shape[1] // 2) * 2
                xc = xc[:h2, :w2].reshape(h2 // 2, 2, w2 // 2, 2).mean(axis=(1, 3))
                yc = yc[:h2, :w2].reshape(h2 // 2, 2, w2 // 2, 2).mean(axis=(1, 3))
        per_channel.append(float(np.prod(np.asarray(vals) ** weights)))
    return float(np.clip(np.mean(per_channel), 0.0, 1.0))


def compression_ratio(model, source_dims: int | None = None) -> float:
    """Transmitted real dimensions over source dimensions.

    Only one real dimension (amplitude or phase) of each transmit atom
    carries data, so the numerator is the encoder's output atom count.
    """
    if source_dims is None:
        source_dims = model.source_dims
    return model.tx_atoms / source_dims


@dataclass
class ReportRow:
    snr_test_db: float
    psnr_db_mean: float
    psnr_db_std: float
    ms_ssim_mean: float
    ms_ssim_std: float
    cr: float
    n_images: int
    seed: int

    def __post_init__(self):
        if self.n_images < 1:
            raise ValueError("a report row needs at least one image")

    def values(self) -> list:
        return [self.snr_test_db, self.psnr_db_mean, self.psnr_db_std, self.ms_ssim_mean,
                self.ms_ssim_std, self.cr, self.n_images, self.seed]


@dataclass
class EvalReport:
    rows: list[ReportRow] = field(default_factory=list)

    def row_at(self, snr_db: float) -> ReportRow:
        for r in self.rows:
            if r.snr_test_db == snr_db:
                return r
        raise KeyError(snr_db)

    def to_csv(self, prefix_header: list[str] | None = None, prefix: list | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow((prefix_header or []) + REPORT_HEADER)
        for r in self.rows:
            writer.writerow([fmt(v) for v in (prefix or []) + r.values()])
        return buf.getvalue()


def fmt(v) -> str:
    """Locale-free, round-trip exact number formatting for CSV cells."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def summarize(values) -> tuple[float, float]:
    """Mean and population std; infinities (perfect PSNR) propagate as inf."""
    arr = np.asarray(values, dtype=np.float64)
    if np.isinf(arr).any():
        return math.inf, 0.0
    return float(arr.mean()), float(arr.std())
