"""The five-stage data flow: modulate, encode, channel, decode, demodulate."""

from __future__ import annotations

import numpy as np

from . import metrics
from .channel import awgn
from .ctensor import CTensor
from .data import ImageItem, stack_pixels
from .modem import demodulate, modulate, normalize_source
from .ris_layers import SemanticModel, stack_forward


def to_plane(pixels: np.ndarray) -> np.ndarray:
    """[B, H, W, C] -> [B, H*W*C] in tiled-plane atom order (channels side by side)."""
    b = pixels.shape[0]
    return pixels.transpose(0, 1, 3, 2).reshape(b, -1)


def from_plane(values: np.ndarray, source_shape: tuple[int, int, int]) -> np.ndarray:
    h, w, c = source_shape
    return values.reshape(-1, h, c, w).transpose(0, 1, 3, 2)


def source_values(model: SemanticModel, items) -> np.ndarray:
    pixels = stack_pixels(items)
    if pixels.shape[1:] != tuple(model.source_shape):
        raise ValueError(
            f"images are {pixels.shape[1:]}, model expects {tuple(model.source_shape)}"
        )
    return normalize_source(to_plane(pixels))


def transmit(
    model: SemanticModel,
    values: np.ndarray,
    snr_db: float | None,
    rng: np.random.Generator | None,
    clamp: bool = True,
) -> CTensor:
    """Reconstruct a batch of normalized source vectors through the link.

    ``snr_db=None`` bypasses the channel entirely.
    """
    field = modulate(model.modem, values)
    tx = stack_forward(model.encoder, field)
    rx = tx if snr_db is None else awgn(tx, snr_db, rng)
    return demodulate(model.modem, stack_forward(model.decoder, rx), clamp)


def evaluate(
    model: SemanticModel,
    items: list[ImageItem],
    snr_list,
    seed: int = 0,
    n_images: int | None = None,
    batch_size: int = 128,
    keep_images: bool = False,
):
    """PSNR / MS-SSIM over the first ``n_images`` items at every SNR.

    Noise for SNR index ``k`` is drawn from a stream seeded by ``(seed, k)``.
    Returns the report, plus per-SNR reconstructions (uint8) when asked.
    """
    items = items if n_images is None else items[:n_images]
    if not items:
        raise ValueError("nothing to evaluate")
    values = source_values(model, items)
    cr = metrics.compression_ratio(model)
    report = metrics.EvalReport()
    recon = {}
    for k, snr in enumerate(snr_list):
        rng = np.random.default_rng([seed, k])
        est = np.concatenate([
            transmit(model, values[i:i + batch_size], float(snr), rng).data.real
            for i in range(0, len(values), batch_size)
        ])
        ref_imgs = from_plane(values, model.source_shape)
        est_imgs = from_plane(est, model.source_shape)
        ps = [metrics.psnr(r, e) for r, e in zip(ref_imgs, est_imgs)]
        ms = [metrics.ms_ssim(r, e) for r, e in zip(ref_imgs, est_imgs)]
        p_mean, p_std = metrics.summarize(ps)
        m_mean, m_std = metrics.summarize(ms)
        report.rows.append(metrics.ReportRow(float(snr), p_mean, p_std, m_mean, m_std, cr,
                                             len(items), seed))
        if keep_images:
            recon[float(snr)] = np.clip(np.round(est_imgs * 255.0), 0, 255).astype(np.uint8)
    return (report, recon) if keep_images else report
