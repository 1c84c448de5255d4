"""Digital source <-> complex field mapping at the two ends of the link."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ctensor as ct
from .ctensor import CTensor


@dataclass(frozen=True)
class ModemSpec:
    mode: str = "AM"
    a_min: float = 0.1
    a_max: float = 1.0
    phase_lo: float = 0.0
    phase_hi: float = np.pi

    def __post_init__(self):
        if self.mode not in ("AM", "PM"):
            raise ValueError(f"mode must be AM or PM, got {self.mode!r}")
        if not self.a_min < self.a_max:
            raise ValueError("a_min must be below a_max")
        width = self.phase_hi - self.phase_lo
        if not 0 < width < 2 * np.pi:
            raise ValueError("phase span must be positive and strictly below 2*pi")

    @property
    def span_width(self) -> float:
        return self.phase_hi - self.phase_lo


def normalize_source(pixels) -> np.ndarray:
    px = np.asarray(pixels)
    if px.size and (px.min() < 0 or px.max() > 255):
        raise ValueError("pixel values must lie in [0, 255]")
    return px.astype(np.float64) / 255.0


def denormalize(values) -> np.ndarray:
    return np.clip(np.round(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)


def modulate(spec: ModemSpec, source) -> CTensor:
    v = np.asarray(source, dtype=np.float64)
    if v.size and (v.min() < 0.0 or v.max() > 1.0):
        raise ValueError("source values must lie in [0, 1]")
    if spec.mode == "AM":
        return CTensor((spec.a_min + v * (spec.a_max - spec.a_min)).astype(np.complex128))
    return CTensor(np.exp(1j * (spec.phase_lo + v * spec.span_width)))


def demodulate(spec: ModemSpec, field: CTensor, clamp: bool = True) -> CTensor:
    """Read the modulated dimension back as a real-valued tensor.

    AM reads ``(|z| - a_min) / (a_max - a_min)``; PM reads the phase offset
    from ``phase_lo`` over the span width, with the phase unwrapped into the
    2*pi window centered on the span so that an out-of-span phase lands
    nearest the endpoint it is closest to.  With ``clamp`` the result is
    limited to [0, 1] (clamped entries pass no gradient); training uses the
    unclamped readout so overshooting atoms still receive a gradient.
    """
    if spec.mode == "AM":
        v = ct.scale(ct.add_const(ct.abs_(field), -spec.a_min), 1.0 / (spec.a_max - spec.a_min))
    else:
        theta = ct.angle(field)
        lo = 0.5 * (spec.phase_lo + spec.phase_hi) - np.pi
        shifted = theta.data.real - lo
        offset = np.mod(shifted, 2 * np.pi) - shifted  # piecewise constant
        v = ct.scale(ct.add_const(theta, offset - spec.phase_lo), 1.0 / spec.span_width)
    return ct.clip(v, 0.0, 1.0) if clamp else v
