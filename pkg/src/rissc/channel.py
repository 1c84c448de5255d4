"""Complex AWGN channel with SNR referenced to the transmitted batch power."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ctensor as ct
from .ctensor import CTensor


@dataclass(frozen=True)
class ChannelSpec:
    kind: str = "awgn"
    snr_db: float = 19.0
    seed: int = 0

    def __post_init__(self):
        if self.kind != "awgn":
            raise ValueError(f"only the awgn channel is supported, got {self.kind!r}")
        if not np.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")


def avg_power(field: CTensor) -> float:
    if field.size == 0:
        raise ValueError("average power of an empty field is undefined")
    z = field.data
    return float(np.mean(z.real**2 + z.imag**2))


def noise_variance(field: CTensor, snr_db: float) -> float:
    return avg_power(field) * 10.0 ** (-snr_db / 10.0)


def awgn(field: CTensor, snr_db: float, rng: np.random.Generator) -> CTensor:
    """``field + n`` with circular complex Gaussian ``n``.

    The noise variance per element is ``avg_power(field) * 10**(-snr_db/10)``,
    split evenly between real and imaginary parts.  The noise is a constant
    as far as gradients are concerned.
    """
    power = avg_power(field)
    if power == 0.0:
        raise ValueError("SNR is undefined for a zero-power field")
    sigma = np.sqrt(power * 10.0 ** (-snr_db / 10.0) / 2.0)
    noise = sigma * (rng.standard_normal(field.shape) + 1j * rng.standard_normal(field.shape))
    return ct.add(field, CTensor(noise))
