"""Free-space coupling between RIS planes and the fly-through latency estimate."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .ctensor import CTensor

SPEED_OF_LIGHT = 299_792_458.0  # m/s


@dataclass(frozen=True)
class Geometry:
    """Centered rectangular grid of meta-atoms in the plane ``z``."""

    rows: int
    cols: int
    pitch: float
    z: float = 0.0
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")
        if not self.pitch > 0:
            raise ValueError(f"pitch must be positive, got {self.pitch}")

    @property
    def n_atoms(self) -> int:
        return self.rows * self.cols

    def coordinates(self) -> np.ndarray:
        """(n_atoms, 2) array of transverse (x, y), row-major atom order."""
        r, c = np.meshgrid(np.arange(self.rows), np.arange(self.cols), indexing="ij")
        x = (c - (self.cols - 1) / 2.0) * self.pitch + self.x0
        y = (r - (self.rows - 1) / 2.0) * self.pitch + self.y0
        return np.stack([x.ravel(), y.ravel()], axis=1)

    def shifted(self, dx: float = 0.0, dy: float = 0.0, dz: float = 0.0) -> "Geometry":
        return Geometry(self.rows, self.cols, self.pitch, self.z + dz, self.x0 + dx, self.y0 + dy)

    def to_dict(self) -> dict:
        return {"rows": self.rows, "cols": self.cols, "pitch": self.pitch, "z": self.z,
                "x0": self.x0, "y0": self.y0}

    @classmethod
    def from_dict(cls, d: dict) -> "Geometry":
        return cls(int(d["rows"]), int(d["cols"]), float(d["pitch"]), float(d["z"]),
                   float(d.get("x0", 0.0)), float(d.get("y0", 0.0)))


def make_geometry(rows: int, cols: int, pitch: float, z: float = 0.0) -> Geometry:
    return Geometry(int(rows), int(cols), float(pitch), float(z))


@dataclass(frozen=True)
class PropagationMatrix:
    """Fixed (never trained) coupling matrix ``w[dst_atom, src_atom]``."""

    w: CTensor
    src_geometry: Geometry
    dst_geometry: Geometry
    wavelength: float
    _wt: CTensor = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_wt", CTensor(self.w.data.T))

    @property
    def shape(self) -> tuple[int, int]:
        return self.w.shape

    @property
    def w_transposed(self) -> CTensor:
        # fields are row vectors [batch, atoms]; out = field @ w.T
        return self._wt


def rs_coefficients(
    src_xy: np.ndarray, dst_xy: np.ndarray, dz: float, wavelength: float, area: float
) -> np.ndarray:
    """First Rayleigh-Sommerfeld point-to-point coefficients.

    ``w = (dz/r^2) * (1/(2 pi r) + 1/(j lambda)) * exp(j 2 pi r / lambda) * area``
    """
    dx = dst_xy[:, None, 0] - src_xy[None, :, 0]
    dy = dst_xy[:, None, 1] - src_xy[None, :, 1]
    r = np.sqrt(dx * dx + dy * dy + dz * dz)
    k = 2.0 * np.pi / wavelength
    return (dz / r**2) * (1.0 / (2.0 * np.pi * r) + 1.0 / (1j * wavelength)) * np.exp(1j * k * r) * area


def rs_kernel(
    src: Geometry, dst: Geometry, wavelength: float, normalize: bool = False
) -> PropagationMatrix:
    """Coupling matrix from every ``src`` atom to every ``dst`` atom.

    Each source atom is weighted by its own cell area ``src.pitch**2``.
    With ``normalize`` the matrix is scaled to unit spectral norm, so a
    gap can never amplify the total field energy.
    """
    return _rs_kernel_cached(src, dst, float(wavelength), bool(normalize))


@lru_cache(maxsize=64)
def _rs_kernel_cached(src: Geometry, dst: Geometry, wavelength: float, normalize: bool):
    if not wavelength > 0:
        raise ValueError(f"wavelength must be positive, got {wavelength}")
    dz = dst.z - src.z
    if not dz > 0:
        raise ValueError(f"destination plane must lie beyond the source (dz = {dz})")
    w = rs_coefficients(src.coordinates(), dst.coordinates(), dz, wavelength, src.pitch**2)
    if normalize:
        w = w / np.linalg.norm(w, 2)
    return PropagationMatrix(CTensor(w), src, dst, wavelength)


def wavelength_of(frequency_hz: float) -> float:
    if not frequency_hz > 0:
        raise ValueError(f"frequency must be positive, got {frequency_hz}")
    return SPEED_OF_LIGHT / frequency_hz


def fly_latency(num_gaps: int, gap_distance: float) -> float:
    """Time for the wave to cross ``num_gaps`` inter-layer gaps, in seconds.

    Only the gap count and spacing matter; how many atoms sit on each
    surface does not.
    """
    if num_gaps < 0:
        raise ValueError("num_gaps must be nonnegative")
    if not gap_distance > 0:
        raise ValueError("gap_distance must be positive")
    return num_gaps * gap_distance / SPEED_OF_LIGHT
