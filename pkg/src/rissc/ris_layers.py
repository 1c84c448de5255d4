"""Trainable RIS layers and their composition into encoder/decoder stacks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import ctensor as ct
from .ctensor import CTensor
from .diffraction import Geometry, PropagationMatrix, rs_kernel, wavelength_of
from .modem import ModemSpec


@dataclass(frozen=True)
class ConstraintSpec:
    g_min_db: float = -22.0
    g_max_db: float = 13.0
    phase_bits: int | None = None

    def __post_init__(self):
        if not self.g_min_db < self.g_max_db:
            raise ValueError("g_min_db must be below g_max_db")
        if self.phase_bits is not None and self.phase_bits < 1:
            raise ValueError("phase_bits must be >= 1 when set")

    @property
    def g_min(self) -> float:
        return 10.0 ** (self.g_min_db / 20.0)

    @property
    def g_max(self) -> float:
        return 10.0 ** (self.g_max_db / 20.0)


@dataclass
class MetaAtomLayer:
    """One surface: a complex transmission coefficient per meta-atom."""

    coeffs: CTensor
    geometry: Geometry
    constraints: ConstraintSpec = field(default_factory=ConstraintSpec)

    def __post_init__(self):
        if self.coeffs.shape != (self.geometry.n_atoms,):
            raise ValueError(
                f"coeffs shape {self.coeffs.shape} does not match {self.geometry.n_atoms} atoms"
            )

    @property
    def n_atoms(self) -> int:
        return self.geometry.n_atoms


_GUARD = 8 * np.finfo(float).eps


def project_coefficients(t: np.ndarray, spec: ConstraintSpec) -> np.ndarray:
    # clip a few ulp inside the bounds so |amp * e^{j phase}| never rounds outside
    amp = np.clip(np.abs(t), spec.g_min * (1 + _GUARD), spec.g_max * (1 - _GUARD))
    phase = np.angle(t)
    if spec.phase_bits is not None:
        step = 2.0 * np.pi / (2**spec.phase_bits)
        phase = np.mod(np.round(phase / step), 2**spec.phase_bits) * step
    out = amp * np.exp(1j * phase)
    # keep untouched atoms bit-identical so projection is an exact fixed point
    untouched = (np.abs(t) >= spec.g_min) & (np.abs(t) <= spec.g_max)
    if spec.phase_bits is None:
        return np.where(untouched, t, out)
    on_grid = np.isclose(np.mod(np.angle(t), step), 0.0, rtol=0.0, atol=1e-12) | np.isclose(
        np.mod(np.angle(t), step), step, rtol=0.0, atol=1e-12
    )
    return np.where(untouched & on_grid, t, out)


def apply_constraints(layer: MetaAtomLayer) -> None:
    """Project every coefficient onto the hardware-realizable set, in place."""
    layer.coeffs.assign(project_coefficients(layer.coeffs.data, layer.constraints))


def meta_forward(layer: MetaAtomLayer, field_in: CTensor) -> CTensor:
    if not field_in.shape or field_in.shape[-1] != layer.n_atoms:
        raise ValueError(
            f"field has {field_in.shape[-1] if field_in.shape else 0} atoms, layer has {layer.n_atoms}"
        )
    return ct.mul(field_in, layer.coeffs)


def modrelu(z: CTensor, bias) -> CTensor:
    """``(|z| + b) z/|z|`` where ``|z| + b > 0``, else 0.

    ``bias`` is a real array or a CTensor holding real values (trainable).
    """
    b_t = bias if isinstance(bias, CTensor) else CTensor(np.asarray(bias, dtype=float))
    b = b_t.data.real
    if not np.all(np.isfinite(b)):
        raise ValueError("modrelu bias must be finite")
    zv = z.data
    mag = np.abs(zv)
    active = (mag + b > 0) & (mag > 0)
    safe = np.where(mag > 0, mag, 1.0)
    u = np.where(mag > 0, zv / safe, 0.0)
    out = np.where(active, (mag + b) * u, 0.0)
    bfull = np.broadcast_to(b, zv.shape)

    def vjp(g):
        safe_conj = np.where(mag > 0, np.conj(zv), 1.0)
        gz = g * (1.0 + bfull / (2.0 * safe)) - bfull * np.conj(g) * u / (2.0 * safe_conj)
        gz = np.where(active, gz, 0.0)
        gb = np.where(active, (g * np.conj(u)).real, 0.0).astype(np.complex128)
        if gb.shape != b_t.shape:
            gb = gb.reshape(-1, *b_t.shape).sum(axis=0) if b_t.shape else gb.sum()
        return gz, gb

    return ct.record(out, (z, b_t), vjp)


def conv2d_complex(
    x: CTensor, kernels: CTensor, stride: int = 1, padding: int | str = 0
) -> CTensor:
    """Complex cross-correlation of an H x W x Cin field with k x k x Cin x Cout kernels.

    ``padding="same"`` pads by ``k // 2`` (odd kernels, stride 1 keeps size).
    """
    if len(x.shape) != 3 or len(kernels.shape) != 4:
        raise ValueError("expected input H x W x Cin and kernels k x k x Cin x Cout")
    h, w, cin = x.shape
    kh, kw, kcin, cout = kernels.shape
    if kh != kw or kcin != cin:
        raise ValueError(f"kernel {kernels.shape} incompatible with input {x.shape}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    pad = kh // 2 if padding == "same" else int(padding)
    if pad < 0:
        raise ValueError("padding must be nonnegative")
    hp, wp = h + 2 * pad, w + 2 * pad
    if kh > hp or kw > wp:
        raise ValueError("kernel larger than padded input")
    if (hp - kh) % stride or (wp - kw) % stride:
        raise ValueError(f"stride {stride} does not tile padded input {hp}x{wp} with kernel {kh}")
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1

    xp = np.pad(x.data, ((pad, pad), (pad, pad), (0, 0)))
    ii = (np.arange(ho) * stride)[:, None] + np.arange(kh)[None, :]  # ho x k
    jj = (np.arange(wo) * stride)[:, None] + np.arange(kw)[None, :]  # wo x k
    cols = xp[ii[:, None, :, None], jj[None, :, None, :], :]  # ho, wo, k, k, cin
    kv = kernels.data
    out = np.einsum("abijc,ijcd->abd", cols, kv)

    def vjp(g):
        gk = np.einsum("abijc,abd->ijcd", np.conj(cols), g)
        gcols = np.einsum("abd,ijcd->abijc", g, np.conj(kv))
        gxp = np.zeros_like(xp)
        np.add.at(gxp, (ii[:, None, :, None], jj[None, :, None, :], slice(None)), gcols)
        gx = gxp[pad:pad + h, pad:pad + w, :]
        return gx, gk

    return ct.record(out, (x, kernels), vjp)


@dataclass
class Stage:
    """A surface, the gap that follows it, and an optional modReLU at the next plane."""

    layer: MetaAtomLayer
    propagation: PropagationMatrix | None = None
    bias: CTensor | None = None

    @property
    def activation(self) -> bool:
        return self.bias is not None


def stack_forward(stages: Sequence[Stage], field_in: CTensor) -> CTensor:
    """Run a field through ``t * field -> propagate -> modReLU`` for each stage.

    ``field_in`` is either one field (``[atoms]``) or a batch (``[batch, atoms]``).
    """
    single = len(field_in.shape) == 1
    x = ct.reshape(field_in, (1, -1)) if single else field_in
    for i, st in enumerate(stages):
        if x.shape[-1] != st.layer.n_atoms:
            raise ValueError(
                f"stage {i}: incoming field has {x.shape[-1]} atoms, layer has {st.layer.n_atoms}"
            )
        x = meta_forward(st.layer, x)
        if st.propagation is not None:
            n_dst, n_src = st.propagation.shape
            if n_src != st.layer.n_atoms:
                raise ValueError(
                    f"stage {i}: propagation expects {n_src} source atoms, layer has {st.layer.n_atoms}"
                )
            x = ct.matmul(x, st.propagation.w_transposed)
            if i + 1 < len(stages) and stages[i + 1].layer.n_atoms != n_dst:
                raise ValueError(
                    f"stage {i}: propagation emits {n_dst} atoms, next layer has "
                    f"{stages[i + 1].layer.n_atoms}"
                )
        if st.bias is not None:
            x = modrelu(x, st.bias)
    return ct.reshape(x, (-1,)) if single else x


def dual_pol_forward(
    layer_pair: tuple[MetaAtomLayer, MetaAtomLayer], fields: tuple[CTensor, CTensor]
) -> tuple[CTensor, CTensor]:
    """Vertical and horizontal polarizations through one surface, no cross-talk."""
    v_layer, h_layer = layer_pair
    if v_layer.geometry != h_layer.geometry:
        raise ValueError("both polarizations must share one surface geometry")
    return meta_forward(v_layer, fields[0]), meta_forward(h_layer, fields[1])


# --------------------------------------------------------------------------
# model assembly
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelConfig:
    layers_per_coder: int = 4
    frequency_hz: float = 25e9
    pitch_over_lambda: float = 0.5
    gap_over_lambda: float = 0.5
    activation: bool = True
    normalize_kernel: bool = False
    init_phase: str = "random"  # "random" | "zero"
    g_min_db: float = -22.0
    g_max_db: float = 13.0
    phase_bits: int | None = None

    def __post_init__(self):
        if self.layers_per_coder < 1:
            raise ValueError("layers_per_coder must be >= 1")
        if not self.frequency_hz > 0:
            raise ValueError("frequency_hz must be positive")
        if not (self.pitch_over_lambda > 0 and self.gap_over_lambda > 0):
            raise ValueError("pitch_over_lambda and gap_over_lambda must be positive")
        if self.init_phase not in ("random", "zero"):
            raise ValueError(f"unknown init_phase {self.init_phase!r}")

    @property
    def wavelength(self) -> float:
        return wavelength_of(self.frequency_hz)

    @property
    def constraints(self) -> ConstraintSpec:
        return ConstraintSpec(self.g_min_db, self.g_max_db, self.phase_bits)


def grid_shape(n: int) -> tuple[int, int]:
    """Most nearly square rows x cols factorization of n (rows <= cols)."""
    rows = int(math.isqrt(n))
    while n % rows:
        rows -= 1
    return rows, n // rows


def output_grid(source_dims: int, cr: float) -> tuple[int, int]:
    """Encoder output grid for a compression ratio.

    Takes the atom count nearest to ``cr * source_dims``; when that count
    only factors into a strip (aspect > 2), the nearest count within 5 %
    that factors into a compact grid is used instead.
    """
    if not 0 < cr <= 1:
        raise ValueError(f"compression ratio must lie in (0, 1], got {cr}")
    target = cr * source_dims
    n0 = max(1, int(round(target)))
    best = None
    slack = max(1, int(math.ceil(0.05 * target)))
    for n in range(max(1, n0 - slack), n0 + slack + 1):
        r, c = grid_shape(n)
        if c <= 2 * r:
            key = (abs(n - target), n)
            if best is None or key < best[0]:
                best = (key, (r, c))
    return best[1] if best else grid_shape(n0)


@dataclass
class SemanticModel:
    encoder: list[Stage]
    decoder: list[Stage]
    source_shape: tuple[int, int, int]  # H, W, C of the source image
    config: ModelConfig = field(default_factory=ModelConfig)
    modem: ModemSpec = field(default_factory=ModemSpec)

    def __post_init__(self):
        if self.encoder[-1].layer.n_atoms >= self.encoder[0].layer.n_atoms:
            raise ValueError("encoder output must have fewer atoms than its input")
        if self.decoder[0].layer.n_atoms != self.encoder[-1].layer.n_atoms:
            raise ValueError("decoder input size must equal encoder output size")

    @property
    def source_dims(self) -> int:
        h, w, c = self.source_shape
        return h * w * c

    @property
    def tx_atoms(self) -> int:
        return self.encoder[-1].layer.n_atoms

    def layers(self) -> list[MetaAtomLayer]:
        return [s.layer for s in self.encoder + self.decoder]

    def parameters(self) -> list[tuple[str, CTensor]]:
        named = []
        for side, stages in (("encoder", self.encoder), ("decoder", self.decoder)):
            for i, st in enumerate(stages):
                named.append((f"{side}.{i}.coeffs", st.layer.coeffs))
                if st.bias is not None:
                    named.append((f"{side}.{i}.bias", st.bias))
        return named

    def set_constraints(self, spec: ConstraintSpec) -> None:
        for layer in self.layers():
            layer.constraints = spec

    def geometries(self) -> dict:
        return {
            side: [s.layer.geometry.to_dict() for s in stages]
            for side, stages in (("encoder", self.encoder), ("decoder", self.decoder))
        }


def plane_shape(source_shape: tuple[int, int, int]) -> tuple[int, int]:
    """Channels tile side by side: an H x W x C image occupies H x (W*C) atoms."""
    h, w, c = source_shape
    return h, w * c


def _init_coeffs(n: int, cfg: ModelConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.init_phase == "zero":
        return np.ones(n, dtype=np.complex128)
    return np.exp(1j * rng.uniform(0.0, 2.0 * np.pi, n))


def _build_stages(
    grids: list[tuple[int, int]], z0: float, cfg: ModelConfig, rng: np.random.Generator
) -> list[Stage]:
    lam = cfg.wavelength
    pitch, gap = cfg.pitch_over_lambda * lam, cfg.gap_over_lambda * lam
    geoms = [Geometry(r, c, pitch, z0 + i * gap) for i, (r, c) in enumerate(grids)]
    stages = []
    for i, g in enumerate(geoms):
        layer = MetaAtomLayer(CTensor(_init_coeffs(g.n_atoms, cfg, rng), requires_grad=True),
                              g, cfg.constraints)
        prop = None
        bias = None
        if i + 1 < len(geoms):
            prop = rs_kernel(g, geoms[i + 1], lam, cfg.normalize_kernel)
            if cfg.activation:
                bias = CTensor(np.zeros(geoms[i + 1].n_atoms), requires_grad=True)
        stages.append(Stage(layer, prop, bias))
    return stages


def build_model(
    source_shape: tuple[int, int, int],
    cfg: ModelConfig = ModelConfig(),
    cr: float | None = None,
    tx_grid: tuple[int, int] | None = None,
    seed: int = 0,
    modem: ModemSpec = ModemSpec(),
) -> SemanticModel:
    """Symmetric encoder/decoder with ``cfg.layers_per_coder`` surfaces each.

    Hidden surfaces have the size of the source plane; the encoder's last
    surface (the transmit aperture) and the decoder's first (the receive
    aperture) have ``tx_grid`` atoms, derived from ``cr`` when not given.
    """
    plane = plane_shape(source_shape)
    n_src = plane[0] * plane[1]
    if tx_grid is None:
        if cr is None:
            raise ValueError("give either cr or tx_grid")
        tx_grid = output_grid(n_src, cr)
    if cfg.layers_per_coder < 2:
        raise ValueError("each coder needs at least two surfaces to change size")
    rng = np.random.default_rng(seed)
    enc_grids = [plane] * (cfg.layers_per_coder - 1) + [tuple(tx_grid)]
    dec_grids = [tuple(tx_grid)] + [plane] * (cfg.layers_per_coder - 1)
    encoder = _build_stages(enc_grids, 0.0, cfg, rng)
    decoder = _build_stages(dec_grids, 0.0, cfg, rng)
    for layer in [s.layer for s in encoder + decoder]:
        apply_constraints(layer)
    return SemanticModel(encoder, decoder, tuple(source_shape), cfg, modem)


def with_constraints(model: SemanticModel, **changes) -> ConstraintSpec:
    spec = replace(model.layers()[0].constraints, **changes)
    model.set_constraints(spec)
    for layer in model.layers():
        apply_constraints(layer)
    return spec
