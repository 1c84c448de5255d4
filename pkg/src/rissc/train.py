"""End-to-end training: loss, Adam, LR schedule, SNR policy, fit loop, checkpoints."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import ctensor as ct
from .ctensor import CTensor, Tape
from .data import ImageItem, batches
from .diffraction import Geometry
from .metrics import fmt
from .modem import ModemSpec
from .pipeline import source_values, transmit
from .ris_layers import (
    MetaAtomLayer,
    ModelConfig,
    SemanticModel,
    apply_constraints,
    build_model,
)

log = logging.getLogger(__name__)

MAGIC = b"RISSC1"
FORMAT_VERSION = 1
HISTORY_HEADER = ["epoch", "mean_loss", "lr", "snr_policy_sample_mean"]


class TrainingDiverged(RuntimeError):
    pass


# --------------------------------------------------------------------------
# config
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Fixed:
    db: float

    def describe(self) -> str:
        return f"fixed({self.db:g})"


@dataclass(frozen=True)
class UniformRandom:
    lo_db: float
    hi_db: float

    def __post_init__(self):
        if self.lo_db > self.hi_db:
            raise ValueError(f"UniformRandom needs lo <= hi, got {self.lo_db} > {self.hi_db}")

    def describe(self) -> str:
        return f"random[{self.lo_db:g},{self.hi_db:g}]"


SnrPolicy = Fixed | UniformRandom


def parse_snr_policy(value) -> SnrPolicy:
    """Accept 19, "19", "random[0,20]", or {"uniform": [0, 20]}."""
    if isinstance(value, (Fixed, UniformRandom)):
        return value
    if isinstance(value, dict):
        if "uniform" in value:
            lo, hi = value["uniform"]
            return UniformRandom(float(lo), float(hi))
        if "fixed" in value:
            return Fixed(float(value["fixed"]))
        raise ValueError(f"unrecognized SNR policy {value!r}")
    if isinstance(value, str):
        s = value.strip().lower()
        if s.startswith("random[") and s.endswith("]"):
            lo, hi = s[len("random["):-1].split(",")
            return UniformRandom(float(lo), float(hi))
        return Fixed(float(s))
    return Fixed(float(value))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 400
    batch_size: int = 128
    lr0: float = 0.05
    lr_drop_epochs: tuple[int, ...] = (150, 250, 350)
    lr_factor: float = 0.1
    snr_policy: SnrPolicy = Fixed(19.0)
    seed: int = 0
    cr_target: float = 1 / 6
    checkpoint_every: int = 25

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        drops = list(self.lr_drop_epochs)
        if any(b <= a for a, b in zip(drops, drops[1:])):
            raise ValueError("lr_drop_epochs must be strictly increasing")
        if self.epochs and any(d >= self.epochs for d in drops):
            raise ValueError("every lr drop epoch must be below epochs")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lr_drop_epochs"] = list(self.lr_drop_epochs)
        d["snr_policy"] = self.snr_policy.describe()
        return d


def lr_at_epoch(cfg: TrainConfig, epoch: int) -> float:
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    drops = sum(1 for d in cfg.lr_drop_epochs if d <= epoch)
    return cfg.lr0 * cfg.lr_factor**drops


def pick_train_snr(policy: SnrPolicy, rng: np.random.Generator) -> float:
    if isinstance(policy, Fixed):
        return float(policy.db)
    return float(rng.uniform(policy.lo_db, policy.hi_db))


# --------------------------------------------------------------------------
# loss and optimizer
# --------------------------------------------------------------------------

def mse_loss(estimate, target) -> CTensor | float:
    """Mean squared error.

    With a CTensor estimate the result is a taped scalar; with plain arrays
    it is a float.
    """
    if isinstance(estimate, CTensor):
        t = np.asarray(target, dtype=np.float64)
        if estimate.shape != t.shape:
            raise ValueError(f"length mismatch: {estimate.shape} vs {t.shape}")
        return ct.mean(ct.abs2(ct.add_const(ct.real(estimate), -t)))
    e, t = np.asarray(estimate, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if e.shape != t.shape:
        raise ValueError(f"length mismatch: {e.shape} vs {t.shape}")
    return float(np.mean((e - t) ** 2))


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    # complex-typed moments: .real tracks the real part, .imag the imaginary part
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(
    params: Sequence[CTensor],
    grads: Sequence[np.ndarray | None],
    state: AdamState,
    lr: float,
    layers: Sequence[MetaAtomLayer] = (),
) -> None:
    """One Adam update on real and imaginary parts independently, then projection."""
    if lr < 0:
        raise ValueError("lr must be nonnegative")
    if len(params) != len(grads):
        raise ValueError("one gradient per parameter required")
    if not state.m:
        state.m = [np.zeros(p.shape, dtype=np.complex128) for p in params]
        state.v = [np.zeros(p.shape, dtype=np.complex128) for p in params]
    state.step += 1
    b1, b2, t = state.beta1, state.beta2, state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros(p.shape, dtype=np.complex128)
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        sq = g.real**2 + 1j * g.imag**2
        state.m[i] = b1 * state.m[i] + (1 - b1) * g
        state.v[i] = b2 * state.v[i] + (1 - b2) * sq
        m_hat = state.m[i] / (1 - b1**t)
        v_hat = state.v[i] / (1 - b2**t)
        upd = m_hat.real / (np.sqrt(v_hat.real) + state.eps) + 1j * (
            m_hat.imag / (np.sqrt(v_hat.imag) + state.eps)
        )
        if lr != 0:
            p.assign(p.data - lr * upd)
    for layer in layers:
        apply_constraints(layer)


# --------------------------------------------------------------------------
# fit
# --------------------------------------------------------------------------

@dataclass
class HistoryRow:
    epoch: int
    mean_loss: float
    lr: float
    snr_policy_sample_mean: float


def history_csv(history: Sequence[HistoryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_HEADER)
    for h in history:
        w.writerow([fmt(h.epoch), fmt(h.mean_loss), fmt(h.lr), fmt(h.snr_policy_sample_mean)])
    return buf.getvalue()


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, 7]).generate_state(1)[0])


def train_step(model: SemanticModel, values: np.ndarray, snr_db: float, noise_rng, state: AdamState,
               lr: float) -> float:
    named = model.parameters()
    params = [p for _, p in named]
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = mse_loss(transmit(model, values, snr_db, noise_rng, clamp=False), values)
    value = float(loss.data.real)
    if not math.isfinite(value):
        return value
    ct.backward(loss, tape)
    adam_step(params, [p.grad for p in params], state, lr, model.layers())
    return value


def fit(
    model: SemanticModel,
    items: Sequence[ImageItem],
    cfg: TrainConfig,
    out_dir=None,
    on_epoch: Callable[[HistoryRow], None] | None = None,
) -> tuple[SemanticModel, list[HistoryRow]]:
    """Train ``model`` in place; returns it with the per-epoch history.

    With ``out_dir`` set, a checkpoint is written every
    ``cfg.checkpoint_every`` epochs and once at the end (``model.rissc``),
    along with ``history.csv``.
    """
    values_all = source_values(model, items) if items else np.zeros((0, model.source_dims))
    state = AdamState()
    noise_rng = np.random.default_rng([cfg.seed, 1])
    snr_rng = np.random.default_rng([cfg.seed, 2])
    history: list[HistoryRow] = []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(cfg, epoch)
        total, count, snrs = 0.0, 0, []
        for idx in batches(range(len(values_all)), cfg.batch_size, _epoch_seed(cfg.seed, epoch)):
            snr = pick_train_snr(cfg.snr_policy, snr_rng)
            snrs.append(snr)
            loss = train_step(model, values_all[idx], snr, noise_rng, state, lr)
            where = f"epoch {epoch}, batch {len(snrs) - 1}, lr {lr:g}, snr {snr:g} dB"
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss {loss} at {where}")
            bad = [n for n, p in model.parameters() if not np.all(np.isfinite(p.data))]
            if bad:
                raise TrainingDiverged(f"non-finite parameters {', '.join(bad)} after step at {where}")
            total += loss * len(idx)
            count += len(idx)
        row = HistoryRow(epoch, total / max(count, 1), lr, float(np.mean(snrs)) if snrs else 0.0)
        history.append(row)
        log.info("epoch %d loss %.6g lr %.3g", epoch, row.mean_loss, lr)
        if on_epoch is not None:
            on_epoch(row)
        if out is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(out / f"epoch_{epoch + 1:04d}.rissc", model, {"train": cfg.to_dict()})

    if out is not None:
        save_checkpoint(out / "model.rissc", model, {"train": cfg.to_dict()})
        (out / "history.csv").write_text(history_csv(history), encoding="utf-8")
    return model, history


# --------------------------------------------------------------------------
# checkpoint format
# --------------------------------------------------------------------------

def model_metadata(model: SemanticModel) -> dict:
    return {
        "model": asdict(model.config),
        "modem": asdict(model.modem),
        "source_shape": list(model.source_shape),
        "tx_grid": [model.encoder[-1].layer.geometry.rows, model.encoder[-1].layer.geometry.cols],
        "geometries": model.geometries(),
        "params": [{"name": n, "shape": list(p.shape)} for n, p in model.parameters()],
    }


def encode_checkpoint(model: SemanticModel, extra: dict | None = None) -> bytes:
    meta = model_metadata(model)
    if extra:
        meta.update(extra)
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<H", FORMAT_VERSION), struct.pack("<I", len(blob)), blob]
    for _, p in model.parameters():
        parts.append(struct.pack("<I", len(p.shape)))
        parts.append(struct.pack(f"<{len(p.shape)}I", *p.shape))
        inter = np.empty(p.size * 2, dtype="<f8")
        inter[0::2] = p.data.real.ravel()
        inter[1::2] = p.data.imag.ravel()
        parts.append(inter.tobytes())
    return b"".join(parts)


def save_checkpoint(path, model: SemanticModel, extra: dict | None = None) -> None:
    Path(path).write_bytes(encode_checkpoint(model, extra))


def decode_checkpoint(raw: bytes) -> tuple[dict, list[np.ndarray]]:
    if raw[:6] != MAGIC:
        raise ValueError("not a RISSC1 checkpoint (bad magic)")
    (version,) = struct.unpack_from("<H", raw, 6)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (n,) = struct.unpack_from("<I", raw, 8)
    meta = json.loads(raw[12:12 + n].decode("utf-8"))
    pos = 12 + n
    tensors = []
    while pos < len(raw):
        (rank,) = struct.unpack_from("<I", raw, pos)
        dims = struct.unpack_from(f"<{rank}I", raw, pos + 4)
        pos += 4 + 4 * rank
        count = int(np.prod(dims)) if dims else 1
        vals = np.frombuffer(raw, dtype="<f8", count=2 * count, offset=pos)
        pos += 16 * count
        tensors.append((vals[0::2] + 1j * vals[1::2]).reshape(dims))
    return meta, tensors


def load_checkpoint(path) -> tuple[SemanticModel, dict]:
    meta, tensors = decode_checkpoint(Path(path).read_bytes())
    mcfg = dict(meta["model"])
    model = build_model(
        tuple(meta["source_shape"]),
        ModelConfig(**mcfg),
        tx_grid=tuple(meta["tx_grid"]),
        modem=ModemSpec(**meta["modem"]),
    )
    named = model.parameters()
    if len(named) != len(tensors):
        raise ValueError(f"checkpoint holds {len(tensors)} tensors, model needs {len(named)}")
    for (name, p), arr in zip(named, tensors):
        if p.shape != arr.shape:
            raise ValueError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
        p.assign(arr)
    for side in ("encoder", "decoder"):
        stored = [Geometry.from_dict(g) for g in meta["geometries"][side]]
        built = [s.layer.geometry for s in getattr(model, side)]
        if stored != built:
            raise ValueError(f"{side} geometry in checkpoint does not match its config")
    return model, meta
