"""CIFAR-10 binary batches, plain image directories, and batching."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

CIFAR_RECORD = 3073
CIFAR_SIDE = 32
IMAGE_SUFFIXES = {".ppm", ".pnm", ".png"}


@dataclass(frozen=True)
class ImageItem:
    pixels: np.ndarray  # H x W x C, uint8
    label: int | None = None

    def __post_init__(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[0] < 1 or p.shape[1] < 1 or p.shape[2] not in (1, 3):
            raise ValueError(f"pixels must be H x W x C with C in (1, 3), got {p.shape}")
        if p.dtype != np.uint8:
            raise ValueError("pixels must be uint8")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape


def load_cifar10(path) -> list[ImageItem]:
    """Parse one CIFAR-10 binary batch file (label byte + 3072 planar RGB bytes per record)."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % CIFAR_RECORD:
        raise ValueError(f"{path}: size {raw.size} is not a multiple of {CIFAR_RECORD} bytes")
    recs = raw.reshape(-1, CIFAR_RECORD)
    labels = recs[:, 0]
    if labels.size and labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise ValueError(f"{path}: record {bad} has label {labels[bad]} > 9")
    imgs = recs[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE).transpose(0, 2, 3, 1)
    return [ImageItem(np.ascontiguousarray(im), int(lb)) for im, lb in zip(imgs, labels)]


def write_cifar10(path, items: Sequence[ImageItem]) -> None:
    """Inverse of :func:`load_cifar10`; items must be 32 x 32 x 3."""
    out = np.empty((len(items), CIFAR_RECORD), dtype=np.uint8)
    for i, it in enumerate(items):
        if it.shape != (CIFAR_SIDE, CIFAR_SIDE, 3):
            raise ValueError(f"item {i} has shape {it.shape}, CIFAR needs 32x32x3")
        out[i, 0] = it.label or 0
        out[i, 1:] = it.pixels.transpose(2, 0, 1).ravel()
    out.tofile(path)


def cifar_split(root, split: str = "train") -> list[ImageItem]:
    """All ``data_batch_*`` files (train) or ``test_batch*`` (test) under ``root``."""
    root = Path(root)
    pattern = "data_batch_*" if split == "train" else "test_batch*"
    files = sorted(root.glob(pattern))
    if not files:
        raise FileNotFoundError(f"no {pattern} files in {root}")
    items = []
    for f in files:
        items.extend(load_cifar10(f))
    return items


def luma(rgb: np.ndarray) -> np.ndarray:
    """ITU-R 601 luma of an H x W x 3 array, as floats."""
    rgb = np.asarray(rgb, dtype=np.float64)
    return rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114


def _to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round(x), 0, 255).astype(np.uint8)


def center_crop(pixels: np.ndarray, aspect: float) -> np.ndarray:
    """Largest centered crop with width / height == aspect."""
    h, w = pixels.shape[:2]
    if w / h > aspect:
        nw = max(1, int(round(h * aspect)))
        x0 = (w - nw) // 2
        return pixels[:, x0:x0 + nw]
    nh = max(1, int(round(w / aspect)))
    y0 = (h - nh) // 2
    return pixels[y0:y0 + nh]


def _resize_plane(plane: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    if plane.shape == size:
        return plane.astype(np.float64)
    img = Image.fromarray(plane.astype(np.float32), mode="F")
    out = img.resize((size[1], size[0]), Image.Resampling.BILINEAR)
    return np.asarray(out, dtype=np.float64)


def prepare(pixels: np.ndarray, target_size: tuple[int, int] | None, grayscale: bool) -> np.ndarray:
    """Center-crop, bilinear-resample and optionally gray-convert one image."""
    px = np.asarray(pixels)
    if px.ndim == 2:
        px = px[..., None]
    work = px.astype(np.float64)
    if grayscale and work.shape[2] == 3:
        work = luma(work)[..., None]
    if target_size is not None:
        th, tw = target_size
        work = center_crop(work, tw / th)
        work = np.stack([_resize_plane(work[..., c], (th, tw)) for c in range(work.shape[2])], -1)
    return _to_uint8(work)


def transform(items: Sequence[ImageItem], target_size=None, grayscale: bool = False) -> list[ImageItem]:
    return [ImageItem(prepare(it.pixels, target_size, grayscale), it.label) for it in items]


def load_images(directory, target_size: tuple[int, int], grayscale: bool = True) -> list[ImageItem]:
    """Every decodable PPM/PNG in ``directory`` (sorted by name), cropped and resized."""
    items = []
    for f in sorted(Path(directory).iterdir()):
        if f.suffix.lower() not in IMAGE_SUFFIXES:
            continue
        try:
            with Image.open(f) as im:
                arr = np.asarray(im.convert("L" if im.mode in ("L", "I", "F") else "RGB"))
        except (OSError, ValueError) as exc:
            log.warning("skipping %s: %s", f, exc)
            continue
        items.append(ImageItem(prepare(arr, target_size, grayscale)))
    if not items:
        raise ValueError(f"no decodable images in {directory}")
    return items


def write_ppm(path, pixels: np.ndarray) -> None:
    """Binary PPM (P6) for RGB, PGM (P5) for single-channel images."""
    px = np.asarray(pixels, dtype=np.uint8)
    if px.ndim == 3 and px.shape[2] == 1:
        px = px[..., 0]
    magic = b"P6" if px.ndim == 3 else b"P5"
    h, w = px.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(px).tobytes())


def load_dataset(path, target_size=None, grayscale: bool = False, split: str = "train") -> list[ImageItem]:
    """Dispatch on what ``path`` is: a CIFAR batch file, a CIFAR directory, or an image directory."""
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"dataset path {p} does not exist")
    if p.is_file():
        items = load_cifar10(p)
    elif any(p.glob("data_batch_*")) or any(p.glob("test_batch*")):
        items = cifar_split(p, split)
    else:
        return load_images(p, target_size or (CIFAR_SIDE, CIFAR_SIDE), grayscale)
    if target_size is None and not grayscale:
        return items
    return transform(items, target_size, grayscale)


def batches(items: Sequence, batch_size: int, shuffle_seed: int | None) -> Iterator[list]:
    """Yield consecutive batches; seeded shuffle first, last partial batch kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(items))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(items))
    for start in range(0, len(items), batch_size):
        yield [items[i] for i in order[start:start + batch_size]]


def stack_pixels(items: Sequence[ImageItem]) -> np.ndarray:
    return np.stack([it.pixels for it in items])

