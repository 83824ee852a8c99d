"""
Manifests, synthetic four-class radiograph stand-ins and stratified splits.

Manifest format: one ``relative/path<TAB>class name`` line per image, UTF-8, LF.
"""
import logging
import os
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .augment import Image, center_crop, to_grayscale, to_rgb
from .exceptions import InputError
from .imageio import read_image, write_image
from .models import CLASS_NAMES, DatasetEntry, DatasetManifest

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.tsv"
SYNTH_SIZE = 64
STRIPE_PERIOD = 12
BLOB_SIGMA = 5.0
BLOB_JITTER = 3
NOISE_STD = 0.05


def _class_order(labels: Sequence[str]) -> List[str]:
    if set(labels) <= set(CLASS_NAMES):
        return list(CLASS_NAMES)
    order: List[str] = []
    for label in labels:
        if label not in order:
            order.append(label)
    return order


def read_manifest(path: Union[str, Path], check_files: bool = True) -> DatasetManifest:
    """Parse a manifest; paths resolve against the manifest's directory."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise FileNotFoundError(f"Manifest not found at {path}")
    entries = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise InputError(f"{path}:{lineno}: expected 'relative/path<TAB>class name'")
        entries.append(DatasetEntry(path=parts[0], label=parts[1]))
    manifest = DatasetManifest(
        root=str(path.parent),
        entries=entries,
        class_names=_class_order([e.label for e in entries]),
    )
    if check_files:
        missing = [e.path for e in entries if not (path.parent / e.path).is_file()]
        if missing:
            raise InputError(f"{len(missing)} manifest entries do not exist under {path.parent}: {missing[:3]}")
    return manifest


def write_manifest(manifest: DatasetManifest, path: Union[str, Path]) -> None:
    lines = [f"{e.path}\t{e.label}\n" for e in manifest.entries]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.writelines(lines)


def _slug(name: str) -> str:
    return name.lower().replace(" ", "-")


def blob_centers(label: int, size: int = SYNTH_SIZE) -> List[Tuple[float, float]]:
    """Nominal (row, col) blob centres that identify a synthetic class."""
    s = size / SYNTH_SIZE
    layouts = {
        0: [(16, 32)],
        1: [(48, 32)],
        2: [(32, 32)],
        3: [(32, 14), (32, 50)],
    }
    return [(r * s, c * s) for r, c in layouts[label]]


def synth_image(label: int, rng: np.random.Generator, size: int = SYNTH_SIZE) -> Image:
    """One synthetic radiograph: class texture + class blob(s) + Gaussian noise."""
    yy, xx = np.meshgrid(np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64), indexing="ij")
    phase_y, phase_x = rng.uniform(0, STRIPE_PERIOD, size=2)
    wave_y = 0.5 + 0.5 * np.sin(2 * np.pi * (yy + phase_y) / STRIPE_PERIOD)
    wave_x = 0.5 + 0.5 * np.sin(2 * np.pi * (xx + phase_x) / STRIPE_PERIOD)
    half = STRIPE_PERIOD // 2
    if label == 0:
        texture = wave_y
    elif label == 1:
        texture = wave_x
    elif label == 2:
        texture = (((yy + phase_y) // half + (xx + phase_x) // half) % 2).astype(np.float64)
    else:
        texture = np.zeros_like(yy)
    pixels = 0.15 + 0.25 * texture
    for row, col in blob_centers(label, size):
        dr, dc = rng.integers(-BLOB_JITTER, BLOB_JITTER + 1, size=2)
        dist2 = (yy - row - dr) ** 2 + (xx - col - dc) ** 2
        pixels += 0.5 * np.exp(-dist2 / (2 * BLOB_SIGMA ** 2))
    pixels += rng.normal(0.0, NOISE_STD, size=pixels.shape)
    return Image(np.clip(pixels, 0.0, 1.0))


def synth_dataset(out_dir: Union[str, Path], n_per_class: int, seed: int,
                  size: int = SYNTH_SIZE) -> DatasetManifest:
    """Write n_per_class PGMs for each canonical class plus a manifest."""
    if n_per_class < 1:
        raise InputError(f"n_per_class must be positive, got {n_per_class}")
    out_dir = Path(out_dir)
    entries = []
    for label, name in enumerate(CLASS_NAMES):
        class_dir = out_dir / _slug(name)
        os.makedirs(class_dir, exist_ok=True)
        for i in range(n_per_class):
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(label, i))))
            relative = f"{_slug(name)}/{i:04d}.pgm"
            write_image(out_dir / relative, synth_image(label, rng, size))
            entries.append(DatasetEntry(path=relative, label=name))
    manifest = DatasetManifest(root=str(out_dir), entries=entries, class_names=list(CLASS_NAMES))
    write_manifest(manifest, out_dir / MANIFEST_NAME)
    logger.info("wrote %d synthetic images to %s", len(entries), out_dir)
    return manifest


def stratified_split(labels: Sequence[int], val_fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded per-class split; each class keeps at least one training example."""
    if not 0 <= val_fraction < 1:
        raise InputError(f"val_fraction must lie in [0, 1), got {val_fraction}")
    labels = np.asarray(labels, dtype=np.int64)
    train, val = [], []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(int(cls),))))
        members = rng.permutation(members)
        n_val = min(int(np.floor(len(members) * val_fraction + 0.5)), len(members) - 1)
        val.extend(members[:n_val])
        train.extend(members[n_val:])
    return np.sort(np.asarray(train, dtype=np.int64)), np.sort(np.asarray(val, dtype=np.int64))


def prepare_image(img: Image, channels: int, size: int) -> Image:
    """Match the model's channel count and square input size."""
    img = to_grayscale(img) if channels == 1 else to_rgb(img)
    if img.height != size or img.width != size:
        img = center_crop(img, size)
    return img


def load_images(manifest: DatasetManifest, channels: int, size: int,
                indices: Optional[Sequence[int]] = None) -> Tuple[List[Image], np.ndarray]:
    """Read and prepare the selected entries; returns images and integer labels."""
    labels = np.asarray(manifest.label_indices(), dtype=np.int64)
    indices = range(len(manifest.entries)) if indices is None else indices
    root = Path(manifest.root)
    images = [prepare_image(read_image(root / manifest.entries[i].path), channels, size) for i in indices]
    return images, labels[list(indices)]


def stack_images(images: Sequence[Image]) -> np.ndarray:
    """[N, C, H, W] batch from channel-last images."""
    if not images:
        raise InputError("cannot stack an empty image list")
    return np.stack([img.pixels.transpose(2, 0, 1) for img in images])
