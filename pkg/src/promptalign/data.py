"""Synthetic class-discriminative image data.

Each class owns a small, fixed set of patch positions (its signature region,
at most 25% of the patch grid) filled with a class-specific periodic texture;
everything else is Gaussian background noise.  Every pixel is a pure function
of (spec, split, class, sample index), so datasets regenerate byte-identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensorfile

DEFAULT_CLASS_NAMES_7 = ("anger", "disgust", "fear", "happiness", "neutral",
                         "sadness", "surprise")
DEFAULT_CLASS_NAMES_8 = DEFAULT_CLASS_NAMES_7 + ("contempt",)

SPLITS = ("train", "val", "test")


@dataclass
class SyntheticDatasetSpec:
    num_classes: int = 7
    samples_per_class: int = 200
    test_per_class: int = 40
    val_fraction: float = 0.1
    image_size: int = 32
    image_channels: int = 1
    patch_size: int = 8
    sigma_bg: float = 0.5
    signature_amplitude: float = 2.0
    seed: int = 0
    class_names: tuple = ()

    def __post_init__(self):
        if not self.class_names:
            base = (DEFAULT_CLASS_NAMES_8 if self.num_classes == 8
                    else DEFAULT_CLASS_NAMES_7)
            if self.num_classes <= len(base):
                self.class_names = base[: self.num_classes]
            else:
                self.class_names = tuple(f"class{i}" for i in range(self.num_classes))
        if len(self.class_names) != self.num_classes:
            raise ValueError("class_names length must equal num_classes")
        grid = self.image_size // self.patch_size
        if self.num_classes * 2 > grid * grid:
            raise ValueError("too many classes for the patch grid")

    @property
    def grid_size(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid_size ** 2

    @property
    def val_per_class(self) -> int:
        return max(1, round(self.val_fraction * self.samples_per_class))

    def split_sizes(self, split: str) -> int:
        return {"train": self.samples_per_class,
                "val": self.val_per_class,
                "test": self.test_per_class}[split]


def signature_patches(spec: SyntheticDatasetSpec, c: int) -> tuple[int, int]:
    """Patch-grid indices owned by class c (pairwise disjoint across classes).

    Each class owns a horizontally mirrored pair of patches, so the flip
    augmentation maps a class's signature region onto itself instead of onto
    another class's territory.
    """
    g = spec.grid_size
    pairs_per_row = g // 2
    r = (c // pairs_per_row) % g
    col = c % pairs_per_row
    return r * g + col, r * g + (g - 1 - col)


def signature_mask(spec: SyntheticDatasetSpec, c: int) -> np.ndarray:
    """Boolean [H, W] mask of the class's signature pixels."""
    mask = np.zeros((spec.image_size, spec.image_size), dtype=bool)
    g, p = spec.grid_size, spec.patch_size
    for patch in signature_patches(spec, c):
        r, col = divmod(patch, g)
        mask[r * p:(r + 1) * p, col * p:(col + 1) * p] = True
    return mask


def _texture(spec: SyntheticDatasetSpec, c: int) -> np.ndarray:
    """Class-specific periodic texture tile of shape [patch, patch].

    The grating varies along image rows only, which makes the tile invariant
    under horizontal flips; together with the mirrored signature placement
    this keeps flip-augmented images valid samples of their own class.
    """
    p = spec.patch_size
    u = np.arange(p)[:, None]
    fx = 1 + c % (p // 2)
    phase = 0.7 * c
    tile = np.cos(2 * np.pi * fx * u / p + phase) * np.ones((1, p))
    return (spec.signature_amplitude * tile).astype(np.float32)


def generate_image(spec: SyntheticDatasetSpec, split: str, c: int,
                   index: int) -> np.ndarray:
    """Deterministically generate one [H, W, C] image."""
    split_id = SPLITS.index(split)
    rng = np.random.default_rng([spec.seed, split_id, c, index])
    img = rng.normal(0.0, spec.sigma_bg,
                     (spec.image_size, spec.image_size, spec.image_channels))
    img = img.astype(np.float32)
    g, p = spec.grid_size, spec.patch_size
    tile = _texture(spec, c)[:, :, None]
    for patch in signature_patches(spec, c):
        r, col = divmod(patch, g)
        img[r * p:(r + 1) * p, col * p:(col + 1) * p] += tile
    return img


@dataclass
class Dataset:
    images: np.ndarray       # [N, H, W, C] float32
    labels: np.ndarray       # [N] int64
    class_names: tuple

    def __len__(self):
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


def generate_split(spec: SyntheticDatasetSpec, split: str) -> Dataset:
    n = spec.split_sizes(split)
    images, labels = [], []
    for c in range(spec.num_classes):
        for i in range(n):
            images.append(generate_image(spec, split, c, i))
            labels.append(c)
    return Dataset(np.stack(images), np.asarray(labels, dtype=np.int64),
                   spec.class_names)


def write_dataset(spec: SyntheticDatasetSpec, out_dir, force: bool = False) -> None:
    """Write train/val/test sample files plus manifests and classes.txt."""
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"{out}: output directory not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    (out / "classes.txt").write_text(
        "\n".join(spec.class_names) + "\n", encoding="utf-8")
    for split in SPLITS:
        (out / split).mkdir(exist_ok=True)
        lines = []
        for c in range(spec.num_classes):
            for i in range(spec.split_sizes(split)):
                rel = f"{split}/c{c}_{i:04d}.mpaf"
                tensorfile.write_tensors(out / rel,
                                         {"image": generate_image(spec, split, c, i)})
                lines.append(f"{rel}\t{c}")
        (out / f"{split}.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_dataset(root, split: str) -> Dataset:
    root = Path(root)
    class_names = tuple((root / "classes.txt").read_text(encoding="utf-8").split())
    images, labels = [], []
    manifest = (root / f"{split}.txt").read_text(encoding="utf-8")
    for line in manifest.splitlines():
        if not line.strip():
            continue
        rel, cls = line.split("\t")
        images.append(tensorfile.read_tensors(root / rel)["image"])
        labels.append(int(cls))
    return Dataset(np.stack(images), np.asarray(labels, dtype=np.int64), class_names)
