"""Class prototypes from frozen image features and the visual anchoring loss.

A prototype is the arithmetic mean of the frozen (un-prompted) global features
of a seeded per-class subset of the training images.  The alignment loss pulls
prompted global features toward their class prototype; prototypes themselves
stay constant, so this adds no trainable parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import tensor as T
from .encoders import FrozenWeights, image_encode
from .tensor import Tensor

SubsetSize = Union[int, str]  # positive int or "full"

METRICS = ("cosine", "l1")


@dataclass
class PrototypeTable:
    table: Tensor               # [C, projection_dim], constant
    subset_size: SubsetSize
    subset_seed: int

    @property
    def num_classes(self) -> int:
        return self.table.shape[0]


def compute_prototypes(images: np.ndarray, labels: np.ndarray,
                       fw: FrozenWeights, subset_size: SubsetSize = "full",
                       subset_seed: int = 0, batch_size: int = 64) -> PrototypeTable:
    """Mean frozen global feature per class over a seeded random subset.

    The subset is drawn per class without replacement, capped at the class
    sample count; encoding uses the plain frozen path (no visual prompts).
    """
    labels = np.asarray(labels)
    num_classes = int(labels.max()) + 1 if labels.size else 0
    rng = np.random.default_rng(subset_seed)
    rows = []
    for c in range(num_classes):
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            raise ValueError(f"compute_prototypes: class {c} has no samples")
        if subset_size != "full":
            n = min(int(subset_size), idx.size)
            idx = np.sort(rng.choice(idx, size=n, replace=False))
        feats = []
        for start in range(0, idx.size, batch_size):
            batch = Tensor(images[idx[start:start + batch_size]])
            feats.append(image_encode(fw, batch).global_.data)
        rows.append(np.concatenate(feats, axis=0).mean(axis=0))
    return PrototypeTable(Tensor(np.stack(rows)), subset_size, subset_seed)


def visual_alignment_loss(prompted_global: Tensor, labels: np.ndarray,
                          prototypes: PrototypeTable,
                          metric: str = "cosine") -> Tensor:
    """Mean distance between each sample's prompted global feature and its
    class prototype; metric is cosine distance (1 - cos) or mean-absolute L1."""
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}, got {metric!r}")
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= prototypes.num_classes:
        raise ValueError(f"label out of range for {prototypes.num_classes} prototypes")
    protos = Tensor(prototypes.table.data[labels])  # [B, P], constant
    if metric == "l1":
        return T.mean(T.abs_(T.sub(prompted_global, protos)))
    cos = T.sum_(T.mul(T.l2_normalize(prompted_global), T.l2_normalize(protos)),
                 axis=-1)
    return T.add(Tensor(np.float32(1.0)), T.scale(T.mean(cos), -1.0))
