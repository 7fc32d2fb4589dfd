"""Checkpoint save/load on top of the binary tensor container."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from . import tensorfile


@dataclass
class Checkpoint:
    soft_context: np.ndarray       # [context_len, embed_dim]
    visual_prompts: np.ndarray     # [K, N_p, embed_dim] (zeros if unused)
    prototypes: np.ndarray         # [C, projection_dim]
    weights_seed: int
    config_hash: int


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    meta = np.array([ckpt.weights_seed, ckpt.config_hash], dtype=np.float32)
    tensorfile.write_tensors(path, {
        "soft_context": ckpt.soft_context,
        "visual_prompts": ckpt.visual_prompts,
        "prototypes": ckpt.prototypes,
        "meta": meta,
    })


def load_checkpoint(path) -> Checkpoint:
    t = tensorfile.read_tensors(path)
    try:
        meta = t["meta"]
        return Checkpoint(soft_context=t["soft_context"],
                          visual_prompts=t["visual_prompts"],
                          prototypes=t["prototypes"],
                          weights_seed=int(meta[0]),
                          config_hash=int(meta[1]))
    except KeyError as exc:
        raise ValueError(f"{path}: missing checkpoint entry {exc}") from exc
