"""Global-local cross-modal alignment: top-k sparse similarity and logits.

Per class, the k most similar patch features are averaged and added to the
global cosine similarity; selection is a hard mask (gradient flows only
through the chosen patches), with ties broken toward the lower patch index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class AlignmentConfig:
    k: int = 16
    beta: float = 1.0
    gamma: float = 1.0
    tau_logits: float = 0.07

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("beta and gamma must be non-negative")
        if self.tau_logits <= 0:
            raise ValueError("tau_logits must be positive")


def topk_sparse_similarity(locals_: Tensor, text_feature: Tensor, k: int) -> Tensor:
    """Mean of the k largest patch/text inner products (unit-norm inputs)."""
    if locals_.ndim != 2 or locals_.shape[0] == 0:
        raise ValueError(f"topk_sparse_similarity: need [N_l, D] locals, got {locals_.shape}")
    k = min(k, locals_.shape[0])
    sims = T.matmul(locals_, text_feature)
    return T.topk_mean(sims, k, axis=0)


def topk_indices(locals_: np.ndarray, text_feature: np.ndarray, k: int) -> np.ndarray:
    """Indices of the selected patches (analysis helper, no gradient)."""
    sims = locals_ @ text_feature
    k = min(k, sims.shape[0])
    return np.sort(np.argsort(-sims, kind="stable")[:k])


def logits(global_: Tensor, locals_: Tensor, text_features: Tensor,
           k: int) -> Tensor:
    """Per-class global cosine plus per-class top-k sparse local similarity.

    global_ [B, P], locals_ [B, N_l, P], text_features [C, P] -> [B, C].
    Each class selects its own best patches.
    """
    if global_.ndim != 2 or locals_.ndim != 3 or text_features.ndim != 2:
        raise ValueError(
            f"logits: bad shapes global {global_.shape}, locals {locals_.shape}, "
            f"text {text_features.shape}")
    k = min(k, locals_.shape[1])
    text_t = T.transpose(text_features, (1, 0))
    gsim = T.matmul(global_, text_t)                 # [B, C]
    lsim = T.matmul(locals_, text_t)                 # [B, N_l, C]
    return T.add(gsim, T.topk_mean(lsim, k, axis=1))


def image_text_loss(logit_mat: Tensor, labels: np.ndarray,
                    tau_logits: float) -> Tensor:
    """Mean cross-entropy over the batch of temperature-scaled logits."""
    if tau_logits <= 0:
        raise ValueError("tau_logits must be positive")
    return T.softmax_cross_entropy_rows(T.scale(logit_mat, 1.0 / tau_logits), labels)


def total_loss(l_vt: Tensor, l_t: Tensor, l_v: Tensor,
               beta: float, gamma: float) -> Tensor:
    return T.add(l_vt, T.add(T.scale(l_t, beta), T.scale(l_v, gamma)))
