"""Inspection exports: pixel saliency maps and 2-D feature projections."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import Dataset
from .model import PromptModel
from .tensor import Tape, Tensor


def saliency_raw(model: PromptModel, image: np.ndarray) -> tuple[np.ndarray, int]:
    """Gradient-times-input attribution for one [H, W, C] image.

    Returns |d predicted-logit / d pixel * pixel| plus the predicted class.
    The input factor matters here: features are L2-normalized before the
    cosine logits, which shrinks raw gradients on high-energy regions, so the
    bare gradient magnitude understates exactly the pixels that carry signal.
    """
    soft_features = model.soft.encode_features(model.fw)
    img = Tensor(image[None], requires_grad=True)
    with Tape() as tape:
        feats = model.encode_images(img)
        logit_mat = model.class_logits(feats, soft_features)
        pred = int(logit_mat.data[0].argmax())
        tape.backward(T.slice_(logit_mat, (0, pred)))
    return np.abs(img.grad[0] * image), pred


def saliency_map(model: PromptModel, image: np.ndarray) -> tuple[np.ndarray, int]:
    """Min-max normalized saliency grid with the input image's shape."""
    grid, pred = saliency_raw(model, image)
    lo, hi = grid.min(), grid.max()
    if hi > lo:
        grid = (grid - lo) / (hi - lo)
    else:
        grid = np.zeros_like(grid)
    return grid, pred


def export_saliency(model: PromptModel, ds: Dataset, out_dir,
                    limit: int | None = None) -> list[dict]:
    """Write per-image saliency CSV and greyscale PGM files; return a summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = len(ds) if limit is None else min(limit, len(ds))
    summary = []
    for i in range(n):
        grid, pred = saliency_map(model, ds.images[i])
        flat = grid[:, :, 0] if grid.shape[-1] == 1 else grid.mean(axis=-1)
        np.savetxt(out / f"saliency_{i:04d}.csv", flat, delimiter=",", fmt="%.6f")
        _write_pgm(out / f"saliency_{i:04d}.pgm", flat)
        summary.append({"index": i, "label": int(ds.labels[i]), "pred": pred})
    return summary


def _write_pgm(path, grid: np.ndarray) -> None:
    h, w = grid.shape
    pixels = np.clip(grid * 255.0, 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def project_features(features: np.ndarray) -> np.ndarray:
    """Deterministic 2-D PCA projection of row features (sign-normalized)."""
    x = features.astype(np.float64)
    x = x - x.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(x, full_matrices=False)
    coords = x @ vt[:2].T
    for j in range(coords.shape[1]):
        col = vt[j]
        if col[np.abs(col).argmax()] < 0:
            coords[:, j] = -coords[:, j]
    return coords


def export_projection(model: PromptModel, ds: Dataset, out_path) -> np.ndarray:
    """Top-2 principal components of prompted global features, as CSV."""
    feats = []
    for start in range(0, len(ds), 64):
        batch = Tensor(ds.images[start:start + 64])
        feats.append(model.encode_images(batch).global_.data)
    coords = project_features(np.concatenate(feats, axis=0))
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "label", "x", "y"])
        for i, (x, y) in enumerate(coords):
            writer.writerow([i, int(ds.labels[i]), f"{x:.6f}", f"{y:.6f}"])
    return coords
