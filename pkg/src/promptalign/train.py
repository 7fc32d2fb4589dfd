"""Training loop (SGD + cosine decay over prompt parameters only) and evaluation."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .checkpoint import Checkpoint, save_checkpoint
from .config import TrainConfig, to_text
from .data import Dataset
from .model import PromptModel
from .prompts import ClassDescription
from .tensor import Tape, Tensor

METRICS_HEADER = "epoch,l_total,l_vt,l_ta,l_pa,l_v,train_acc,val_acc,seconds"


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class MetricsRecord:
    epoch: int
    l_total: float
    l_vt: float
    l_ta: float
    l_pa: float
    l_v: float
    train_acc: float
    val_acc: float
    seconds: float

    def csv_row(self) -> str:
        return (f"{self.epoch},{self.l_total:.6f},{self.l_vt:.6f},"
                f"{self.l_ta:.6f},{self.l_pa:.6f},{self.l_v:.6f},"
                f"{self.train_acc:.6f},{self.val_acc:.6f},{self.seconds:.3f}")


@dataclass
class TrainResult:
    model: PromptModel
    init_checkpoint: Checkpoint
    final_checkpoint: Checkpoint
    best_checkpoint: Checkpoint
    best_epoch: int
    metrics: list


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Cosine decay from base_lr at step 0 to 0 at the final step."""
    if total_steps <= 1:
        return base_lr
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * step / (total_steps - 1)))


def _flip_horizontal(images: np.ndarray, flags: np.ndarray) -> np.ndarray:
    out = images.copy()
    out[flags] = out[flags][:, :, ::-1, :]
    return out


def train(cfg: TrainConfig, train_ds: Dataset, val_ds: Dataset,
          descriptions: Sequence[ClassDescription],
          out_dir: Optional[str] = None,
          log=None) -> TrainResult:
    """Full training run; optionally writes metrics CSV and checkpoints to out_dir."""
    model = PromptModel.build(cfg, train_ds, descriptions)
    init_ckpt = model.state_checkpoint()
    params = model.trainable_tensors()
    velocity = [np.zeros_like(p.data) for p in params]

    n = len(train_ds)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    rng = np.random.default_rng(cfg.train_seed)

    metrics: list[MetricsRecord] = []
    best_acc, best_epoch, best_ckpt = -1.0, -1, init_ckpt
    step = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        flips = rng.random(n) < 0.5
        images = _flip_horizontal(train_ds.images[order], flips)
        labels = train_ds.labels[order]
        sums = {k: 0.0 for k in ("total", "vt", "ta", "pa", "v")}
        correct = 0
        for start in range(0, n, cfg.batch_size):
            batch_x = Tensor(images[start:start + cfg.batch_size])
            batch_y = labels[start:start + cfg.batch_size]
            with Tape() as tape:
                losses = model.batch_losses(batch_x, batch_y)
                tape.backward(losses["total"])
            total = losses["total"].item()
            if not math.isfinite(total):
                raise TrainingDiverged(
                    f"non-finite loss {total} at epoch {epoch} step {step}")
            lr = cosine_lr(cfg.lr, step, total_steps)
            for p, v in zip(params, velocity):
                g = p.grad
                if cfg.weight_decay:
                    g = g + cfg.weight_decay * p.data
                v *= cfg.momentum
                v += g
                p.data -= (lr * v).astype(p.data.dtype)
                p.zero_grad()
            bsz = len(batch_y)
            for key in sums:
                sums[key] += losses[key].item() * bsz
            correct += int((losses["logits"].data.argmax(axis=1) == batch_y).sum())
            step += 1
        val_acc, _ = evaluate(model, val_ds)
        rec = MetricsRecord(
            epoch=epoch,
            l_total=sums["total"] / n, l_vt=sums["vt"] / n,
            l_ta=sums["ta"] / n, l_pa=sums["pa"] / n, l_v=sums["v"] / n,
            train_acc=correct / n, val_acc=val_acc,
            seconds=time.perf_counter() - t0)
        metrics.append(rec)
        if log:
            log(f"epoch {epoch}: total {rec.l_total:.4f} "
                f"train_acc {rec.train_acc:.3f} val_acc {rec.val_acc:.3f}")
        if val_acc > best_acc:
            best_acc, best_epoch = val_acc, epoch
            best_ckpt = model.state_checkpoint()

    final_ckpt = model.state_checkpoint()
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics(out / "metrics.csv", metrics)
        (out / "config.txt").write_text(to_text(cfg), encoding="utf-8")
        save_checkpoint(out / "init.mpaf", init_ckpt)
        save_checkpoint(out / "best.mpaf", best_ckpt)
        save_checkpoint(out / "final.mpaf", final_ckpt)
    return TrainResult(model=model, init_checkpoint=init_ckpt,
                       final_checkpoint=final_ckpt, best_checkpoint=best_ckpt,
                       best_epoch=best_epoch, metrics=metrics)


def write_metrics(path, metrics: Sequence[MetricsRecord]) -> None:
    lines = [METRICS_HEADER] + [m.csv_row() for m in metrics]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def evaluate(model: PromptModel, ds: Dataset) -> tuple[float, np.ndarray]:
    """Accuracy and C x C confusion matrix (rows: true class) over a split."""
    logits = model.predict_logits(ds.images)
    preds = logits.argmax(axis=1)
    c = ds.num_classes
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (ds.labels, preds), 1)
    accuracy = float(np.trace(confusion)) / len(ds)
    return accuracy, confusion
