"""Ablation grids: train+eval one cell per configuration with shared seeds."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import TrainConfig
from .data import Dataset
from .prompts import ClassDescription
from .train import evaluate, train


@dataclass
class AblationCell:
    name: str
    overrides: dict


@dataclass
class AblationRow:
    cell: str
    seed: int
    accuracy: float


def component_accumulation_cells() -> list[AblationCell]:
    """Baseline, then one component added per row."""
    return [
        AblationCell("baseline", dict(use_visual_prompts=False, beta=0.0,
                                      gamma=0.0, use_local_alignment=False)),
        AblationCell("+visual_prompts", dict(beta=0.0, gamma=0.0,
                                             use_local_alignment=False)),
        AblationCell("+prototype_align", dict(beta=0.0,
                                              use_local_alignment=False)),
        AblationCell("+soft_hard_align", dict(use_local_alignment=False)),
        AblationCell("+local_topk_align", dict()),
    ]


def template_cells() -> list[AblationCell]:
    cells = []
    for tc in (1, 2, 3):
        cells.append(AblationCell(f"template{tc}",
                                  dict(template_config=tc, beta=0.0)))
        cells.append(AblationCell(f"template{tc}+soft_hard",
                                  dict(template_config=tc, beta=1.0)))
    return cells


def prototype_subset_cells(sizes=(1, 4, 16, "full")) -> list[AblationCell]:
    return [AblationCell(f"subset_{s}", dict(prototype_subset=s)) for s in sizes]


GRIDS = {
    "components": component_accumulation_cells,
    "templates": template_cells,
    "prototypes": prototype_subset_cells,
}


def run_grid(cells: Sequence[AblationCell], base_cfg: TrainConfig,
             train_ds: Dataset, val_ds: Dataset, test_ds: Dataset,
             descriptions: Sequence[ClassDescription],
             seeds: Sequence[int] = (0, 1, 2), log=None) -> list[AblationRow]:
    rows = []
    for cell in cells:
        for seed in seeds:
            cfg = replace(base_cfg, train_seed=seed, **cell.overrides)
            result = train(cfg, train_ds, val_ds, descriptions)
            acc, _ = evaluate(result.model, test_ds)
            rows.append(AblationRow(cell.name, seed, acc))
            if log:
                log(f"{cell.name} seed={seed}: accuracy {acc:.4f}")
    return rows


def mean_accuracies(rows: Sequence[AblationRow]) -> dict[str, float]:
    by_cell: dict[str, list[float]] = {}
    for r in rows:
        by_cell.setdefault(r.cell, []).append(r.accuracy)
    return {cell: float(np.mean(accs)) for cell, accs in by_cell.items()}


def write_report(rows: Sequence[AblationRow], out_dir,
                 title: str = "ablation") -> str:
    """Emit results.csv plus a text table; returns the text table."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cell", "seed", "accuracy"])
        for r in rows:
            writer.writerow([r.cell, r.seed, f"{r.accuracy:.6f}"])
    means = mean_accuracies(rows)
    width = max(len(c) for c in means)
    lines = [f"{title}", "-" * (width + 18)]
    prev = None
    for cell, acc in means.items():
        delta = "" if prev is None else f" ({100 * (acc - prev):+.2f})"
        lines.append(f"{cell:<{width}}  {100 * acc:6.2f}%{delta}")
        prev = acc
    text = "\n".join(lines)
    (out / "report.txt").write_text(text + "\n", encoding="utf-8")
    return text
