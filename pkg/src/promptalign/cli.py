"""Command-line surface: data generation, training, evaluation and exports."""

from __future__ import annotations

import sys
from pathlib import Path

import click
import numpy as np

from . import ablate as ablate_mod
from . import tensorfile
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig, parse_config_file, to_text
from .data import (SyntheticDatasetSpec, load_dataset, write_dataset)
from .exports import export_projection, export_saliency
from .gradcheck import run_gradient_suite
from .model import PromptModel
from .prompts import ProviderConfig, fetch_descriptions
from .prototypes import compute_prototypes
from .train import evaluate, train


@click.group()
def main():
    """Prompt-alignment training pipeline on synthetic image data."""


def _fail(msg: str):
    click.echo(f"error: {msg}", err=True)
    sys.exit(1)


def _load_config(config_path, **overrides) -> TrainConfig:
    if config_path:
        return parse_config_file(config_path, overrides)
    return TrainConfig(**{k: v for k, v in overrides.items() if v is not None})


def _config_options(fn):
    opts = [
        click.option("--config", "config_path", type=click.Path(exists=True),
                     default=None, help="key = value config file"),
        click.option("--epochs", type=int, default=None),
        click.option("--batch-size", type=int, default=None),
        click.option("--lr", type=float, default=None),
        click.option("--tau", type=float, default=None),
        click.option("--tau-logits", type=float, default=None),
        click.option("--beta", type=float, default=None),
        click.option("--gamma", type=float, default=None),
        click.option("--k", type=int, default=None),
        click.option("--num-visual-prompts", type=int, default=None),
        click.option("--context-len", type=int, default=None),
        click.option("--weights-seed", type=int, default=None),
        click.option("--train-seed", type=int, default=None),
        click.option("--prototype-seed", type=int, default=None),
        click.option("--template-config", type=int, default=None),
        click.option("--metric", type=click.Choice(["cosine", "l1"]), default=None),
        click.option("--prototype-subset", default=None),
        click.option("--use-visual-prompts/--no-visual-prompts", default=None),
        click.option("--use-local-alignment/--no-local-alignment", default=None),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _prepare(data_dir, fixtures, cfg: TrainConfig):
    train_ds = load_dataset(data_dir, "train")
    val_ds = load_dataset(data_dir, "val")
    test_ds = load_dataset(data_dir, "test")
    provider = ProviderConfig(fixtures_path=fixtures)
    descriptions = fetch_descriptions(provider, train_ds.class_names)
    return train_ds, val_ds, test_ds, descriptions


@main.command("gen-data")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--classes", type=int, default=7, show_default=True)
@click.option("--samples-per-class", type=int, default=200, show_default=True)
@click.option("--test-per-class", type=int, default=40, show_default=True)
@click.option("--sigma-bg", type=float, default=0.5, show_default=True)
@click.option("--amplitude", type=float, default=2.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--force", is_flag=True, help="overwrite an existing directory")
def gen_data(out_dir, classes, samples_per_class, test_per_class, sigma_bg,
             amplitude, seed, force):
    """Generate a deterministic synthetic dataset on disk."""
    try:
        spec = SyntheticDatasetSpec(
            num_classes=classes, samples_per_class=samples_per_class,
            test_per_class=test_per_class, sigma_bg=sigma_bg,
            signature_amplitude=amplitude, seed=seed)
        write_dataset(spec, out_dir, force=force)
    except (ValueError, FileExistsError) as exc:
        _fail(str(exc))
    click.echo(f"wrote dataset to {out_dir}")


@main.command()
@click.option("--fixtures", required=True, type=click.Path())
@click.option("--classes", default="7", show_default=True,
              help="7, 8, or a comma-separated list of class names")
@click.option("--remote-url", default=None, help="optional LLM endpoint")
@click.option("--model", default="gpt-3.5-turbo", show_default=True)
@click.option("--api-key-env", default="PROMPTALIGN_LLM_API_KEY", show_default=True)
@click.option("--timeout", type=float, default=30.0, show_default=True)
def describe(fixtures, classes, remote_url, model, api_key_env, timeout):
    """Fetch (or read cached) per-class visual-cue descriptions."""
    from .data import DEFAULT_CLASS_NAMES_7, DEFAULT_CLASS_NAMES_8
    if classes == "7":
        names = DEFAULT_CLASS_NAMES_7
    elif classes == "8":
        names = DEFAULT_CLASS_NAMES_8
    else:
        names = tuple(s.strip() for s in classes.split(",") if s.strip())
    provider = ProviderConfig(fixtures_path=fixtures, base_url=remote_url,
                              model=model, api_key_env=api_key_env,
                              timeout=timeout)
    try:
        for d in fetch_descriptions(provider, names):
            click.echo(f"{d.class_name} [{d.source.value}]: {d.description}")
    except ValueError as exc:
        _fail(str(exc))


@main.command()
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--subset", default="full", show_default=True)
@click.option("--subset-seed", type=int, default=0, show_default=True)
@click.option("--weights-seed", type=int, default=0, show_default=True)
@click.option("--fixtures", default="fixtures/descriptions_7.txt", show_default=True)
def prototypes(data_dir, out_path, subset, subset_seed, weights_seed, fixtures):
    """Compute frozen class prototypes and store them as a tensor file."""
    try:
        cfg = TrainConfig(weights_seed=weights_seed, prototype_seed=subset_seed,
                          prototype_subset=subset)
        train_ds, _, _, descriptions = _prepare(data_dir, fixtures, cfg)
        model = PromptModel.build(cfg, train_ds, descriptions)
        tensorfile.write_tensors(out_path, {
            "prototypes": model.prototype_table.table.data})
    except (ValueError, OSError) as exc:
        _fail(str(exc))
    click.echo(f"wrote prototypes to {out_path}")


@main.command("train")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--fixtures", default="fixtures/descriptions_7.txt", show_default=True)
@_config_options
def train_cmd(data_dir, out_dir, fixtures, config_path, **overrides):
    """Train prompt parameters; writes metrics.csv and checkpoints."""
    if overrides.get("epochs") is None and config_path is None:
        overrides["epochs"] = 40  # desk-scale default
    try:
        cfg = _load_config(config_path, **overrides)
        train_ds, val_ds, test_ds, descriptions = _prepare(data_dir, fixtures, cfg)
        result = train(cfg, train_ds, val_ds, descriptions, out_dir=out_dir,
                       log=click.echo)
        acc, _ = evaluate(result.model, test_ds)
    except (ValueError, OSError, RuntimeError) as exc:
        _fail(str(exc))
    click.echo(f"final test accuracy {acc:.4f}; artifacts in {out_dir}")


@main.command("eval")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--split", default="test", show_default=True,
              type=click.Choice(["train", "val", "test"]))
@click.option("--fixtures", default="fixtures/descriptions_7.txt", show_default=True)
@_config_options
def eval_cmd(data_dir, ckpt_path, split, fixtures, config_path, **overrides):
    """Evaluate a checkpoint: accuracy plus confusion matrix."""
    try:
        cfg = _load_config(config_path, **overrides)
        train_ds, _, _, descriptions = _prepare(data_dir, fixtures, cfg)
        model = PromptModel.build(cfg, train_ds, descriptions)
        model.load_state(load_checkpoint(ckpt_path))
        ds = load_dataset(data_dir, split)
        acc, confusion = evaluate(model, ds)
    except (ValueError, OSError) as exc:
        _fail(str(exc))
    click.echo(f"{split} accuracy: {acc:.4f}")
    click.echo("confusion matrix (rows = true class):")
    for row in confusion:
        click.echo(" ".join(f"{v:4d}" for v in row))


@main.command("ablate")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--grid", required=True,
              type=click.Choice(sorted(ablate_mod.GRIDS)))
@click.option("--seeds", default="0,1,2", show_default=True)
@click.option("--fixtures", default="fixtures/descriptions_7.txt", show_default=True)
@_config_options
def ablate_cmd(data_dir, out_dir, grid, seeds, fixtures, config_path, **overrides):
    """Run a preset ablation grid and write a results table."""
    if overrides.get("epochs") is None and config_path is None:
        overrides["epochs"] = 40
    try:
        cfg = _load_config(config_path, **overrides)
        seed_list = [int(s) for s in seeds.split(",")]
        train_ds, val_ds, test_ds, descriptions = _prepare(data_dir, fixtures, cfg)
        cells = ablate_mod.GRIDS[grid]()
        rows = ablate_mod.run_grid(cells, cfg, train_ds, val_ds, test_ds,
                                   descriptions, seed_list, log=click.echo)
        text = ablate_mod.write_report(rows, out_dir, title=f"{grid} ablation")
    except (ValueError, OSError, RuntimeError) as exc:
        _fail(str(exc))
    click.echo(text)


@main.command()
@click.option("--trials", type=int, default=100, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def gradcheck(trials, seed):
    """Check every analytic loss gradient against finite differences."""
    reports = run_gradient_suite(trials=trials, seed=seed)
    ok = True
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        click.echo(f"{r.name}: {status} (max_rel_err {r.max_rel_err:.2e}, "
                   f"{r.trials} trials)")
        ok = ok and r.passed
    if not ok:
        _fail("gradient check failed")


@main.command("export-saliency")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--split", default="test", show_default=True)
@click.option("--limit", type=int, default=None)
@click.option("--fixtures", default="fixtures/descriptions_7.txt", show_default=True)
@_config_options
def export_saliency_cmd(data_dir, ckpt_path, out_dir, split, limit, fixtures,
                        config_path, **overrides):
    """Export |d logit / d pixel| saliency grids for a split."""
    try:
        cfg = _load_config(config_path, **overrides)
        train_ds, _, _, descriptions = _prepare(data_dir, fixtures, cfg)
        model = PromptModel.build(cfg, train_ds, descriptions)
        model.load_state(load_checkpoint(ckpt_path))
        ds = load_dataset(data_dir, split)
        summary = export_saliency(model, ds, out_dir, limit=limit)
    except (ValueError, OSError) as exc:
        _fail(str(exc))
    click.echo(f"wrote {len(summary)} saliency maps to {out_dir}")


@main.command("export-projection")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--split", default="test", show_default=True)
@click.option("--fixtures", default="fixtures/descriptions_7.txt", show_default=True)
@_config_options
def export_projection_cmd(data_dir, ckpt_path, out_path, split, fixtures,
                          config_path, **overrides):
    """Export a 2-D PCA projection of prompted global features as CSV."""
    try:
        cfg = _load_config(config_path, **overrides)
        train_ds, _, _, descriptions = _prepare(data_dir, fixtures, cfg)
        model = PromptModel.build(cfg, train_ds, descriptions)
        model.load_state(load_checkpoint(ckpt_path))
        ds = load_dataset(data_dir, split)
        export_projection(model, ds, out_path)
    except (ValueError, OSError) as exc:
        _fail(str(exc))
    click.echo(f"wrote projection to {out_path}")


if __name__ == "__main__":
    main()
