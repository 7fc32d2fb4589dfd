import dataclasses

import numpy as np
import pytest
from click.testing import CliRunner

from promptalign import ablate, cli
from promptalign.checkpoint import load_checkpoint
from promptalign.config import TrainConfig, config_hash
from promptalign.gradcheck import LOSS_NAMES, run_gradient_suite
from promptalign.model import PromptModel, build_vocabulary
from promptalign.train import (METRICS_HEADER, MetricsRecord, _flip_horizontal,
                               cosine_lr, evaluate, train, write_metrics)

from tests.conftest import FIXTURES_7


def test_cosine_lr_schedule():
    base, total = 0.032, 11
    assert cosine_lr(base, 0, total) == pytest.approx(base)
    assert cosine_lr(base, total - 1, total) == pytest.approx(0.0, abs=1e-9)
    assert cosine_lr(base, 5, total) == pytest.approx(base / 2)
    values = [cosine_lr(base, s, total) for s in range(total)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    assert cosine_lr(base, 0, 1) == base


def test_flip_horizontal():
    imgs = np.arange(2 * 2 * 3 * 1, dtype=np.float32).reshape(2, 2, 3, 1)
    out = _flip_horizontal(imgs, np.array([True, False]))
    np.testing.assert_array_equal(out[0], imgs[0][:, ::-1, :])
    np.testing.assert_array_equal(out[1], imgs[1])
    # input untouched
    assert imgs[0, 0, 0, 0] == 0.0


def test_build_vocabulary_covers_all_templates(tiny_data, descriptions):
    vocab = build_vocabulary(tiny_data["train"].class_names, descriptions)
    for word in ("photo", "expression", "anger", "surprise"):
        assert vocab.word_id(word) > 2


def test_model_build_and_parameter_count(tiny_data, descriptions, tiny_config):
    model = PromptModel.build(tiny_config, tiny_data["train"], descriptions)
    params = model.trainable_tensors()
    assert len(params) == 2
    assert all(p.requires_grad for p in params)
    expected = (tiny_config.context_len * model.enc_cfg.embed_dim
                + model.enc_cfg.num_layers * tiny_config.num_visual_prompts
                * model.enc_cfg.embed_dim)
    assert model.trainable_parameter_count() == expected
    no_vps = dataclasses.replace(tiny_config, use_visual_prompts=False)
    model2 = PromptModel.build(no_vps, tiny_data["train"], descriptions)
    assert len(model2.trainable_tensors()) == 1


def test_model_checkpoint_roundtrip_preserves_predictions(
        tiny_data, descriptions, tiny_config, tmp_path):
    from promptalign.checkpoint import save_checkpoint
    model = PromptModel.build(tiny_config, tiny_data["train"], descriptions)
    before = model.predict_logits(tiny_data["test"].images)
    ckpt = model.state_checkpoint()
    save_checkpoint(tmp_path / "m.mpaf", ckpt)
    fresh = PromptModel.build(tiny_config, tiny_data["train"], descriptions)
    fresh.soft.context.data += 1.0  # perturb, then restore from disk
    fresh.load_state(load_checkpoint(tmp_path / "m.mpaf"))
    np.testing.assert_array_equal(fresh.predict_logits(tiny_data["test"].images),
                                  before)


def test_load_state_rejects_config_mismatch(tiny_data, descriptions, tiny_config):
    model = PromptModel.build(tiny_config, tiny_data["train"], descriptions)
    ckpt = model.state_checkpoint()
    other = PromptModel.build(dataclasses.replace(tiny_config, lr=0.001),
                              tiny_data["train"], descriptions)
    with pytest.raises(ValueError, match="hash"):
        other.load_state(ckpt)


@pytest.fixture(scope="module")
def tiny_train(tiny_data, descriptions, tiny_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    result = train(tiny_config, tiny_data["train"], tiny_data["val"],
                   descriptions, out_dir=str(out))
    return result, out


def test_train_artifacts_and_metrics(tiny_train, tiny_config):
    result, out = tiny_train
    assert len(result.metrics) == tiny_config.epochs
    for name in ("metrics.csv", "config.txt", "init.mpaf", "best.mpaf",
                 "final.mpaf"):
        assert (out / name).exists()
    lines = (out / "metrics.csv").read_text().strip().splitlines()
    assert lines[0] == METRICS_HEADER
    assert len(lines) == 1 + tiny_config.epochs
    # loss composition holds per epoch record
    for m in result.metrics:
        combined = (m.l_vt + tiny_config.beta * (m.l_ta + m.l_pa)
                    + tiny_config.gamma * m.l_v)
        assert m.l_total == pytest.approx(combined, rel=1e-4)
        assert 0.0 <= m.train_acc <= 1.0 and 0.0 <= m.val_acc <= 1.0


def test_train_moves_only_prompt_parameters(tiny_train):
    result, _ = tiny_train
    init, final = result.init_checkpoint, result.final_checkpoint
    assert not np.array_equal(init.soft_context, final.soft_context)
    assert not np.array_equal(init.visual_prompts, final.visual_prompts)
    np.testing.assert_array_equal(init.prototypes, final.prototypes)


def test_train_keeps_backbone_frozen(tiny_train, tiny_config, tiny_data,
                                     descriptions):
    result, _ = tiny_train
    from promptalign.encoders import init_frozen_weights
    pristine = init_frozen_weights(result.model.enc_cfg, tiny_config.weights_seed)
    assert result.model.fw.checksum() == pristine.checksum()


def test_train_best_checkpoint_tracks_val(tiny_train):
    result, _ = tiny_train
    best_val = max(m.val_acc for m in result.metrics)
    assert result.metrics[result.best_epoch].val_acc == best_val
    # ties resolve to the earliest epoch reaching the best value
    first = next(i for i, m in enumerate(result.metrics) if m.val_acc == best_val)
    assert result.best_epoch == first


def test_evaluate_confusion_consistency(tiny_train, tiny_data):
    result, _ = tiny_train
    acc, confusion = evaluate(result.model, tiny_data["test"])
    assert confusion.shape == (7, 7)
    assert confusion.sum() == len(tiny_data["test"])
    assert acc == pytest.approx(np.trace(confusion) / confusion.sum())
    np.testing.assert_array_equal(confusion.sum(axis=1),
                                  np.bincount(tiny_data["test"].labels))


def test_write_metrics_format(tmp_path):
    rec = MetricsRecord(0, 1.5, 1.0, 0.2, 0.2, 0.1, 0.5, 0.25, 3.25)
    write_metrics(tmp_path / "m.csv", [rec])
    lines = (tmp_path / "m.csv").read_text().strip().splitlines()
    assert lines[0] == METRICS_HEADER
    assert lines[1].startswith("0,1.500000,1.000000,")
    assert len(lines[1].split(",")) == len(METRICS_HEADER.split(","))


def test_gradient_suite_smoke():
    reports = run_gradient_suite(trials=3, seed=1)
    assert [r.name for r in reports] == list(LOSS_NAMES)
    for r in reports:
        assert r.passed, f"{r.name}: max_rel_err {r.max_rel_err}"


def test_ablation_report_and_means(tmp_path):
    rows = [ablate.AblationRow("baseline", 0, 0.4),
            ablate.AblationRow("baseline", 1, 0.5),
            ablate.AblationRow("+thing", 0, 0.9),
            ablate.AblationRow("+thing", 1, 0.8)]
    means = ablate.mean_accuracies(rows)
    assert means["baseline"] == pytest.approx(0.45)
    assert means["+thing"] == pytest.approx(0.85)
    text = ablate.write_report(rows, tmp_path, title="demo")
    assert (tmp_path / "results.csv").exists()
    assert "demo" in text and "+40.00" in text
    csv_lines = (tmp_path / "results.csv").read_text().strip().splitlines()
    assert csv_lines[0] == "cell,seed,accuracy" and len(csv_lines) == 5


def test_ablation_grids_registered():
    assert set(ablate.GRIDS) == {"components", "templates", "prototypes"}
    names = [c.name for c in ablate.component_accumulation_cells()]
    assert names[0] == "baseline" and len(names) == 5
    assert len(ablate.template_cells()) == 6
    assert [c.name for c in ablate.prototype_subset_cells()][-1] == "subset_full"


# -- command line surface ----------------------------------------------------


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    """gen-data + a short training run, shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    run = root / "run"
    runner = CliRunner()
    res = runner.invoke(cli.main, [
        "gen-data", "--out", str(data), "--classes", "7",
        "--samples-per-class", "3", "--test-per-class", "2"])
    assert res.exit_code == 0, res.output
    train_args = ["--epochs", "2", "--batch-size", "8", "--k", "4"]
    res = runner.invoke(cli.main, [
        "train", "--data", str(data), "--out", str(run),
        "--fixtures", FIXTURES_7] + train_args)
    assert res.exit_code == 0, res.output
    return runner, data, run, train_args


def test_cli_gen_data_refuses_overwrite(cli_workspace):
    runner, data, _, _ = cli_workspace
    res = runner.invoke(cli.main, ["gen-data", "--out", str(data)])
    assert res.exit_code == 1
    assert "error:" in res.output


def test_cli_train_outputs(cli_workspace):
    _, _, run, _ = cli_workspace
    assert (run / "metrics.csv").exists()
    assert (run / "best.mpaf").exists()
    assert (run / "config.txt").exists()


def test_cli_eval(cli_workspace):
    runner, data, run, train_args = cli_workspace
    res = runner.invoke(cli.main, [
        "eval", "--data", str(data), "--checkpoint", str(run / "best.mpaf"),
        "--fixtures", FIXTURES_7] + train_args)
    assert res.exit_code == 0, res.output
    assert "test accuracy:" in res.output
    assert "confusion" in res.output


def test_cli_eval_rejects_mismatched_config(cli_workspace):
    runner, data, run, _ = cli_workspace
    res = runner.invoke(cli.main, [
        "eval", "--data", str(data), "--checkpoint", str(run / "best.mpaf"),
        "--fixtures", FIXTURES_7, "--epochs", "9"])
    assert res.exit_code == 1
    assert "hash" in res.output


def test_cli_describe(cli_workspace):
    runner, _, _, _ = cli_workspace
    res = runner.invoke(cli.main, ["describe", "--fixtures", FIXTURES_7])
    assert res.exit_code == 0, res.output
    assert "anger [fixture_file]:" in res.output
    res = runner.invoke(cli.main, ["describe", "--fixtures", FIXTURES_7,
                                   "--classes", "anger,unknown-face"])
    assert res.exit_code == 1
    assert "unknown-face" in res.output


def test_cli_prototypes(cli_workspace, tmp_path):
    runner, data, _, _ = cli_workspace
    out = tmp_path / "protos.mpaf"
    res = runner.invoke(cli.main, [
        "prototypes", "--data", str(data), "--out", str(out),
        "--subset", "2", "--fixtures", FIXTURES_7])
    assert res.exit_code == 0, res.output
    from promptalign import tensorfile
    table = tensorfile.read_tensors(out)["prototypes"]
    assert table.shape == (7, 64)


def test_cli_export_saliency(cli_workspace, tmp_path):
    runner, data, run, train_args = cli_workspace
    out = tmp_path / "sal"
    res = runner.invoke(cli.main, [
        "export-saliency", "--data", str(data),
        "--checkpoint", str(run / "best.mpaf"), "--out", str(out),
        "--limit", "2", "--fixtures", FIXTURES_7] + train_args)
    assert res.exit_code == 0, res.output
    assert (out / "saliency_0000.csv").exists()
    assert (out / "saliency_0001.pgm").exists()
    grid = np.loadtxt(out / "saliency_0000.csv", delimiter=",")
    assert grid.shape == (32, 32)
    assert grid.min() >= 0.0 and grid.max() <= 1.0


def test_cli_export_projection(cli_workspace, tmp_path):
    runner, data, run, train_args = cli_workspace
    out = tmp_path / "proj.csv"
    res = runner.invoke(cli.main, [
        "export-projection", "--data", str(data),
        "--checkpoint", str(run / "best.mpaf"), "--out", str(out),
        "--fixtures", FIXTURES_7] + train_args)
    assert res.exit_code == 0, res.output
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "index,label,x,y"
    assert len(lines) == 1 + 7 * 2


def test_cli_gradcheck(cli_workspace):
    runner, _, _, _ = cli_workspace
    res = runner.invoke(cli.main, ["gradcheck", "--trials", "1"])
    assert res.exit_code == 0, res.output
    for name in LOSS_NAMES:
        assert f"{name}: PASS" in res.output
