"""CLI contract: one JSON result line on stdout, nonzero exit on violations."""

import json
import shutil
import subprocess
import types

import pytest

from tpunet.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    lines = [ln for ln in captured.out.strip().splitlines() if ln]
    assert len(lines) == 1, f"expected one stdout line, got {lines}"
    return code, json.loads(lines[0]), captured.err


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "gen.json"
    cfg.write_text(json.dumps(
        {"patients": 10, "slices_per_patient": 2, "image_size": 16}))
    out = root / "ds"
    code = main(["gen-data", "--config", str(cfg), "--out", str(out)])
    assert code == 0
    return str(out)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, data_dir):
    root = tmp_path_factory.mktemp("run")
    cfg = root / "run.json"
    cfg.write_text(json.dumps({
        "steps": 4, "eval_every": 2, "batch_size": 4, "lr0": 3e-4,
        "D": 4, "d": 4, "channels": [2, 3], "bottleneck": 4,
    }))
    out = root / "out"
    code = main(["train", "--config", str(cfg), "--data", data_dir,
                 "--out", str(out)])
    assert code == 0
    return str(out)


def test_gen_data_bad_config_path_is_error_line(capsys, tmp_path):
    code, payload, _ = run_cli(
        capsys, "gen-data", "--config", "/dev/null/nope.json", "--out", str(tmp_path))
    assert code == 2
    assert payload["command"] == "gen-data"
    assert "error" in payload


def test_gen_data_success_line(capsys, tmp_path):
    cfg = tmp_path / "g.json"
    cfg.write_text(json.dumps({"patients": 10, "slices_per_patient": 2,
                               "image_size": 16}))
    code, payload, _ = run_cli(capsys, "gen-data", "--config", str(cfg),
                               "--out", str(tmp_path / "ds"))
    assert code == 0
    assert payload["samples"] == 20
    assert payload["splits"] == {"train": 7, "val": 1, "test": 2}
    assert len(payload["manifest_hash"]) == 64
    assert (tmp_path / "ds" / "manifest.json").exists()


def test_gen_data_rejects_unknown_keys(capsys, tmp_path):
    cfg = tmp_path / "g.json"
    cfg.write_text(json.dumps({"patientz": 3}))
    code, payload, _ = run_cli(capsys, "gen-data", "--config", str(cfg),
                               "--out", str(tmp_path / "ds"))
    assert code == 2
    assert "patientz" in payload["error"]


def test_train_emits_result_and_artifacts(capsys, run_dir):
    import os

    for fname in ("best.ckpt", "config.json", "metrics.json", "vocab.json",
                  "loss_curve.csv"):
        assert os.path.exists(os.path.join(run_dir, fname)), fname


def test_eval_reports_metrics(capsys, data_dir, run_dir):
    import os

    code, payload, _ = run_cli(
        capsys, "eval", "--ckpt", os.path.join(run_dir, "best.ckpt"),
        "--data", data_dir, "--split", "test")
    assert code == 0
    assert payload["command"] == "eval"
    assert payload["split"] == "test"
    assert payload["n_samples"] == 4
    assert len(payload["per_class_dice"]) == 3
    assert 0.0 <= payload["mean_dice"] <= 1.0

    # per-class table lands next to the checkpoint
    import csv

    with open(os.path.join(run_dir, "eval_test.csv"), newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["class", "dice", "jaccard"]
    assert rows[-1][0] == "mean"
    assert abs(float(rows[-1][1]) - payload["mean_dice"]) < 1e-5
    assert len(rows) == 1 + 3 + 1  # header, three classes, mean


def test_eval_exports_pgm_masks(capsys, data_dir, run_dir, tmp_path):
    import os

    export = str(tmp_path / "masks")
    code, payload, _ = run_cli(
        capsys, "eval", "--ckpt", os.path.join(run_dir, "best.ckpt"),
        "--data", data_dir, "--split", "val",
        "--export-masks", export, "--export-count", "2")
    assert code == 0
    files = sorted(os.listdir(export))
    # 2 samples x 3 classes x (probability + binarized)
    assert len(files) == 12
    assert "val_s0_c0_mask.pgm" in files and "val_s1_c2_prob.pgm" in files


def test_eval_missing_checkpoint_is_error_line(capsys, data_dir, tmp_path):
    code, payload, _ = run_cli(
        capsys, "eval", "--ckpt", str(tmp_path / "none" / "best.ckpt"),
        "--data", data_dir)
    assert code == 2
    assert "error" in payload


def test_eval_rejects_unknown_split_via_argparse(data_dir, run_dir, capsys):
    import os

    with pytest.raises(SystemExit):
        main(["eval", "--ckpt", os.path.join(run_dir, "best.ckpt"),
              "--data", data_dir, "--split", "holdout"])


def test_ablate_writes_median_and_run_tables(capsys, data_dir, tmp_path):
    import os

    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({
        "steps": 2, "eval_every": 100, "batch_size": 4, "lr0": 3e-4,
        "D": 4, "d": 4, "channels": [2, 3], "bottleneck": 4,
    }))
    table = str(tmp_path / "table.csv")
    code, payload, _ = run_cli(
        capsys, "ablate", "--config", str(cfg), "--data", data_dir,
        "--seeds", "0", "--out", table)
    assert code == 0
    assert set(payload["table"]) == {
        "full", "no_temporal_info", "no_temporal_prompt",
        "no_semantic_align", "no_modality_fusion"}
    assert payload["seeds"] == [0]
    assert os.path.exists(table)
    assert os.path.exists(str(tmp_path / "table_runs.csv"))


def test_ablate_requires_seeds(capsys, data_dir, tmp_path):
    code, payload, _ = run_cli(
        capsys, "ablate", "--data", data_dir, "--seeds", " ",
        "--out", str(tmp_path / "t.csv"))
    assert code == 2
    assert "seeds" in payload["error"]


def test_gradcheck_single_module_passes(capsys):
    code, payload, _ = run_cli(capsys, "gradcheck", "--module", "objectives")
    assert code == 0
    assert payload["passed"] is True
    assert all(c["passed"] for c in payload["checks"])
    assert all(c["max_rel_err"] <= c["tol"] for c in payload["checks"])


def test_gradcheck_failure_exits_one(capsys, monkeypatch):
    import tpunet.gradsuite

    fake = types.SimpleNamespace(passed=False, max_rel_err=0.5, tol=1e-4,
                                 summary=lambda: "synthetic failure")
    monkeypatch.setattr(tpunet.gradsuite, "run_suite",
                        lambda module=None, seed=0: [("broken", fake)])
    code, payload, err = run_cli(capsys, "gradcheck")
    assert code == 1
    assert payload["passed"] is False
    assert "synthetic failure" in err


def test_bench_compares_backends(capsys):
    code, payload, _ = run_cli(capsys, "bench", "--batch", "1", "--size", "8",
                               "--repeats", "1")
    assert code == 0
    assert payload["outputs_agree"] is True
    assert "numpy" in payload["backends"]
    assert all(t >= 0 for times in payload["seconds"].values()
               for t in times.values())


def test_console_script_is_installed():
    exe = shutil.which("tpunet")
    assert exe, "tpunet entry point not on PATH"
    proc = subprocess.run([exe, "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("gen-data", "train", "eval", "ablate", "gradcheck", "bench"):
        assert sub in proc.stdout
