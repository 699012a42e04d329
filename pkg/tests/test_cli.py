"""Command-line surface: flows, determinism, exit codes."""

import json

import numpy as np
import pytest

from scl.cli import main
from scl.rpm import Attribute, read_dataset


def run(capsys, *argv) -> tuple[int, str]:
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, out


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """One tiny generated dataset plus a trained single-seed run."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    run_dir = root / "run"
    assert main(["gen", "--layout", "center", "--count", "80", "--seed", "5",
                 "--px", "16", "--out", str(data)]) == 0
    assert main(["train", "--data", str(data), "--out", str(run_dir),
                 "--epochs", "2", "--seeds", "1", "--batch", "16",
                 "--deterministic", "--quiet"]) == 0
    return root


def test_gen_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        code, _ = run(capsys, "gen", "--layout", "center", "--count", "40",
                      "--seed", "7", "--px", "16", "--out", str(out))
        assert code == 0
    for name in ("manifest.json", "problems.ndjson", "images.bin"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_gen_joint_equal_layout_counts(tmp_path, capsys):
    code, _ = run(capsys, "gen", "--layout", "joint", "--count", "40",
                  "--seed", "3", "--px", "16", "--out", str(tmp_path / "j"))
    assert code == 0
    ds = read_dataset(tmp_path / "j")
    tags = [p.layout.value for p in ds.problems]
    assert {t: tags.count(t) for t in set(tags)} == \
        {"center": 10, "lr": 10, "ud": 10, "oic": 10}


def test_gen_joint_count_not_divisible(tmp_path, capsys):
    code, _ = run(capsys, "gen", "--layout", "joint", "--count", "41",
                  "--seed", "3", "--out", str(tmp_path / "j"))
    assert code == 2


def test_gen_heldout_require(tmp_path, capsys):
    code, _ = run(capsys, "gen", "--layout", "joint", "--count", "40",
                  "--seed", "9", "--px", "16",
                  "--heldout-require", "color:progression",
                  "--out", str(tmp_path / "h"))
    assert code == 0
    ds = read_dataset(tmp_path / "h")
    for spec in ds.problems:
        assert any(r.attribute is Attribute.COLOR and
                   r.relation.kind == "progression" for r in spec.rules)


def test_gen_sectioned_heldout(tmp_path, capsys):
    code, _ = run(capsys, "gen", "--layout", "center", "--count", "40",
                  "--seed", "9", "--px", "16",
                  "--heldout-exclude", "color:progression",
                  "--heldout-require", "color:progression",
                  "--out", str(tmp_path / "s"))
    assert code == 0
    ds = read_dataset(tmp_path / "s")
    assert ds.sections == [24, 8, 8]
    has_pair = [any(r.attribute is Attribute.COLOR and
                    r.relation.kind == "progression" for r in p.rules)
                for p in ds.problems]
    assert not any(has_pair[:32])
    assert all(has_pair[32:])


def test_gen_bad_pair_spec(tmp_path, capsys):
    code, _ = run(capsys, "gen", "--layout", "center", "--count", "8",
                  "--heldout-exclude", "colour=progression",
                  "--out", str(tmp_path / "x"))
    assert code == 2


def test_gen_infeasible_filter(tmp_path, capsys):
    args = ["gen", "--layout", "center", "--count", "8", "--px", "16",
            "--out", str(tmp_path / "x")]
    for kind in ("constant", "progression", "arithmetic", "distribute_three"):
        args += ["--heldout-exclude", f"size:{kind}"]
    assert main(args) == 2


def test_train_writes_artifacts(workspace):
    run_dir = workspace / "run"
    assert (run_dir / "model.scl").exists()
    assert (run_dir / "plan.json").exists()
    metrics = json.loads((run_dir / "metrics.json").read_text())
    assert metrics["best_seed"] == 0
    assert len(metrics["seeds"]) == 1
    assert metrics["seeds"][0]["wall_clock_s"] is None  # deterministic run
    lines = (run_dir / "metrics.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,valid_acc"
    assert len(lines) == 3


def test_train_deterministic_reruns_byte_identical(workspace, tmp_path, capsys):
    data = workspace / "data"
    outs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        code, _ = run(capsys, "train", "--data", str(data), "--out", str(out),
                      "--epochs", "1", "--seeds", "1", "--batch", "16",
                      "--deterministic", "--quiet")
        assert code == 0
        outs.append(out)
    for name in ("model.scl", "metrics.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_eval_outputs_json(workspace, capsys):
    code, out = run(capsys, "eval", "--ckpt", str(workspace / "run" / "model.scl"),
                    "--data", str(workspace / "data"), "--split", "test")
    assert code == 0
    payload = json.loads(out.strip().splitlines()[-1])
    assert 0.0 <= payload["accuracy"] <= 1.0
    assert payload["split"] == "test" and payload["n"] == 16


def test_eval_mask_context_flag(workspace, capsys):
    code, out = run(capsys, "eval", "--ckpt", str(workspace / "run" / "model.scl"),
                    "--data", str(workspace / "data"), "--mask-context")
    assert code == 0
    assert json.loads(out.strip().splitlines()[-1])["mask_context"] is True


def test_eval_missing_checkpoint_exit_2(workspace, capsys):
    code, _ = run(capsys, "eval", "--ckpt", str(workspace / "nope.scl"),
                  "--data", str(workspace / "data"))
    assert code == 2


def test_probe_writes_report_and_csv(workspace, capsys, tmp_path):
    out = tmp_path / "probe"
    code, _ = run(capsys, "probe", "--ckpt", str(workspace / "run" / "model.scl"),
                  "--data", str(workspace / "data"), "--out", str(out),
                  "--split", "all")
    assert code == 0
    report = json.loads((out / "probe_report.json").read_text())
    assert len(report["entries"]) == 3
    for entry in report["entries"]:
        assert {"attribute", "component", "neuron_p", "neuron_q", "slope",
                "intercept", "mse", "accuracy"} <= set(entry)
    header = (out / "relation_embeddings.csv").read_text().splitlines()[0]
    assert header == "d0,d1,d2,d3,d4,relation,attribute"


def test_report_table(workspace, capsys):
    code, out = run(capsys, "report", "--run", str(workspace))
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0].startswith("| run |")
    assert len(lines) == 3  # header, separator, one run


def test_report_empty_dir_exit_2(tmp_path, capsys):
    code, _ = run(capsys, "report", "--run", str(tmp_path))
    assert code == 2


def test_usage_error_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen", "--layout", "bogus", "--count", "1", "--out", "/tmp/x"])
    assert exc.value.code == 2


def test_report_two_runs_two_rows(workspace, tmp_path, capsys):
    import shutil
    root = tmp_path / "many"
    shutil.copytree(workspace / "run", root / "a")
    shutil.copytree(workspace / "run", root / "b")
    code, out = run(capsys, "report", "--run", str(root))
    assert code == 0
    rows = out.strip().splitlines()[2:]
    assert len(rows) == 2
    # numbers must match the source metrics.json
    metrics = json.loads((root / "a" / "metrics.json").read_text())
    assert f"{metrics['test_acc']:.4f}" in rows[0]
