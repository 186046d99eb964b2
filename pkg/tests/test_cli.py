import json

import pytest

from fgpcl.cli import main
from fgpcl.metrics import AccuracyMatrix


def write_config(tmp_path, **over):
    cfg = {
        "dataset": "digits",
        "classes_per_phase": 5,
        "memory": 20,
        "epochs": 1,
        "batch_size": 64,
        "seeds": [0],
    }
    cfg.update(over)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def test_run_rejects_unknown_loss_before_training(tmp_path, capsys):
    cfg = write_config(tmp_path, loss="made_up")
    rc = main(["run", "--config", str(cfg), "--output", str(tmp_path / "out")])
    assert rc == 1
    err = capsys.readouterr().err
    assert "loss" in err
    assert not (tmp_path / "out").exists()


def test_run_rejects_missing_config(tmp_path, capsys):
    rc = main(["run", "--config", str(tmp_path / "nope.json")])
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_run_rejects_malformed_json(tmp_path, capsys):
    path = tmp_path / "config.json"
    path.write_text("{not json")
    rc = main(["run", "--config", str(path)])
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_run_writes_per_seed_dirs_and_summary(tmp_path):
    cfg = write_config(tmp_path, seeds=[0, 1])
    out = tmp_path / "out"
    rc = main(["run", "--config", str(cfg), "--output", str(out)])
    assert rc == 0
    for seed in (0, 1):
        assert (out / f"seed_{seed}" / "accuracy_matrix.csv").exists()
        assert (out / f"seed_{seed}" / "metrics.json").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seeds"] == [0, 1]
    vals = summary["average_incremental_accuracy"]["values"]
    assert len(vals) == 2
    mean = summary["average_incremental_accuracy"]["mean"]
    assert mean == pytest.approx(sum(vals) / 2)


def test_metrics_recomputation_matches_run(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--output", str(out)]) == 0
    run_dir = out / "seed_0"
    original = json.loads((run_dir / "metrics.json").read_text())
    capsys.readouterr()
    assert main(["metrics", str(run_dir)]) == 0
    recomputed = json.loads(capsys.readouterr().out)
    for key in ("average_incremental_accuracy", "phase_mad", "forgetting"):
        assert recomputed[key] == pytest.approx(original[key], abs=1e-6)


def test_metrics_on_hand_written_matrix(tmp_path, capsys):
    m = AccuracyMatrix()
    m.append_row([0.9], 10)
    m.append_row([0.7, 0.8], 10)
    run_dir = tmp_path / "run"
    run_dir.mkdir()
    m.save_csv(run_dir / "accuracy_matrix.csv")
    assert main(["metrics", str(run_dir)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["forgetting"] == pytest.approx(0.2, abs=1e-9)


def test_metrics_single_phase_marks_forgetting_not_applicable(tmp_path, capsys):
    m = AccuracyMatrix()
    m.append_row([0.5], 10)
    run_dir = tmp_path / "run"
    run_dir.mkdir()
    m.save_csv(run_dir / "accuracy_matrix.csv")
    assert main(["metrics", str(run_dir)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["forgetting"] == "not applicable (single phase)"


def test_metrics_missing_dir_fails(tmp_path, capsys):
    rc = main(["metrics", str(tmp_path / "nothing")])
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_plot_creates_artifacts(tmp_path):
    for name, rows in (("a", [[0.9], [0.7, 0.8]]), ("b", [[0.8], [0.6, 0.7]])):
        m = AccuracyMatrix()
        for j, row in enumerate(rows):
            m.append_row(row, 10)
        d = tmp_path / name
        d.mkdir()
        m.save_csv(d / "accuracy_matrix.csv")
    out = tmp_path / "plots"
    rc = main(["plot", str(tmp_path / "a"), str(tmp_path / "b"),
               "--output", str(out)])
    assert rc == 0
    assert (out / "incremental_accuracy.png").exists()
    assert (out / "phase_accuracy.png").exists()


def test_plot_rejects_mismatched_schedules(tmp_path, capsys):
    m1 = AccuracyMatrix()
    m1.append_row([0.9], 10)
    m2 = AccuracyMatrix()
    m2.append_row([0.9], 10)
    m2.append_row([0.7, 0.8], 10)
    for name, m in (("a", m1), ("b", m2)):
        d = tmp_path / name
        d.mkdir()
        m.save_csv(d / "accuracy_matrix.csv")
    rc = main(["plot", str(tmp_path / "a"), str(tmp_path / "b"),
               "--output", str(tmp_path / "plots")])
    assert rc == 1
    assert "mismatched" in capsys.readouterr().err


def test_sim2d_writes_report_and_plots(tmp_path):
    out = tmp_path / "toy"
    rc = main(["toy", "sim2d", "--k", "3", "--norm", "rectified_cosine",
               "--seeds", "0", "--steps", "300", "--restarts", "1",
               "--output", str(out)])
    assert rc == 0
    report = json.loads((out / "sim2d_report.json").read_text())
    per_seed = report["normalizations"]["rectified_cosine"]
    assert len(per_seed) == 1
    assert len(per_seed[0]["alignment"]) == 3
    assert (out / "sim2d_rectified_cosine_seed0.png").exists()


def test_sim2d_rejects_single_class(tmp_path, capsys):
    rc = main(["toy", "sim2d", "--k", "1", "--seeds", "0",
               "--output", str(tmp_path / "toy")])
    assert rc == 1
    assert "classes" in capsys.readouterr().err


def test_toy_mnist_writes_separation_report(tmp_path):
    out = tmp_path / "toy"
    rc = main(["toy", "mnist", "--seeds", "0", "--epochs", "1",
               "--output", str(out)])
    assert rc == 0
    report = json.loads((out / "toy_report.json").read_text())
    assert set(report["mean"]) == {"rectified_cosine", "cosine"}
