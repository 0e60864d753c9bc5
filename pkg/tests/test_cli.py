import csv
import json
import subprocess
import sys

import pytest

from corgipile.cli import run
from corgipile.manifest import RunManifest


@pytest.fixture
def work(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("CORGIPILE_OUT", raising=False)
    return tmp_path


def gen(out, name="d.ds", *extra):
    assert run(["--out", str(out), "generate", "--m", "400", "--d", "3", "--order", "label_clustered",
                "--block-size", "320", "--name", name, *extra]) == 0
    return str(out / name)


def manifest(out, sub):
    return json.load(open(out / f"{sub}.manifest.json"))


# ---------------------------------------------------------------- exit codes


def test_unknown_subcommand_is_usage_error(work, capsys):
    assert run(["frobnicate"]) == 2
    assert "usage error" in capsys.readouterr().err


def test_missing_subcommand_is_usage_error(work):
    assert run([]) == 2


def test_invalid_flag_value_is_usage_error(work):
    data = gen(work / "o")
    assert run(["--out", "o2", "train", "--data", data, "--buffer-frac", "0"]) == 2
    assert run(["--out", "o2", "train", "--data", data, "--strategy", "nope"]) == 2


def test_missing_dataset_is_usage_error(work):
    assert run(["train", "--data", "missing.ds"]) == 2


def test_case_one_bound_at_full_buffer_is_usage_error(work):
    assert run(["bound", "--N", "4", "--n", "4", "--b", "2", "--objective", "nonconvex", "--case", "1"]) == 2


def test_corrupt_dataset_is_runtime_error(work):
    from corgipile.dataset import DatasetFile

    data = gen(work / "o")
    ds = DatasetFile(data)
    off = ds.index.entries[3].byte_offset + 5
    ds.close()
    raw = bytearray(open(data, "rb").read())
    raw[off] ^= 0xFF
    open(data, "wb").write(bytes(raw))
    assert run(["--out", "t", "train", "--data", data, "--epochs", "1"]) == 1


def test_help_and_version_exit_zero(work, capsys):
    assert run(["--version"]) == 0
    assert "corgipile" in capsys.readouterr().out
    assert run(["train", "--help"]) == 0


def test_console_entry_point(work):
    r = subprocess.run([sys.executable, "-m", "corgipile.cli", "bound", "--N", "10", "--n", "5", "--b", "4"],
                       capture_output=True, text=True, cwd=work)
    assert r.returncode == 0
    assert json.loads(open(work / "corgipile-out" / "bound.json").read())["beta_exact"] == "241/81"


# ---------------------------------------------------------------- outputs


def test_output_directory_from_environment(work, monkeypatch):
    monkeypatch.setenv("CORGIPILE_OUT", str(work / "env-out"))
    assert run(["bound", "--N", "10", "--n", "5", "--b", "4"]) == 0
    assert (work / "env-out" / "bound.json").exists()
    assert (work / "env-out" / "bound.manifest.json").exists()


def test_default_output_directory(work):
    assert run(["bound", "--N", "10", "--n", "10", "--b", "4"]) == 0
    body = json.load(open(work / "corgipile-out" / "bound.json"))
    assert body["term1"] == 0.0


def test_manifest_contents(work):
    data = gen(work / "o")
    assert run(["--out", "t", "train", "--data", data, "--epochs", "2", "--seed", "3"]) == 0
    mf = manifest(work / "t", "train")
    assert mf["argv"][0] == "train" and "--out" not in mf["argv"]
    assert mf["seed"] == 3 and mf["cwd"] == str(work)
    assert mf["csv_schema_version"] == 1
    assert "d.ds" in mf["dataset_checksums"]
    assert mf["outputs"]["history.csv"]["timing"] is True
    assert mf["outputs"]["model.json"]["timing"] is False


def test_train_outputs(work):
    data = gen(work / "o")
    assert run(["--out", "t", "train", "--data", data, "--epochs", "2", "--strategy", "no_shuffle"]) == 0
    for name in ("history.csv", "model.json", "summary.json", "accuracy.svg", "loss.svg"):
        assert (work / "t" / name).exists(), name
    rows = list(csv.DictReader(open(work / "t" / "history.csv")))
    assert len(rows) == 2


def test_verify_passes(work):
    assert run(["--out", "v", "verify", "--mc-epochs", "20000"]) == 0
    rep = json.load(open(work / "v" / "verify-report.json"))
    assert rep["passed"] and all(c["passed"] for c in rep["checks"])


def test_replay_reproduces_deterministic_outputs(work):
    data = gen(work / "o")
    assert run(["--out", "a", "train", "--data", data, "--epochs", "3", "--strategy", "corgipile", "--seed", "5"]) == 0
    assert run(["--out", "b", "--replay", "a/train.manifest.json"]) == 0
    first = RunManifest.load(work / "a" / "train.manifest.json")
    second = RunManifest.load(work / "b" / "train.manifest.json")
    assert first.deterministic_outputs() == second.deterministic_outputs()
    assert first.deterministic_outputs()
    assert (work / "a" / "model.json").read_bytes() == (work / "b" / "model.json").read_bytes()


def test_replay_from_another_directory(work, monkeypatch):
    data = gen(work / "o", "rel.ds")
    assert run(["--out", "a", "analyze-order", "o/rel.ds"]) == 0
    elsewhere = work / "sub"
    elsewhere.mkdir()
    monkeypatch.chdir(elsewhere)
    assert run(["--out", str(work / "b"), "--replay", str(work / "a" / "analyze-order.manifest.json")]) == 0
    assert (work / "a" / "order.csv").read_bytes() == (work / "b" / "order.csv").read_bytes()
    assert data


def test_generate_is_reproducible(work):
    a = gen(work / "x")
    b = gen(work / "y")
    assert open(a, "rb").read() == open(b, "rb").read()


def test_ingest_reorder_shuffle_copy(work):
    (work / "in.svm").write_text("1 1:1 2:0.5\n-1 2:1\n1 3:2\n-1 1:0.1\n")
    assert run(["--out", "o", "ingest", "in.svm", "--dim", "3", "--block-size", "64"]) == 0
    assert run(["--out", "o", "reorder", "o/dataset.ds", "--by", "label"]) == 0
    assert run(["--out", "o", "shuffle-copy", "o/dataset.ds"]) == 0
    for name in ("dataset.ds", "reordered.ds", "shuffled.ds"):
        assert (work / "o" / name).exists()


def test_analyze_order_outputs(work):
    data = gen(work / "o")
    assert run(["--out", "a", "analyze-order", data, "--strategy", "no_shuffle"]) == 0
    summary = json.load(open(work / "a" / "order-summary.json"))
    assert summary["mean_abs_dev"] == pytest.approx(0.5)
    assert (work / "a" / "order-scatter.svg").exists()


def test_bound_csv_and_read_cost(work):
    assert run(["--out", "b", "bound", "--N", "50", "--n", "1", "--b", "100", "--hd", "10",
                "--t-lat", "1", "--t-t", "0", "--format", "csv"]) == 0
    text = (work / "b" / "bound.csv").read_text()
    assert "read_cost_ratio" in text


def test_bench_commands(work):
    data = gen(work / "o")
    lock = str(work / "lock")
    assert run(["--out", "b", "bench-io", "--data", data, "--no-cache-drop", "--lock-file", lock]) == 0
    assert (work / "b" / "io.csv").exists()
    assert run(["--out", "b", "bench-epoch", "--data", data, "--strategies", "no_shuffle,corgipile",
                "--epochs", "1", "--lock-file", lock]) == 0
    rows = list(csv.DictReader(open(work / "b" / "epoch.csv")))
    assert {r["strategy"] for r in rows} == {"no_shuffle", "corgipile"}


def test_bench_busy_is_usage_error(work):
    from corgipile.bench import bench_lock

    data = gen(work / "o")
    with bench_lock(work / "lock"):
        assert run(["--out", "b", "bench-io", "--data", data, "--no-cache-drop", "--lock-file", str(work / "lock")]) == 2


# ---------------------------------------------------------------- plot


def test_plot_single_row_history(work):
    data = gen(work / "o")
    assert run(["--out", "t", "train", "--data", data, "--epochs", "1"]) == 0
    assert run(["--out", "p", "plot", "t/history.csv"]) == 0
    svgs = list((work / "p").glob("*.svg"))
    assert svgs and all(s.read_text().startswith("<svg") or "<svg" in s.read_text() for s in svgs)


def test_plot_overlays_two_strategies(work):
    data = gen(work / "o")
    for s in ("no_shuffle", "corgipile"):
        assert run(["--out", s, "train", "--data", data, "--epochs", "2", "--strategy", s]) == 0
    assert run(["--out", "p", "plot", "no_shuffle/history.csv", "corgipile/history.csv"]) == 0
    acc = (work / "p" / "plot-accuracy.svg").read_text()
    assert "no_shuffle" in acc and "corgipile" in acc


def test_plot_order_csv(work):
    data = gen(work / "o")
    assert run(["--out", "a", "analyze-order", data]) == 0
    assert run(["--out", "p", "plot", "a/order.csv"]) == 0
    assert list((work / "p").glob("*.svg"))
