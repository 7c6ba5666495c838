import json

import numpy as np
import pytest

from stablelfd.cli import EXIT_OK, EXIT_VALIDATION, main
from stablelfd.continual import RunLog
from stablelfd.data import load_dataset

TINY = ["--preset", "desk", "--iterations", "4", "--set", "train.points=12", "--set", "learner.f_hidden=8",
        "--set", "learner.v_hidden=8", "--set", "learner.node_hidden=8", "--set", "hypernet.hidden=8",
        "--set", "hypernet.chunk_size=32", "--set", "hypernet.task_emb_dim=4", "--set", "hypernet.chunk_emb_dim=4"]


def dir_bytes(path):
    return {p.relative_to(path).as_posix(): p.read_bytes() for p in sorted(path.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    assert main(["synth-toy", "--kind", "mixed", "--tasks", "2", "--demos", "2", "--points", "40",
                 "--out", str(root / "ds")]) == EXIT_OK
    return root / "ds"


@pytest.fixture(scope="module")
def trained(toy, tmp_path_factory):
    out = tmp_path_factory.mktemp("runs") / "r"
    assert main(["train", "--dataset", str(toy), "--out", str(out), "--methods", "CHN,FT", *TINY]) == EXIT_OK
    return out


def test_synth_toy_is_reproducible(tmp_path, toy):
    assert main(["synth-toy", "--kind", "mixed", "--tasks", "2", "--demos", "2", "--points", "40",
                 "--out", str(tmp_path / "again")]) == EXIT_OK
    assert dir_bytes(tmp_path / "again") == dir_bytes(toy)


def test_synth_highd(tmp_path):
    src = tmp_path / "src"
    assert main(["synth-toy", "--kind", "mixed", "--tasks", "6", "--demos", "2", "--points", "20",
                 "--out", str(src)]) == EXIT_OK
    assert main(["synth", "--source", str(src), "--dim", "8", "--tasks", "3", "--out", str(tmp_path / "d8")]) == 0
    ds = load_dataset(tmp_path / "d8")
    assert len(ds) == 3 and ds.dim == 8
    assert main(["synth", "--source", str(src), "--dim", "16", "--out", str(tmp_path / "d16")]) == EXIT_VALIDATION


def test_import_raw_csv(tmp_path, capsys):
    raw = tmp_path / "raw"
    raw.mkdir()
    rows = ["demo,x,y"] + [f"{d},{t * 0.5},{-t}" for d in range(2) for t in range(5, -1, -1)]
    (raw / "a.csv").write_text("\n".join(rows) + "\n")
    assert main(["import", str(raw), str(tmp_path / "ds")]) == EXIT_OK
    assert load_dataset(tmp_path / "ds")[0].demos.shape == (2, 6, 2)
    (raw / "b.csv").write_text("demo,x,y\n0,1,oops\n")
    assert main(["import", str(raw), str(tmp_path / "ds2")]) == EXIT_VALIDATION
    assert "b.csv" in capsys.readouterr().err


def test_train_outputs(trained, toy):
    log = RunLog.read(trained / "runlog.jsonl")
    # two methods, triangle of 3 (train, eval) pairs, 2 demos each
    assert len(log.records) == 2 * 3 * 2
    for run in ("CHN-sNODE-seed0", "FT-sNODE-seed0"):
        man = json.loads((trained / run / "manifest.json").read_text())
        assert man["status"] == "done" and len(man["wall_times_s"]) == 2
        assert man["config"]["iterations"] == 4
        assert sorted(p.name for p in (trained / run / "checkpoints").iterdir()) == ["task_000.ckpt",
                                                                                      "task_001.ckpt"]


def test_one_task_run_emits_one_record_per_demo(tmp_path):
    assert main(["synth-toy", "--tasks", "1", "--demos", "3", "--points", "30", "--out", str(tmp_path / "d")]) == 0
    assert main(["train", "--dataset", str(tmp_path / "d"), "--out", str(tmp_path / "o"), *TINY]) == EXIT_OK
    recs = RunLog.read(tmp_path / "o" / "runlog.jsonl").records
    assert sorted(r["demo"] for r in recs) == [0, 1, 2]


def test_resolved_config_reproduces_errors(trained, tmp_path):
    run = trained / "CHN-sNODE-seed0"
    assert main(["train", "--config", str(run / "resolved.cfg"), "--out", str(tmp_path / "again")]) == EXIT_OK
    key = lambda rs: [(r["train_task"], r["eval_task"], r["demo"], r["dtw"]) for r in rs]
    first = RunLog.read(run / "runlog.jsonl").records
    second = RunLog.read(tmp_path / "again" / "runlog.jsonl").records
    assert key(first) == key(second)


def test_eval_matches_logged_final_errors(trained, toy, tmp_path):
    run = trained / "CHN-sNODE-seed0"
    assert main(["eval", str(run / "checkpoints" / "task_001.ckpt"), "--dataset", str(toy),
                 "--out", str(tmp_path / "ev.jsonl")]) == EXIT_OK
    ev = RunLog.read(tmp_path / "ev.jsonl").records
    logged = [r for r in RunLog.read(run / "runlog.jsonl").records if r["train_task"] == 1]
    assert [r["dtw"] for r in ev] == [r["dtw"] for r in logged]
    assert main(["eval", str(run / "checkpoints" / "task_000.ckpt"), "--dataset", str(toy), "--tasks", "1",
                 "--out", str(tmp_path / "x.jsonl")]) == EXIT_VALIDATION


def test_metrics_outputs_and_fs_notice(trained, tmp_path, capsys):
    assert main(["metrics", str(trained / "runlog.jsonl"), "--out", str(tmp_path / "m")]) == EXIT_OK
    assert "FS is omitted" in capsys.readouterr().err
    rep = json.loads((tmp_path / "m" / "metrics.json").read_text())
    assert rep["thresholds"]["dtw"] == 2191.0
    assert rep["models"]["CHN-sNODE"]["aggregate"]["FS"] is None
    assert (tmp_path / "m" / "metrics.csv").read_text().startswith("model,seed,ACC")
    table = tmp_path / "sizes.csv"
    table.write_text("model,size\nA,1000000\nB,5000\n")
    assert main(["metrics", str(trained / "runlog.jsonl"), "--out", str(tmp_path / "m2"),
                 "--size-table", str(table)]) == EXIT_OK
    rep = json.loads((tmp_path / "m2" / "metrics.json").read_text())
    assert rep["models"]["CHN-sNODE"]["aggregate"]["FS"] > 0.9


def perfect_log(n=3):
    return [{"method": "CHN", "learner": "sNODE", "seed": 0, "train_task": i, "eval_task": j, "demo": 0,
             "dtw": 10.0, "quat_err": None, "wall_time_s": 5.0, "param_count": 100, "stored_sample_bytes": 0,
             "dataset_bytes": 1000} for i in range(n) for j in range(i + 1)]


def test_metrics_perfect_log_scores_one(tmp_path):
    RunLog(perfect_log()).write(tmp_path / "p.jsonl")
    assert main(["metrics", str(tmp_path / "p.jsonl"), "--dim", "2", "--out", str(tmp_path / "m")]) == EXIT_OK
    agg = json.loads((tmp_path / "m" / "metrics.json").read_text())["models"]["CHN-sNODE"]["aggregate"]
    assert agg["CL_score"] == 1.0 and agg["ACC"] == 1.0


def test_metrics_incomplete_triangle(tmp_path, capsys):
    recs = [r for r in perfect_log() if (r["train_task"], r["eval_task"]) != (2, 0)]
    RunLog(recs).write(tmp_path / "p.jsonl")
    assert main(["metrics", str(tmp_path / "p.jsonl"), "--dim", "2", "--out", str(tmp_path / "m")]) == EXIT_VALIDATION
    assert "(2, 0)" in capsys.readouterr().err


def test_stability_modes(trained, toy, tmp_path):
    ck = trained / "CHN-sNODE-seed0" / "checkpoints" / "task_001.ckpt"
    assert main(["stability", str(ck), "--dataset", str(toy), "--samples", "5",
                 "--out", str(tmp_path / "p.json")]) == EXIT_OK
    res = json.loads((tmp_path / "p.json").read_text())["results"]
    assert [r["task"] for r in res] == [0, 1] and all(len(r["deltas"]) == 5 for r in res)
    assert main(["stability", str(ck), "--dataset", str(toy), "--mode", "horizon",
                 "--out", str(tmp_path / "h.json")]) == EXIT_OK
    res = json.loads((tmp_path / "h.json").read_text())["results"]
    assert sorted({r["extra_steps"] for r in res}) == [100, 200]
    assert np.isfinite([r["median"] for r in res]).all()
    assert main(["stability", str(tmp_path / "none.ckpt"), "--dataset", str(toy),
                 "--out", str(tmp_path / "z.json")]) == EXIT_VALIDATION


def test_plot_command(trained, tmp_path):
    assert main(["plot", "--runlogs", str(trained / "runlog.jsonl"), "--out", str(tmp_path / "f")]) == EXIT_OK
    assert {p.name for p in (tmp_path / "f").iterdir()} >= {"error_vs_task.svg", "error_vs_task.csv",
                                                             "timing.svg", "error_boxplot.svg"}
    (tmp_path / "empty.jsonl").write_text("")
    assert main(["plot", "--runlogs", str(tmp_path / "empty.jsonl"), "--out", str(tmp_path / "g")]) == EXIT_VALIDATION


def test_bad_arguments_exit_one(tmp_path):
    assert main(["train"]) == EXIT_VALIDATION
    assert main(["nonsense"]) == EXIT_VALIDATION
    assert main(["train", "--dataset", str(tmp_path), "--out", str(tmp_path / "o"), "--methods", "EWC"]) == 1
