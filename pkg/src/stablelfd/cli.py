"""Command-line interface.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
``STABLELFD_WORKERS`` sets how many processes ``train`` uses for independent
(method, learner, seed) runs; the default is 1 (in-process).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from stablelfd import checkpoint as ckpt
from stablelfd import data, metrics, plotting
from stablelfd.config import ConfigError, ExperimentConfig, load_config, resolved_text
from stablelfd.continual import RunLog, evaluate_task, per_task, predict_on_grid, train_sequence
from stablelfd.dynamics import ContractError

log = logging.getLogger("stablelfd")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


def _ints(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ContractError(f"expected comma-separated integers, got {text!r}") from None


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- datasets


def cmd_import(args) -> None:
    loader = data.load_lasa_2d if args.kind == "lasa" else data.load_pose_tasks
    ds = loader(args.source)
    data.save_dataset(ds, args.out)
    print(f"imported {len(ds)} tasks ({ds.kind}, dim {ds.dim}) into {args.out}")


def cmd_synth(args) -> None:
    src = data.load_dataset(args.source)
    ds = data.synth_highd(src, args.dim, args.tasks, args.seed)
    data.save_dataset(ds, args.out)
    print(f"wrote {len(ds)} tasks of dim {ds.dim} to {args.out}")


def cmd_synth_toy(args) -> None:
    ds = data.synth_toy_shapes(args.kind, args.tasks, args.seed, n_demos=args.demos, T=args.points)
    data.save_dataset(ds, args.out)
    print(f"wrote {len(ds)} {args.kind} tasks to {args.out}")


# ---------------------------------------------------------------- training


def experiment_from_args(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    values = {}
    for flag, key in (("dataset", "dataset.path"), ("preset", "run.preset"), ("methods", "run.methods"),
                      ("learners", "run.learners"), ("seeds", "run.seeds"), ("out", "run.output"),
                      ("iterations", "train.iterations"), ("lr", "train.lr"), ("beta", "hypernet.beta"),
                      ("reg_strategy", "hypernet.reg_strategy")):
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = str(v)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (s.strip() for s in item.split("=", 1))
        values[key] = value
    cfg = cfg.with_values(values)
    if cfg.dataset is None or cfg.output is None:
        raise ConfigError("a dataset path and an output directory are required")
    return cfg


def run_one(dataset_path: str, out_dir: str, method_cfg_dict: dict, seed: int) -> dict:
    """One sequence in its own directory; safe to run in a worker process."""
    from stablelfd.continual import MethodConfig

    ds = data.load_dataset(dataset_path)
    cfg = MethodConfig(**method_cfg_dict)
    out = Path(out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    runlog_path = out / "runlog.jsonl"
    runlog_path.write_text("")
    manifest = {"dataset": str(dataset_path), "kind": ds.kind, "dim": ds.dim, "n_tasks": len(ds), "seed": seed,
                "config": cfg.to_dict(), "config_text": resolved_text(cfg, str(dataset_path), seed),
                "wall_times_s": [], "status": "running"}
    (out / "resolved.cfg").write_text(manifest["config_text"])
    _write_json(out / "manifest.json", manifest)

    def on_task_end(m, learner, recs):
        RunLog().append_to(runlog_path, recs)
        ckpt.save_learner(out / "checkpoints" / f"task_{m:03d}.ckpt", learner, cfg, ds.model_dim, seed, m,
                          extra={"dataset": str(dataset_path)})
        manifest["wall_times_s"].append(recs[0]["wall_time_s"])
        _write_json(out / "manifest.json", manifest)

    try:
        train_sequence(ds, cfg, seed, on_task_end=on_task_end)
    except Exception as exc:
        manifest.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        _write_json(out / "manifest.json", manifest)
        raise
    manifest["status"] = "done"
    _write_json(out / "manifest.json", manifest)
    return manifest


def cmd_train(args) -> None:
    exp = experiment_from_args(args)
    ds = data.load_dataset(exp.dataset)
    out = Path(exp.output)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for method, learner, seed in exp.runs():
        mc = exp.method_config(method, learner, ds.dim, ds.kind)
        jobs.append((exp.dataset, str(out / f"{method}-{learner}-seed{seed}"), mc.to_dict(), seed))
    workers = int(os.environ.get("STABLELFD_WORKERS", "1") or 1)
    if workers < 1:
        raise ContractError("STABLELFD_WORKERS must be >= 1")
    start = time.perf_counter()
    if workers == 1 or len(jobs) == 1:
        results = [run_one(*job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers, mp_context=get_context("spawn")) as pool:
            results = list(pool.map(run_one, *zip(*jobs)))
    merged = RunLog.read(*(Path(j[1]) / "runlog.jsonl" for j in jobs))
    merged.write(out / "runlog.jsonl")
    _write_json(out / "manifest.json", {"dataset": exp.dataset, "kind": ds.kind, "dim": ds.dim,
                                        "runs": [Path(j[1]).name for j in jobs],
                                        "wall_times_s": {Path(j[1]).name: r["wall_times_s"]
                                                         for j, r in zip(jobs, results)},
                                        "total_time_s": time.perf_counter() - start})
    print(f"{len(jobs)} runs, {len(merged.records)} records -> {out / 'runlog.jsonl'}")


def cmd_eval(args) -> None:
    learner, header = ckpt.load_learner(args.checkpoint)
    ds = data.load_dataset(args.dataset)
    tasks = _ints(args.tasks) if args.tasks else list(range(header["task_index"] + 1))
    recs = []
    for j in tasks:
        if not 0 <= j <= header["task_index"] or j >= len(ds):
            raise ContractError(f"task {j} was not learned by this checkpoint (trained through "
                                f"task {header['task_index']})")
        for r in evaluate_task(learner, j, ds[j].demos, ds.kind, learner.cfg.tangent_scale):
            recs.append({"seed": header["seed"], "method": learner.cfg.method, "learner": learner.cfg.learner,
                         "train_task": header["task_index"], "eval_task": j, **r})
    RunLog(recs).write(args.out)
    finite = [r["dtw"] for r in recs if math.isfinite(r["dtw"])]
    print(f"{len(recs)} records, median DTW {np.median(finite) if finite else math.inf:.1f} -> {args.out}")


# ---------------------------------------------------------------- metrics


def _manifest_for(runlog: Path) -> dict | None:
    path = runlog.parent / "manifest.json"
    return json.loads(path.read_text()) if path.is_file() else None


def _size_table_max(path) -> float:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "size" not in rows[0]:
        raise ContractError(f"{path}: expected a CSV with a 'size' column")
    return max(float(r["size"]) for r in rows)


def compute_reports(records: list[dict], thresholds: metrics.Thresholds, cross_model_max: float | None) -> dict:
    log_ = RunLog(records)
    per_seed: dict[tuple, list] = {}
    for (method, learner, seed), run in sorted(log_.runs().items()):
        n = log_.n_tasks(run)
        R = metrics.accuracy_matrix(run, thresholds, n).R
        rep = metrics.cl_metrics(R, per_task(run, "param_count"), per_task(run, "wall_time_s"),
                                 per_task(run, "stored_sample_bytes"), run[0]["dataset_bytes"], cross_model_max)
        per_seed.setdefault((method, learner), []).append((seed, rep, R))
    out = {}
    for (method, learner), items in per_seed.items():
        agg = metrics.aggregate_reports([rep for _, rep, _ in items])
        out[f"{method}-{learner}"] = {
            "aggregate": agg.to_dict(),
            "seeds": {str(seed): {"report": rep.to_dict(), "R": np.where(np.isnan(R), None, R).tolist()}
                      for seed, rep, R in items},
        }
    return out


def cmd_metrics(args) -> None:
    paths = [Path(p) for p in args.runlogs]
    records = RunLog.read(*paths).records
    if not records:
        raise ContractError("run logs contain no records")
    if args.dtw_threshold is not None:
        th = metrics.Thresholds(args.dtw_threshold, args.quat_threshold)
    else:
        kind, dim = args.kind, args.dim
        man = _manifest_for(paths[0])
        if man is not None:
            kind, dim = kind or man["kind"], dim or man["dim"]
        if kind is None:
            kind = "pose" if records[0].get("quat_err") is not None else "euclidean"
        if dim is None:
            raise ContractError("cannot infer the data dimension; pass --dim or --dtw-threshold")
        th = metrics.default_thresholds(kind, dim)
    cross = args.cross_model_max_size
    if args.size_table:
        cross = _size_table_max(args.size_table)
    if cross is None:
        print("notice: no cross-model size table given; FS is omitted and CL_score averages the other metrics",
              file=sys.stderr)
    reports = compute_reports(records, th, cross)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "metrics.json", {"thresholds": {"dtw": th.dtw, "quat": th.quat}, "models": reports})
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "seed"] + metrics.report_fields())
        for model, rep in reports.items():
            for seed, item in rep["seeds"].items():
                w.writerow([model, seed] + [item["report"][f] for f in metrics.report_fields()])
            w.writerow([model, "mean"] + [rep["aggregate"][f] for f in metrics.report_fields()])
    for model, rep in reports.items():
        a = rep["aggregate"]
        print(f"{model}: ACC {a['ACC']:.3f} REM {a['REM']:.3f} CL_score {a['CL_score']:.3f} "
              f"CL_stability {a['CL_stability']:.3f}")


# ---------------------------------------------------------------- stability


def task_rollout(learner, task, raw: np.ndarray, kind: str, demo: int):
    """``f(position_starts, n_points)`` in dataset units; for poses the start orientation is the demo's."""
    x, info = data.normalize_demos(raw, kind, learner.cfg.tangent_scale)
    T = raw.shape[1]
    goal = info.goals[demo]
    npos = 3 if kind == "pose" else raw.shape[-1]

    def f(starts, n_points):
        starts = np.atleast_2d(starts)
        norm = np.repeat(x[demo, :1], len(starts), axis=0)
        norm[:, :npos] = (starts - goal[:npos]) / info.scale
        pred = predict_on_grid(learner, task, norm, n_points, T)
        return data.denormalize(pred, info, demo=demo)[..., :npos]

    return f


def cmd_stability(args) -> None:
    learner, header = ckpt.load_learner(args.checkpoint)
    ds = data.load_dataset(args.dataset)
    tasks = _ints(args.tasks) if args.tasks else list(range(header["task_index"] + 1))
    results = []
    for j in tasks:
        if not 0 <= j <= header["task_index"]:
            raise ContractError(f"task {j} was not learned by this checkpoint")
        raw = ds[j].demos
        npos = 3 if ds.kind == "pose" else raw.shape[-1]
        for demo in range(raw.shape[0]) if args.all_demos else [0]:
            f = task_rollout(learner, j, raw, ds.kind, demo)
            start, goal = raw[demo, 0, :npos], raw[demo, -1, :npos]
            if args.mode == "perturb":
                deltas = metrics.stability_perturbed_start(f, start, goal, args.radius, raw.shape[1],
                                                           args.samples, args.seed + j)
                results.append({"task": j, "demo": demo, "mode": "perturb", "radius": args.radius,
                                "deltas": deltas.tolist(), "median": float(np.median(deltas))})
            else:
                for extra in _ints(args.extra):
                    deltas = metrics.stability_extended_horizon(f, start, goal, raw.shape[1], extra)
                    results.append({"task": j, "demo": demo, "mode": "horizon", "extra_steps": extra,
                                    "deltas": deltas.tolist(), "median": float(np.median(deltas))})
    _write_json(Path(args.out), {"checkpoint": str(args.checkpoint), "method": learner.cfg.method,
                                 "learner": learner.cfg.learner, "results": results})
    print(f"{len(results)} stability results -> {args.out}")


# ---------------------------------------------------------------- plots


def cmd_plot(args) -> None:
    out = Path(args.out)
    made = []
    if args.runlogs:
        records = RunLog.read(*args.runlogs).records
        if not records:
            raise plotting.PlotError("run logs contain no records")
        made += [plotting.error_vs_task(records, out), plotting.error_boxplot(records, out),
                 plotting.timing_bars(records, out)]
    if args.metrics:
        reports = json.loads(Path(args.metrics).read_text())["models"]
        made.append(plotting.cl_radar({k: v["aggregate"] for k, v in reports.items()}, out))
    if not made:
        raise ContractError("nothing to plot: pass --runlogs and/or --metrics")
    for fig in made:
        print(f"{fig.svg} ({fig.n_points} points), {fig.csv}")


# ---------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stablelfd", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("import", help="convert raw per-task CSV files into a dataset directory")
    s.add_argument("source")
    s.add_argument("out")
    s.add_argument("--kind", choices=("lasa", "pose"), default="lasa")
    s.set_defaults(func=cmd_import)

    s = sub.add_parser("synth", help="stack source tasks into higher-dimensional tasks")
    s.add_argument("--source", required=True)
    s.add_argument("--dim", type=int, required=True)
    s.add_argument("--tasks", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("synth-toy", help="write analytic toy shapes")
    s.add_argument("--kind", choices=data.TOY_KINDS, default="sine")
    s.add_argument("--tasks", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--demos", type=int, default=7)
    s.add_argument("--points", type=int, default=1000)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth_toy)

    s = sub.add_parser("train", help="train task sequences and write logs and checkpoints")
    s.add_argument("--config")
    s.add_argument("--dataset")
    s.add_argument("--out")
    s.add_argument("--preset", choices=("desk", "reference"))
    s.add_argument("--methods")
    s.add_argument("--learners")
    s.add_argument("--seeds")
    s.add_argument("--iterations", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--beta", type=float)
    s.add_argument("--reg-strategy")
    s.add_argument("--set", action="append", metavar="KEY=VALUE", help="any config-file key")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint on its learned tasks")
    s.add_argument("checkpoint")
    s.add_argument("--dataset", required=True)
    s.add_argument("--tasks")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("metrics", help="accuracy matrices and CL metrics from run logs")
    s.add_argument("runlogs", nargs="+")
    s.add_argument("--out", required=True)
    s.add_argument("--dtw-threshold", type=float)
    s.add_argument("--quat-threshold", type=float)
    s.add_argument("--kind", choices=data.KINDS)
    s.add_argument("--dim", type=int)
    s.add_argument("--size-table", help="CSV with a 'size' column of final model sizes across models")
    s.add_argument("--cross-model-max-size", type=float)
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("stability", help="goal-delta tests from perturbed starts or extended horizons")
    s.add_argument("checkpoint")
    s.add_argument("--dataset", required=True)
    s.add_argument("--mode", choices=("perturb", "horizon"), default="perturb")
    s.add_argument("--tasks")
    s.add_argument("--radius", type=float, default=25.0)
    s.add_argument("--samples", type=int, default=100)
    s.add_argument("--extra", default="100,200")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--all-demos", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_stability)

    s = sub.add_parser("plot", help="render SVG figures and their CSV tables")
    s.add_argument("--runlogs", nargs="*")
    s.add_argument("--metrics")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (ContractError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
