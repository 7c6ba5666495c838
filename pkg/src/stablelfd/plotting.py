"""Static figures (SVG) with the CSV that backs each one."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from stablelfd.dynamics import ContractError  # noqa: E402


class PlotError(ContractError):
    pass


@dataclass(frozen=True)
class Figure:
    svg: Path
    csv: Path
    n_points: int


def _write(fig, rows: list[dict], out_dir, stem: str, n_points: int) -> Figure:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    svg, table = out_dir / f"{stem}.svg", out_dir / f"{stem}.csv"
    fig.savefig(svg, format="svg")
    plt.close(fig)
    with open(table, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return Figure(svg, table, n_points)


def _label(key) -> str:
    return f"{key[0]}→{key[1]}"


def _groups(records: list[dict]) -> dict[tuple, list[dict]]:
    if not records:
        raise PlotError("no records to plot")
    out: dict[tuple, list[dict]] = {}
    for r in records:
        out.setdefault((r["method"], r["learner"]), []).append(r)
    return out


def _finite(v) -> float:
    return float(v) if v is not None and np.isfinite(v) else np.nan


def error_vs_task(records: list[dict], out_dir, metric: str = "dtw", stem: str = "error_vs_task") -> Figure:
    """One curve per evaluated task: median error after each later training task."""
    groups = _groups(records)
    fig, axes = plt.subplots(1, len(groups), figsize=(5 * len(groups), 4), squeeze=False)
    rows = []
    for ax, (key, recs) in zip(axes[0], sorted(groups.items())):
        cells: dict[tuple, list[float]] = {}
        for r in recs:
            cells.setdefault((r["eval_task"], r["train_task"]), []).append(r[metric])
        for j in sorted({e for e, _ in cells}):
            xs = sorted(i for e, i in cells if e == j)
            ys = [float(np.median(cells[(j, i)])) for i in xs]
            for i, y in zip(xs, ys):
                rows.append({"method": key[0], "learner": key[1], "eval_task": j, "train_task": i,
                             f"median_{metric}": y})
            ax.plot(xs, [_finite(y) for y in ys], marker="o", label=f"task {j}")
        ax.set_title(_label(key))
        ax.set_xlabel("tasks trained")
        ax.set_ylabel(f"median {metric}")
        ax.legend(fontsize="small")
    fig.tight_layout()
    return _write(fig, rows, out_dir, stem, len(rows))


def error_boxplot(records: list[dict], out_dir, metric: str = "dtw", stem: str = "error_boxplot") -> Figure:
    """Distribution of errors at the final evaluation, one box per method."""
    groups = _groups(records)
    labels, data, rows = [], [], []
    for key, recs in sorted(groups.items()):
        last = max(r["train_task"] for r in recs)
        vals = [r[metric] for r in recs if r["train_task"] == last]
        for r in recs:
            if r["train_task"] == last:
                rows.append({"method": key[0], "learner": key[1], "seed": r["seed"], "eval_task": r["eval_task"],
                             "demo": r.get("demo", 0), metric: r[metric]})
        labels.append(_label(key))
        data.append([v for v in (_finite(x) for x in vals) if np.isfinite(v)])
    fig, ax = plt.subplots(figsize=(1.5 + 1.2 * len(labels), 4))
    ax.boxplot(data)
    ax.set_xticks(range(1, len(labels) + 1), labels, rotation=30)
    ax.set_ylabel(metric)
    fig.tight_layout()
    return _write(fig, rows, out_dir, stem, sum(len(d) for d in data))


def timing_bars(records: list[dict], out_dir, stem: str = "timing") -> Figure:
    """Mean wall time per training task, one bar group per method."""
    groups = _groups(records)
    series, rows = {}, []
    for key, recs in sorted(groups.items()):
        per: dict[int, dict[int, float]] = {}
        for r in recs:
            per.setdefault(r["train_task"], {})[r["seed"]] = r["wall_time_s"]
        xs = sorted(per)
        ys = [float(np.mean(list(per[i].values()))) for i in xs]
        series[key] = (xs, ys)
        rows += [{"method": key[0], "learner": key[1], "train_task": i, "wall_time_s": y} for i, y in zip(xs, ys)]
    fig, ax = plt.subplots(figsize=(6, 4))
    width = 0.8 / len(series)
    for k, (key, (xs, ys)) in enumerate(series.items()):
        ax.bar(np.asarray(xs) + k * width, ys, width, label=_label(key))
    ax.set_xlabel("task")
    ax.set_ylabel("wall time [s]")
    ax.legend(fontsize="small")
    fig.tight_layout()
    return _write(fig, rows, out_dir, stem, len(rows))


def cl_radar(reports: dict[str, dict], out_dir, stem: str = "cl_radar") -> Figure:
    """Radar chart of the CL metrics; metrics missing from any report are dropped."""
    if not reports:
        raise PlotError("no reports to plot")
    names = ["ACC", "REM", "MS", "SSS", "TE", "FS"]
    names = [n for n in names if all(rep.get(n) is not None for rep in reports.values())]
    if len(names) < 3:
        raise PlotError("a radar chart needs at least three metrics")
    angles = np.linspace(0, 2 * np.pi, len(names), endpoint=False)
    fig, ax = plt.subplots(figsize=(5, 5), subplot_kw={"projection": "polar"})
    rows = []
    for label, rep in sorted(reports.items()):
        vals = [float(rep[n]) for n in names]
        ax.plot(np.append(angles, angles[0]), vals + vals[:1], label=label)
        rows.append({"model": label, **dict(zip(names, vals))})
    ax.set_xticks(angles, names)
    ax.set_ylim(0, 1)
    ax.legend(fontsize="small", loc="lower right")
    fig.tight_layout()
    return _write(fig, rows, out_dir, stem, len(rows) * len(names))
