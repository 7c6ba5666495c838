"""Trajectory errors, continual-learning metrics and stability probes."""

from __future__ import annotations

import math
from collections.abc import Callable, Iterable, Mapping
from dataclasses import asdict, dataclass, fields

import numba
import numpy as np

from stablelfd.dynamics import ContractError


class MetricsError(ContractError):
    pass


@numba.njit(cache=True)
def _dtw_kernel(a, b):
    n, m = a.shape[0], b.shape[0]
    prev = np.full(m + 1, np.inf)
    cur = np.full(m + 1, np.inf)
    prev[0] = 0.0
    for i in range(1, n + 1):
        cur[0] = np.inf
        for j in range(1, m + 1):
            d = 0.0
            for k in range(a.shape[1]):
                diff = a[i - 1, k] - b[j - 1, k]
                d += diff * diff
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = math.sqrt(d) + best
        prev, cur = cur, prev
    return prev[m]


def dtw(a, b) -> float:
    """Classic DTW: Euclidean point cost, unconstrained window, summed along the best path."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise MetricsError("dtw of an empty sequence")
    if a.shape[1] != b.shape[1]:
        raise MetricsError(f"dtw dimension mismatch {a.shape[1]} vs {b.shape[1]}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        return math.inf
    return float(_dtw_kernel(a, b))


# ---------------------------------------------------------------- thresholds


@dataclass(frozen=True)
class Thresholds:
    dtw: float
    quat: float | None = None


LASA_THRESHOLDS = {2: 2191.0, 8: 4000.0, 16: 7000.0, 32: 15000.0}
POSE_THRESHOLDS = Thresholds(3000.0, 0.08)


def default_thresholds(kind: str, dim: int) -> Thresholds:
    """Reference thresholds by dataset kind and dimension."""
    if kind == "pose":
        return POSE_THRESHOLDS
    if dim not in LASA_THRESHOLDS:
        raise MetricsError(f"no default DTW threshold for dimension {dim}; pass one explicitly")
    return Thresholds(LASA_THRESHOLDS[dim])


def passes(record: Mapping, th: Thresholds) -> bool:
    ok = record["dtw"] is not None and record["dtw"] <= th.dtw
    if th.quat is not None and record.get("quat_err") is not None:
        ok = ok and record["quat_err"] <= th.quat
    return bool(ok)


# ---------------------------------------------------------------- accuracy matrix


@dataclass(frozen=True)
class AccuracyMatrix:
    """``R[i, j]`` = pass fraction on task j after training task i; NaN above the diagonal."""

    R: np.ndarray
    thresholds: Thresholds

    @property
    def n_tasks(self) -> int:
        return self.R.shape[0]


def accuracy_matrix(records: Iterable[Mapping], thresholds: Thresholds,
                    n_tasks: int | None = None) -> AccuracyMatrix:
    """Build the lower-triangular accuracy matrix from one run's records."""
    cells: dict[tuple[int, int], list[bool]] = {}
    for r in records:
        key = (int(r["train_task"]), int(r["eval_task"]))
        if key[1] > key[0]:
            raise MetricsError(f"record evaluates future task {key}")
        cells.setdefault(key, []).append(passes(r, thresholds))
    if n_tasks is None:
        n_tasks = 1 + max((i for i, _ in cells), default=-1)
    if n_tasks < 1:
        raise MetricsError("no records")
    missing = [(i, j) for i in range(n_tasks) for j in range(i + 1) if (i, j) not in cells]
    if missing:
        raise MetricsError(f"incomplete evaluation triangle, missing (train, eval) pairs: {missing}")
    R = np.full((n_tasks, n_tasks), np.nan)
    for (i, j), flags in cells.items():
        if i < n_tasks:
            R[i, j] = np.mean(flags)
    return AccuracyMatrix(R, thresholds)


# ---------------------------------------------------------------- CL metrics


@dataclass(frozen=True)
class CLReport:
    ACC: float
    REM: float
    MS: float
    SSS: float
    TE: float
    FS: float | None
    CL_score: float
    CL_stability: float = 1.0

    METRICS = ("ACC", "REM", "MS", "SSS", "TE", "FS")

    def to_dict(self) -> dict:
        return asdict(self)


def _lower(R: np.ndarray, strict: bool) -> np.ndarray:
    return np.tril(np.ones_like(R, dtype=bool), k=-1 if strict else 0)


def cl_metrics(R, sizes, times, storage_bytes, dataset_bytes: float,
               cross_model_max_size: float | None = None) -> CLReport:
    """ACC, REM, MS, SSS, TE, FS and their mean.

    ``sizes``, ``times`` and ``storage_bytes`` are per task.  FS is left as
    ``None`` (and excluded from the mean) when no cross-model maximum is given.
    """
    R = np.asarray(R, dtype=np.float64)
    n = R.shape[0]
    if R.shape != (n, n) or n < 1:
        raise MetricsError(f"accuracy matrix must be square, got {R.shape}")
    sizes = np.asarray(sizes, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    storage = np.asarray(storage_bytes, dtype=np.float64)
    for name, arr in (("sizes", sizes), ("times", times), ("storage_bytes", storage)):
        if arr.shape != (n,):
            raise MetricsError(f"{name} needs {n} entries, got {arr.shape}")
    if np.any(sizes <= 0) or np.any(times <= 0) or np.any(storage < 0) or dataset_bytes <= 0:
        raise MetricsError("sizes, times and dataset_bytes must be positive, storage nonnegative")
    low = R[_lower(R, strict=False)]
    if np.any(np.isnan(low)):
        raise MetricsError("accuracy matrix has undefined entries on or below the diagonal")
    acc = low.sum() / (n * (n + 1) / 2)
    if n > 1:
        diag = np.diag(R)
        i, j = np.nonzero(_lower(R, strict=True))
        bwt = np.sum(R[i, j] - diag[j]) / (n * (n - 1) / 2)
        rem = 1.0 - abs(min(0.0, bwt))
    else:
        rem = 1.0
    ms = min(1.0, float(np.sum(sizes[0] / sizes)) / n)
    sss = 1.0 - min(1.0, float(np.sum(storage / dataset_bytes)) / n)
    te = min(1.0, float(np.sum(times[0] / times)) / n)
    fs = None
    if cross_model_max_size is not None:
        if cross_model_max_size <= 0:
            raise MetricsError("cross_model_max_size must be positive")
        fs = 1.0 - min(1.0, float(sizes[-1]) / cross_model_max_size)
    parts = [acc, rem, ms, sss, te] + ([fs] if fs is not None else [])
    return CLReport(float(acc), float(rem), ms, sss, te, fs, float(np.mean(parts)))


def aggregate_reports(reports: list[CLReport]) -> CLReport:
    """Mean across seeds; CL_stability is one minus the mean across-seed std of the metrics."""
    if not reports:
        raise MetricsError("no reports to aggregate")
    out = {}
    stds = []
    for name in CLReport.METRICS:
        vals = [getattr(r, name) for r in reports]
        if any(v is None for v in vals):
            out[name] = None
            continue
        out[name] = float(np.mean(vals))
        stds.append(float(np.std(vals)))
    score = float(np.mean([getattr(r, "CL_score") for r in reports]))
    stability = 1.0 - float(np.mean(stds)) if stds else 1.0
    return CLReport(**out, CL_score=score, CL_stability=min(1.0, max(0.0, stability)))


def report_fields() -> list[str]:
    return [f.name for f in fields(CLReport)]


# ---------------------------------------------------------------- stability


def sample_ball(rng: np.random.Generator, center, radius: float, n: int) -> np.ndarray:
    """Uniform samples from the closed d-ball around ``center``."""
    center = np.asarray(center, dtype=np.float64)
    d = center.shape[-1]
    direction = rng.normal(size=(n, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * rng.uniform(size=(n, 1)) ** (1.0 / d)
    return center + r * direction


def goal_deltas(trajectories, goal) -> np.ndarray:
    """Endpoint distance to ``goal``; non-finite trajectories count as infinite."""
    trajectories = np.asarray(trajectories, dtype=np.float64)
    end = trajectories[:, -1, :]
    delta = np.linalg.norm(end - np.asarray(goal, dtype=np.float64), axis=1)
    bad = ~np.all(np.isfinite(trajectories.reshape(len(trajectories), -1)), axis=1)
    return np.where(bad | ~np.isfinite(delta), np.inf, delta)


Rollout = Callable[[np.ndarray, int], np.ndarray]


def stability_perturbed_start(rollout: Rollout, start, goal, radius: float, n_points: int,
                              n_samples: int = 100, seed: int = 0) -> np.ndarray:
    """Goal-delta for ``n_samples`` starts drawn uniformly within ``radius`` of ``start``.

    ``rollout(starts, n_points)`` returns ``(S, n_points, d)`` in the same units
    as ``start`` and ``goal``.
    """
    if radius < 0:
        raise MetricsError("radius must be nonnegative")
    starts = sample_ball(np.random.default_rng(seed), start, radius, n_samples)
    return goal_deltas(rollout(starts, n_points), goal)


def stability_extended_horizon(rollout: Rollout, starts, goal, n_points: int, extra_steps: int) -> np.ndarray:
    """Goal-delta after rolling ``extra_steps`` beyond the demonstrated length."""
    if extra_steps < 0:
        raise MetricsError("extra_steps must be nonnegative")
    starts = np.atleast_2d(np.asarray(starts, dtype=np.float64))
    return goal_deltas(rollout(starts, n_points + extra_steps), goal)
