"""Task datasets: loading, synthesis, normalization and on-disk persistence.

Two file layouts are understood.

*Raw import layout* (what ``load_lasa_2d`` / ``load_pose_tasks`` read): one
``<task>.csv`` per task, sorted by file name, with a header row.  Euclidean
tasks use ``demo,x0,x1,...``; pose tasks use ``demo,px,py,pz,qw,qx,qy,qz``.
Rows of one demonstration are contiguous and in time order.

*Dataset layout* (``save_dataset`` / ``load_dataset``): a root ``dataset.json``
listing task directories in order; each task directory holds ``manifest.json``
(name, kind, dim, T, n_demos, columns, sources) and ``demo_<i>.csv`` with a
header row and one row per timestep.  Floats are written with ``repr`` so the
round trip is bit-exact.
"""

from __future__ import annotations

import contextlib
import csv
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from stablelfd.dynamics import ContractError
from stablelfd.orientation import PoseTrajectory, decode_pose, encode_pose

KINDS = ("euclidean", "pose")
POSE_COLUMNS = ("px", "py", "pz", "qw", "qx", "qy", "qz")
QUAT_NORM_TOL = 1e-6
TANGENT_SCALE = 5.0
FORMAT_VERSION = 1


class DataError(ContractError):
    """Malformed or inconsistent dataset input."""


def euclidean_columns(dim: int) -> tuple[str, ...]:
    return tuple(f"x{i}" for i in range(dim))


@dataclass(frozen=True)
class Task:
    """One task: ``demos`` has shape ``(n_demos, T, dim)`` and is read-only.

    Pose tasks store raw rows ``[px, py, pz, qw, qx, qy, qz]``.
    """

    name: str
    demos: np.ndarray
    sources: tuple[int, ...] = ()

    def __post_init__(self):
        demos = np.array(self.demos, dtype=np.float64)
        if demos.ndim != 3 or demos.shape[0] < 1 or demos.shape[1] < 2:
            raise DataError(f"task {self.name!r}: demos must be (n_demos, T>=2, dim), got {demos.shape}")
        if not np.all(np.isfinite(demos)):
            raise DataError(f"task {self.name!r}: non-finite values")
        demos.setflags(write=False)
        object.__setattr__(self, "demos", demos)
        object.__setattr__(self, "sources", tuple(int(s) for s in self.sources))

    @property
    def n_demos(self) -> int:
        return self.demos.shape[0]

    @property
    def T(self) -> int:
        return self.demos.shape[1]

    @property
    def dim(self) -> int:
        return self.demos.shape[2]

    @property
    def nbytes(self) -> int:
        return self.demos.nbytes


@dataclass(frozen=True)
class TaskDataset:
    tasks: tuple[Task, ...]
    kind: str = "euclidean"

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if self.kind not in KINDS:
            raise DataError(f"unknown dataset kind {self.kind!r}")
        if not self.tasks:
            raise DataError("dataset has no tasks")
        dims = {t.dim for t in self.tasks}
        if len(dims) != 1:
            raise DataError(f"tasks disagree on dimension: {sorted(dims)}")
        if self.kind == "pose" and self.dim != 7:
            raise DataError("pose tasks need 7 columns")

    def __len__(self) -> int:
        return len(self.tasks)

    def __getitem__(self, i) -> Task:
        return self.tasks[i]

    @property
    def dim(self) -> int:
        return self.tasks[0].dim

    @property
    def model_dim(self) -> int:
        """State dimension seen by the learner (pose rows become 6-D)."""
        return 6 if self.kind == "pose" else self.dim

    @property
    def names(self) -> list[str]:
        return [t.name for t in self.tasks]

    @property
    def columns(self) -> tuple[str, ...]:
        return POSE_COLUMNS if self.kind == "pose" else euclidean_columns(self.dim)

    @property
    def nbytes(self) -> int:
        return sum(t.nbytes for t in self.tasks)

    def subset(self, indices) -> TaskDataset:
        return TaskDataset(tuple(self.tasks[i] for i in indices), self.kind)


# ---------------------------------------------------------------- raw import


def _read_long_csv(path: Path, columns: tuple[str, ...] | None) -> np.ndarray:
    """Parse ``demo,<columns>`` rows into ``(n_demos, T, n_columns)``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if not header or header[0] != "demo":
            raise DataError(f"{path}, row 1: first column must be 'demo', got {header[:1]}")
        if columns is not None and tuple(header[1:]) != columns:
            raise DataError(f"{path}, row 1: expected columns {list(columns)}, got {header[1:]}")
        if len(header) < 2:
            raise DataError(f"{path}, row 1: no state columns")
        per_demo: dict[int, list[list[float]]] = {}
        order = []
        last = None
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}, row {row_no}: expected {len(header)} fields, got {len(row)}")
            try:
                demo = int(row[0])
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise DataError(f"{path}, row {row_no}: {exc}") from None
            if demo != last:
                if demo in per_demo:
                    raise DataError(f"{path}, row {row_no}: rows of demo {demo} are not contiguous")
                per_demo[demo] = []
                order.append(demo)
                last = demo
            per_demo[demo].append(values)
    if not order:
        raise DataError(f"{path}: no data rows")
    lengths = {len(per_demo[d]) for d in order}
    if len(lengths) != 1:
        raise DataError(f"{path}: demos have different lengths {sorted(lengths)}")
    return np.array([per_demo[d] for d in order], dtype=np.float64)


def _task_files(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: not a directory")
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise DataError(f"{directory}: no task CSV files")
    return files


def load_lasa_2d(directory) -> TaskDataset:
    """Load 2-D (or generally Euclidean) tasks from the raw import layout."""
    tasks = []
    for path in _task_files(directory):
        demos = _read_long_csv(path, None)
        tasks.append(Task(path.stem, demos))
    return TaskDataset(tuple(tasks), "euclidean")


def canonical_quaternions(quats: np.ndarray, where: str = "") -> np.ndarray:
    """Renormalise within :data:`QUAT_NORM_TOL` and remove double-cover flips."""
    norms = np.linalg.norm(quats, axis=-1)
    bad = np.abs(norms - 1.0) > QUAT_NORM_TOL
    if np.any(bad):
        idx = np.argwhere(bad)[0]
        raise DataError(f"{where}: quaternion norm {norms[tuple(idx)]:.6g} at index {idx.tolist()}")
    q = quats / norms[..., None]
    flat = q.reshape(-1, q.shape[-2], 4)
    for traj in flat:
        dots = np.sum(traj[1:] * traj[:-1], axis=1)
        # flip pattern from cumulative parity of negative dots
        parity = np.concatenate([[0], np.cumsum(dots < 0) % 2])
        traj[parity == 1] *= -1
    return flat.reshape(q.shape)


def load_pose_tasks(directory) -> TaskDataset:
    tasks = []
    for path in _task_files(directory):
        demos = _read_long_csv(path, POSE_COLUMNS)
        quats = canonical_quaternions(demos[..., 3:], str(path))
        tasks.append(Task(path.stem, np.concatenate([demos[..., :3], quats], axis=-1)))
    return TaskDataset(tuple(tasks), "pose")


def write_raw_task(path, demos: np.ndarray, columns) -> None:
    """Write one task in the raw import layout."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["demo", *columns]) + "\n")
        for d, demo in enumerate(demos):
            for row in demo:
                fh.write(str(d) + "," + ",".join(repr(float(v)) for v in row) + "\n")


# ---------------------------------------------------------------- persistence


def _write_rows(path: Path, columns, rows: np.ndarray) -> None:
    lines = [",".join(columns)]
    lines.extend(",".join(repr(float(v)) for v in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")


def _read_rows(path: Path, columns) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != tuple(columns):
            raise DataError(f"{path}, row 1: expected header {list(columns)}, got {header}")
        rows = []
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(columns):
                raise DataError(f"{path}, row {row_no}: expected {len(columns)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise DataError(f"{path}, row {row_no}: {exc}") from None
    return np.array(rows, dtype=np.float64).reshape(-1, len(columns))


def save_dataset(dataset: TaskDataset, directory) -> Path:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    dirs = []
    for k, task in enumerate(dataset.tasks):
        tdir = root / f"task_{k:03d}"
        tdir.mkdir(exist_ok=True)
        manifest = {
            "name": task.name,
            "kind": dataset.kind,
            "dim": task.dim,
            "T": task.T,
            "n_demos": task.n_demos,
            "columns": list(dataset.columns),
            "sources": list(task.sources),
        }
        (tdir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        for i, demo in enumerate(task.demos):
            _write_rows(tdir / f"demo_{i}.csv", dataset.columns, demo)
        dirs.append(tdir.name)
    index = {"format_version": FORMAT_VERSION, "kind": dataset.kind, "tasks": dirs}
    (root / "dataset.json").write_text(json.dumps(index, indent=2) + "\n")
    return root


def load_dataset(directory) -> TaskDataset:
    root = Path(directory)
    index_path = root / "dataset.json"
    if not index_path.is_file():
        raise DataError(f"{root}: missing dataset.json")
    try:
        index = json.loads(index_path.read_text())
        kind = index["kind"]
        task_dirs = index["tasks"]
    except (json.JSONDecodeError, KeyError) as exc:
        raise DataError(f"{index_path}: {exc}") from None
    if index.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{index_path}: unsupported format_version {index.get('format_version')}")
    tasks = []
    for name in task_dirs:
        tdir = root / name
        mpath = tdir / "manifest.json"
        try:
            manifest = json.loads(mpath.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"{mpath}: {exc}") from None
        demos = []
        for i in range(manifest["n_demos"]):
            rows = _read_rows(tdir / f"demo_{i}.csv", manifest["columns"])
            if rows.shape != (manifest["T"], manifest["dim"]):
                raise DataError(f"{tdir / f'demo_{i}.csv'}: shape {rows.shape} disagrees with manifest")
            demos.append(rows)
        tasks.append(Task(manifest["name"], np.stack(demos), tuple(manifest.get("sources", ()))))
    return TaskDataset(tuple(tasks), kind)


# ---------------------------------------------------------------- synthesis


def synth_highd(source: TaskDataset, target_dim: int, n_tasks: int = 10, seed: int = 0) -> TaskDataset:
    """Stack ``target_dim/2`` distinct 2-D source tasks per synthesised task.

    Demo ``d`` of a new task concatenates demo ``d`` of each chosen source task.
    Draws are without replacement within a task and independent across tasks.
    """
    if source.kind != "euclidean" or source.dim != 2:
        raise DataError("high-dimensional synthesis needs a 2-D euclidean source")
    if target_dim < 4 or target_dim % 2:
        raise DataError(f"target_dim must be even and >= 4, got {target_dim}")
    k = target_dim // 2
    if len(source) < k:
        raise DataError(f"need at least {k} source tasks for dim {target_dim}, have {len(source)}")
    if n_tasks < 1:
        raise DataError("n_tasks must be positive")
    rng = np.random.default_rng(seed)
    tasks = []
    for m in range(n_tasks):
        picks = rng.choice(len(source), size=k, replace=False)
        chosen = [source[int(i)] for i in picks]
        shapes = {(t.n_demos, t.T) for t in chosen}
        if len(shapes) != 1:
            raise DataError(f"source tasks {picks.tolist()} differ in (n_demos, T): {sorted(shapes)}")
        demos = np.concatenate([t.demos for t in chosen], axis=-1)
        tasks.append(Task(f"lasa{target_dim}d_{m:02d}", demos, tuple(int(i) for i in picks)))
    return TaskDataset(tuple(tasks), "euclidean")


TOY_KINDS = ("sine", "spiral", "angle", "mixed")


def _rot(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def _toy_path(kind: str, s: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Analytic path with ``p(s=1) = 0``, roughly 40 units across."""
    if kind == "sine":
        length = rng.uniform(30, 45)
        amp = rng.uniform(8, 15) * rng.choice([-1, 1])
        k = rng.integers(1, 3)
        pts = np.stack([-length * (1 - s), amp * np.sin(k * np.pi * s)], axis=1)
    elif kind == "spiral":
        radius = rng.uniform(25, 40)
        turns = rng.uniform(0.75, 1.25)
        phase = rng.uniform(0, 2 * np.pi)
        phi = phase + 2 * np.pi * turns * s
        pts = (radius * (1 - s))[:, None] * np.stack([np.cos(phi), np.sin(phi)], axis=1)
    elif kind == "angle":
        length = rng.uniform(30, 45)
        start = np.array([-length, rng.uniform(0.4, 0.8) * length])
        corner = np.array([-rng.uniform(0.2, 0.4) * length, -rng.uniform(0.1, 0.3) * length])
        split = np.linalg.norm(corner - start) / (np.linalg.norm(corner - start) + np.linalg.norm(corner))
        first = s <= split
        u = np.where(first, s / split, (s - split) / (1 - split))[:, None]
        pts = np.where(first[:, None], start + u * (corner - start), corner * (1 - u))
    else:
        raise DataError(f"unknown toy shape {kind!r}")
    return pts @ _rot(rng.uniform(0, 2 * np.pi)).T


def synth_toy_shapes(kind: str = "sine", n_tasks: int = 1, seed: int = 0,
                     n_demos: int = 7, T: int = 1000) -> TaskDataset:
    """Analytic 2-D shapes with small smooth per-demo perturbations, ending at the origin.

    ``mixed`` cycles sine, spiral, angle across tasks.  Motion decelerates
    toward the goal: the path parameter is ``s = 1 - (1 - t)^2``.  The
    perturbation never exceeds 0.08 units, so demos stay within DTW 100 of
    their mean.
    """
    if kind not in TOY_KINDS:
        raise DataError(f"unknown toy shape {kind!r}; choose from {TOY_KINDS}")
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 1.0, T)
    s = 1 - (1 - t) ** 2
    tasks = []
    for m in range(n_tasks):
        shape = ("sine", "spiral", "angle")[m % 3] if kind == "mixed" else kind
        base = _toy_path(shape, s, rng)
        demos = []
        for _ in range(n_demos):
            coef = rng.normal(size=(3, 2))
            bump = (coef[0] * np.sin(np.pi * s)[:, None] + coef[1] * np.sin(2 * np.pi * s)[:, None]
                    + coef[2] * ((1 - s) ** 2)[:, None])
            bump *= rng.uniform(0.03, 0.08) / np.abs(bump).max()
            demo = base + bump
            demo[-1] = 0.0
            demos.append(demo)
        tasks.append(Task(f"{shape}_{m:02d}", np.stack(demos)))
    return TaskDataset(tuple(tasks), "euclidean")


# ---------------------------------------------------------------- normalization


@dataclass(frozen=True)
class NormalizationInfo:
    """Inverse-map data for one task.

    ``goals`` holds each demo's final raw row; ``scale`` divides the
    goal-centred (and for poses, tangent-encoded) states into ``[-1, 1]``.
    """

    kind: str
    goals: np.ndarray
    scale: float
    tangent_scale: float | None = None

    @property
    def model_dim(self) -> int:
        return 6 if self.kind == "pose" else self.goals.shape[-1]


def _centred(demos: np.ndarray, kind: str, tangent_scale: float) -> np.ndarray:
    if kind == "pose":
        return np.stack([encode_pose(PoseTrajectory(d[:, :3], d[:, 3:]), tangent_scale) for d in demos])
    return demos - demos[:, -1:, :]


def normalize_demos(demos, kind: str = "euclidean",
                    tangent_scale: float = TANGENT_SCALE) -> tuple[np.ndarray, NormalizationInfo]:
    """Map each demo so its final point is the origin, then rescale into ``[-1, 1]``."""
    if kind not in KINDS:
        raise DataError(f"unknown dataset kind {kind!r}")
    demos = np.asarray(demos, dtype=np.float64)
    x = _centred(demos, kind, tangent_scale)
    peak = float(np.abs(x).max())
    scale = peak if peak > 0 else 1.0
    info = NormalizationInfo(kind, demos[:, -1, :].copy(), scale, tangent_scale if kind == "pose" else None)
    return x / scale, info


def normalize(task: Task, kind: str = "euclidean",
              tangent_scale: float = TANGENT_SCALE) -> tuple[np.ndarray, NormalizationInfo]:
    return normalize_demos(task.demos, kind, tangent_scale)


def denormalize(pred, info: NormalizationInfo, demo: int | None = None) -> np.ndarray:
    """Inverse of :func:`normalize`.

    ``pred`` is ``(n_demos, T, d)`` matched to the stored goals, or when
    ``demo`` is given, any ``(..., T, d)`` batch sharing that demo's goal.
    """
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape[-1] != info.model_dim:
        raise ContractError(f"prediction has {pred.shape[-1]} columns, expected {info.model_dim}")
    if demo is None:
        if pred.ndim != 3 or pred.shape[0] != len(info.goals):
            raise ContractError("prediction must be (n_demos, T, d) when demo is not given")
        goals = info.goals[:, None, :]
    else:
        goals = np.broadcast_to(info.goals[demo], pred.shape[:-2] + (1, info.goals.shape[-1]))
    x = pred * info.scale
    if info.kind != "pose":
        return x + goals
    flat_x = x.reshape(-1, *x.shape[-2:])
    flat_g = np.broadcast_to(goals, x.shape[:-2] + goals.shape[-2:]).reshape(-1, 1, 7)
    out = []
    for xi, gi in zip(flat_x, flat_g):
        p = decode_pose(xi, gi[0, :3], gi[0, 3:], info.tangent_scale)
        out.append(np.concatenate([p.positions, p.quaternions], axis=1))
    return np.stack(out).reshape(x.shape[:-1] + (7,))


def subsample(demos: np.ndarray, n_points: int) -> np.ndarray:
    """Keep ``n_points`` evenly spaced timesteps along axis -2, always including both ends."""
    T = demos.shape[-2]
    if n_points >= T:
        return demos
    if n_points < 2:
        raise ContractError("need at least 2 points")
    idx = np.round(np.linspace(0, T - 1, n_points)).astype(int)
    return demos[..., idx, :]


# ---------------------------------------------------------------- access tracking


@dataclass
class TrackedDataset:
    """Wraps a dataset and counts demo reads per ``(phase, task)``.

    Training code opens a phase with :meth:`phase` and reads demos through
    :meth:`demos`; tests then inspect :attr:`reads` to check isolation.
    """

    dataset: TaskDataset
    reads: Counter = field(default_factory=Counter)
    _phase: str = "idle"

    @contextlib.contextmanager
    def phase(self, label: str):
        prev, self._phase = self._phase, label
        try:
            yield self
        finally:
            self._phase = prev

    def demos(self, task_index: int) -> np.ndarray:
        if not 0 <= task_index < len(self.dataset):
            raise ContractError(f"unknown task index {task_index}")
        self.reads[(self._phase, task_index)] += 1
        return self.dataset.tasks[task_index].demos

    def reads_in(self, phase: str) -> set[int]:
        return {i for (p, i), n in self.reads.items() if p == phase and n}

    def __len__(self) -> int:
        return len(self.dataset)
