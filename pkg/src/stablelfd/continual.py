"""Sequential training over a task list, with evaluation on every task seen so far.

Methods:

* ``SG``: a separate learner per task.
* ``FT``: one task-conditioned learner, fine-tuned on each new task.
* ``REP``: like FT, but minibatches are drawn uniformly from every demo seen so far.
* ``SI`` / ``MAS``: FT plus a weighted L2 pull toward the previous task's
  parameters, with importances from the path integral / output sensitivity.
* ``HN`` / ``CHN``: a full or chunked hypernetwork emitting the learner's
  parameters from a per-task embedding.
"""

from __future__ import annotations

import json
import logging
import math
import time
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np
import optax

from stablelfd import dynamics as dyn
from stablelfd import hypernet as hn
from stablelfd.data import TaskDataset, TrackedDataset, denormalize, normalize_demos, subsample
from stablelfd.dynamics import ContractError
from stablelfd.metrics import dtw
from stablelfd.orientation import trajectory_quat_error

log = logging.getLogger(__name__)

METHODS = ("SG", "FT", "REP", "SI", "MAS", "HN", "CHN")
LEARNERS = ("NODE", "sNODE")
CONDITIONED = ("FT", "REP", "SI", "MAS")
EMBEDDING_INIT_WIDTH = 0.1


@dataclass(frozen=True)
class MethodConfig:
    method: str = "CHN"
    learner: str = "sNODE"
    iterations: int = 3000
    lr: float = 1e-3
    train_points: int = 200
    scheme: str = "euler"
    time_input: bool = True
    alpha: float = 0.0
    node_hidden: tuple[int, ...] = (64, 64)
    f_hidden: tuple[int, ...] = (64, 64)
    v_hidden: tuple[int, ...] = (32, 32)
    task_emb_dim: int = 32
    hn_hidden: tuple[int, ...] = (64, 64)
    chunk_size: int = 512
    chunk_emb_dim: int = 32
    hn_out_scale: float = 1.0
    beta: float = 5e-3
    reg_strategy: str = "all"
    lookahead: bool = True
    si_c: float = 0.3
    si_xi: float = 0.3
    mas_lambda: float = 0.1
    tangent_scale: float = 5.0

    def __post_init__(self):
        for name in ("node_hidden", "f_hidden", "v_hidden", "hn_hidden"):
            object.__setattr__(self, name, tuple(int(w) for w in getattr(self, name)))
        if self.method not in METHODS:
            raise ContractError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.learner not in LEARNERS:
            raise ContractError(f"learner must be one of {LEARNERS}, got {self.learner!r}")
        if self.iterations < 0 or self.train_points < 2:
            raise ContractError("iterations must be >= 0 and train_points >= 2")
        for name in ("lr", "tangent_scale"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")
        for name in ("alpha", "beta", "si_c", "si_xi", "mas_lambda"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be nonnegative")
        if self.scheme not in ("euler", "rk4"):
            raise ContractError(f"unknown integrator {self.scheme!r}")
        hn.RegStrategy.parse(self.reg_strategy, self.beta)

    @property
    def strategy(self) -> hn.RegStrategy:
        return hn.RegStrategy.parse(self.reg_strategy, self.beta)

    @property
    def reg_constant(self) -> float:
        return {"SI": self.si_c, "MAS": self.mas_lambda}.get(self.method, 0.0)

    def build_model(self, dim: int, cond_dim: int = 0):
        if self.learner == "NODE":
            return dyn.Node.build(dim, self.node_hidden, self.time_input, cond_dim)
        return dyn.SNode.build(dim, self.f_hidden, self.v_hidden, self.time_input, cond_dim, alpha=self.alpha)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


# ---------------------------------------------------------------- direct regularization


@dataclass
class DirectRegState:
    """Importance ``omega``, anchor ``theta_star`` and the SI path accumulators."""

    omega: np.ndarray
    theta_star: np.ndarray
    path: np.ndarray
    theta_start: np.ndarray

    @classmethod
    def zeros(cls, theta) -> DirectRegState:
        theta = np.asarray(theta, dtype=np.float64)
        z = np.zeros_like(theta)
        return cls(z.copy(), theta.copy(), z.copy(), theta.copy())


def direct_reg_penalty(theta, omega, theta_star, c):
    """``c * sum_k omega_k (theta*_k - theta_k)^2``; traceable."""
    return c * jnp.sum(omega * (theta_star - theta) ** 2)


def direct_reg_loss(task_loss, state: DirectRegState, theta, c: float):
    return task_loss + float(direct_reg_penalty(jnp.asarray(theta), state.omega, state.theta_star, c))


def si_update(state: DirectRegState, grads, param_deltas) -> DirectRegState:
    """Accumulate ``-grad * delta`` along the optimization path."""
    return replace(state, path=state.path - np.asarray(grads) * np.asarray(param_deltas))


def si_consolidate(state: DirectRegState, theta, xi: float) -> DirectRegState:
    """Fold the path integral into ``omega`` and re-anchor at ``theta``.

    Per-parameter contributions are clipped at zero so ``omega`` stays nonnegative.
    """
    theta = np.asarray(theta, dtype=np.float64)
    moved = (theta - state.theta_start) ** 2
    contrib = np.maximum(state.path / (moved + xi), 0.0)
    return DirectRegState(state.omega + contrib, theta.copy(), np.zeros_like(theta), theta.copy())


def mas_importance(fn: Callable, theta, inputs) -> np.ndarray:
    """Mean over ``inputs`` of ``|d |fn(theta, x)|^2 / d theta|``."""
    def sq_norm(th, x):
        return jnp.sum(fn(th, x) ** 2)

    grads = jax.vmap(jax.grad(sq_norm), in_axes=(None, 0))(jnp.asarray(theta), jnp.asarray(inputs))
    return np.asarray(jnp.mean(jnp.abs(grads), axis=0))


def mas_update(state: DirectRegState, fn: Callable, theta, inputs) -> DirectRegState:
    """Add the task's output-sensitivity importance and re-anchor at ``theta``."""
    theta = np.asarray(theta, dtype=np.float64)
    omega = state.omega + mas_importance(fn, theta, inputs)
    return DirectRegState(omega, theta.copy(), np.zeros_like(theta), theta.copy())


def _velocity_samples(model, theta, demos, cond):
    """MAS inputs: every (state, time[, cond]) on the training grid, flattened."""
    B, T, d = demos.shape
    t = np.broadcast_to(np.linspace(0.0, 1.0, T)[None, :, None], (B, T, 1))
    parts = [demos, t]
    if cond is not None:
        parts.append(np.broadcast_to(np.asarray(cond)[None, None, :], (B, T, len(cond))))
    inputs = np.concatenate(parts, axis=-1).reshape(B * T, -1)

    def fn(th, row):
        c = row[d + 1:] if cond is not None else None
        return model.velocity(th, row[:d], row[d], c)

    return fn, inputs


# ---------------------------------------------------------------- learners


def task_conditioned_forward(model, theta, embeddings, task: int, x, t):
    """Velocity of a conditioned learner for ``task``, using that task's embedding."""
    if not 0 <= task < len(embeddings):
        raise ContractError(f"unknown task index {task}")
    return model.velocity(theta, x, t, embeddings[task])


@partial(jax.jit, static_argnames=("model", "cfg", "opt", "conditioned", "regularize"))
def _direct_step(params, opt_state, demos, task_idx, frozen, omega, theta_star, c, *,
                 model, cfg, opt, conditioned, regularize):
    def loss_fn(p):
        cond = None
        if conditioned:
            table = jnp.concatenate([frozen, p["emb"][None]], axis=0)
            cond = table[task_idx]
        return dyn.batch_loss(model, p["theta"], demos, cfg, cond)

    loss, grads = jax.value_and_grad(loss_fn)(params)
    task_grad = grads["theta"]
    if regularize:
        grads = dict(grads, theta=task_grad + jax.grad(direct_reg_penalty)(params["theta"], omega, theta_star, c))
    updates, new_state = opt.update(grads, opt_state, params)
    return optax.apply_updates(params, updates), new_state, loss, task_grad


@dataclass
class TaskStats:
    iterations: int = 0
    diverged_steps: int = 0
    final_loss: float = math.nan


class DirectLearner:
    """SG, FT, REP, SI and MAS: the learner's own parameters are trained."""

    def __init__(self, cfg: MethodConfig, dim: int, seed: int):
        self.cfg = cfg
        self.conditioned = cfg.method in CONDITIONED
        self.cond_dim = cfg.task_emb_dim if self.conditioned else 0
        self.model = cfg.build_model(dim, self.cond_dim)
        self.train_cfg = dyn.IntegratorConfig.for_points(cfg.train_points, scheme=cfg.scheme)
        self.key = jax.random.PRNGKey(seed)
        self.rng = np.random.default_rng(seed)
        self.opt = optax.adam(cfg.lr)
        self.theta = np.asarray(self.model.init_params(jax.random.fold_in(self.key, 0)))
        self.sg_params: list[np.ndarray] = []
        self.embeddings: list[np.ndarray] = []
        self.reg = DirectRegState.zeros(self.theta)
        self.replay: list[np.ndarray] = []
        self.replay_raw_bytes = 0
        self.lookups: Counter = Counter()
        self.steps_per_task: list[int] = []
        self._compiled = {}

    @property
    def regularize(self) -> bool:
        return self.cfg.method in ("SI", "MAS") and self.cfg.reg_constant > 0

    def begin_task(self, m: int) -> None:
        if self.cfg.method == "SG":
            self.theta = np.asarray(self.model.init_params(jax.random.fold_in(self.key, m)))
        if self.conditioned:
            w = EMBEDDING_INIT_WIDTH / 2
            k = jax.random.fold_in(jax.random.fold_in(self.key, 10_000), m)
            self.embeddings.append(np.asarray(jax.random.uniform(k, (self.cond_dim,), minval=-w, maxval=w)))
        self.reg.theta_start = self.theta.copy()

    def _params(self) -> dict:
        p = {"theta": jnp.asarray(self.theta)}
        if self.conditioned:
            p["emb"] = jnp.asarray(self.embeddings[-1])
        return p

    def _batch(self, m: int, train: np.ndarray):
        if self.cfg.method != "REP" or not self.replay:
            return train, np.full(len(train), m)
        pool = self.replay + [train]
        sizes = [len(p) for p in pool]
        flat = self.rng.integers(0, sum(sizes), size=len(train))
        owner = np.searchsorted(np.cumsum(sizes), flat, side="right")
        starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        demos = np.stack([pool[o][f - starts[o]] for o, f in zip(owner, flat)])
        return demos, owner

    def _frozen(self):
        if not self.conditioned:
            return jnp.zeros((0, 1))
        past = self.embeddings[:-1]
        return jnp.asarray(np.stack(past)) if past else jnp.zeros((0, self.cond_dim))

    def _static(self):
        return dict(model=self.model, cfg=self.train_cfg, opt=self.opt,
                    conditioned=self.conditioned, regularize=self.regularize)

    def _args(self, demos, owner, opt_state):
        return (self._params(), opt_state, jnp.asarray(demos), jnp.asarray(owner), self._frozen(),
                jnp.asarray(self.reg.omega), jnp.asarray(self.reg.theta_star),
                jnp.asarray(self.cfg.reg_constant, dtype=jnp.float64))

    def compile(self, m: int, train: np.ndarray) -> None:
        opt_state = self.opt.init(self._params())
        demos, owner = self._batch(m, train)
        key = (len(self.embeddings), demos.shape)
        if key not in self._compiled:
            self._compiled[key] = _direct_step.lower(*self._args(demos, owner, opt_state), **self._static()).compile()

    def train(self, m: int, train: np.ndarray) -> TaskStats:
        stats = TaskStats()
        opt_state = self.opt.init(self._params())
        for _ in range(self.cfg.iterations):
            demos, owner = self._batch(m, train)
            fn = self._compiled.get((len(self.embeddings), demos.shape)) or partial(_direct_step, **self._static())
            new, new_state, loss, task_grad = fn(*self._args(demos, owner, opt_state))
            loss = float(loss)
            new_theta = np.asarray(new["theta"])
            if not (np.isfinite(loss) and np.all(np.isfinite(new_theta))):
                stats.diverged_steps += 1
                log.warning("%s step diverged on task %d; update discarded, optimizer reset", self.cfg.method, m)
                opt_state = self.opt.init(self._params())
                continue
            if self.cfg.method == "SI":
                self.reg = si_update(self.reg, np.asarray(task_grad), new_theta - self.theta)
            self.theta = new_theta
            if self.conditioned:
                self.embeddings[-1] = np.asarray(new["emb"])
            opt_state = new_state
            stats.iterations += 1
            stats.final_loss = loss
        self.steps_per_task.append(stats.iterations + stats.diverged_steps)
        return stats

    def end_task(self, m: int, train: np.ndarray, raw_nbytes: int) -> None:
        if self.cfg.method == "SG":
            self.sg_params.append(self.theta.copy())
        elif self.cfg.method == "SI":
            self.reg = si_consolidate(self.reg, self.theta, self.cfg.si_xi)
        elif self.cfg.method == "MAS":
            cond = self.embeddings[m] if self.conditioned else None
            fn, inputs = _velocity_samples(self.model, self.theta, train, cond)
            self.reg = mas_update(self.reg, fn, self.theta, inputs)
        elif self.cfg.method == "REP":
            self.replay.append(np.array(train))
            self.replay_raw_bytes += raw_nbytes

    def params_for(self, task: int):
        self.lookups[task] += 1
        if self.cfg.method == "SG":
            return self.sg_params[task], None
        if not 0 <= task < len(self.embeddings):
            raise ContractError(f"unknown task index {task}")
        return self.theta, self.embeddings[task]

    def param_count(self, m: int) -> int:
        if self.cfg.method == "SG":
            return (m + 1) * self.model.n_params
        return self.model.n_params + (m + 1) * self.cond_dim

    @property
    def stored_bytes(self) -> int:
        return self.replay_raw_bytes

    def arrays(self) -> dict[str, np.ndarray]:
        out = {"theta": self.theta}
        if self.sg_params:
            out["sg_params"] = np.stack(self.sg_params)
        if self.embeddings:
            out["embeddings"] = np.stack(self.embeddings)
        if self.cfg.method in ("SI", "MAS"):
            out["omega"] = self.reg.omega
            out["theta_star"] = self.reg.theta_star
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.theta = np.asarray(arrays["theta"])
        if "sg_params" in arrays:
            self.sg_params = list(np.asarray(arrays["sg_params"]))
        if "embeddings" in arrays:
            self.embeddings = list(np.asarray(arrays["embeddings"]))
        if "omega" in arrays:
            self.reg = DirectRegState(np.asarray(arrays["omega"]), np.asarray(arrays["theta_star"]),
                                      np.zeros_like(self.theta), self.theta.copy())


class HypernetLearner:
    """HN and CHN: learner parameters come from a hypernetwork."""

    def __init__(self, cfg: MethodConfig, dim: int, seed: int):
        self.cfg = cfg
        self.model = cfg.build_model(dim)
        self.train_cfg = dyn.IntegratorConfig.for_points(cfg.train_points, scheme=cfg.scheme)
        self.spec = hn.HypernetSpec.for_model(
            self.model, hidden=cfg.hn_hidden, task_emb_dim=cfg.task_emb_dim,
            mode="chunked" if cfg.method == "CHN" else "full",
            chunk_size=cfg.chunk_size, chunk_emb_dim=cfg.chunk_emb_dim)
        self.key = jax.random.PRNGKey(seed)
        state = hn.init_state(self.spec, jax.random.fold_in(self.key, 0), cfg.hn_out_scale)
        self.trainer = hn.HypernetTrainer(state, self.model, self.train_cfg, cfg.strategy, cfg.lr,
                                          cfg.lookahead, seed)
        self.lookups: Counter = Counter()
        self.steps_per_task: list[int] = []

    @property
    def state(self) -> hn.HypernetState:
        return self.trainer.state

    def begin_task(self, m: int) -> None:
        self.trainer.begin_task(jax.random.fold_in(jax.random.fold_in(self.key, 20_000), m))

    def compile(self, m: int, train: np.ndarray) -> None:
        self.trainer.compile(jnp.asarray(train))

    def train(self, m: int, train: np.ndarray) -> TaskStats:
        s = self.trainer.train(jnp.asarray(train), self.cfg.iterations)
        self.steps_per_task.append(s.iterations + s.diverged_steps)
        return TaskStats(s.iterations, s.diverged_steps, s.last_loss)

    def end_task(self, m: int, train: np.ndarray, raw_nbytes: int) -> None:
        pass

    def params_for(self, task: int):
        self.lookups[task] += 1
        if not 0 <= task < len(self.state.task_embs):
            raise ContractError(f"unknown task index {task}")
        return np.asarray(self.state.params_for(task)), None

    def param_count(self, m: int) -> int:
        return self.spec.n_trainable_shared + (m + 1) * self.spec.task_emb_dim

    @property
    def stored_bytes(self) -> int:
        return 0

    def arrays(self) -> dict[str, np.ndarray]:
        return hn.state_arrays(self.state)

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.trainer.state = hn.state_from_arrays(self.spec, arrays)


def make_learner(cfg: MethodConfig, dim: int, seed: int):
    return HypernetLearner(cfg, dim, seed) if cfg.method in ("HN", "CHN") else DirectLearner(cfg, dim, seed)


# ---------------------------------------------------------------- evaluation


def predict_task(learner, task: int, starts, n_points: int, t0: float = 0.0) -> np.ndarray:
    """Roll out the learner for ``task`` from normalized ``starts`` over ``n_points`` steps of the eval grid."""
    params, cond = learner.params_for(task)
    cfg = dyn.IntegratorConfig(n_points - 1, 1.0 / (n_points - 1), learner.cfg.scheme)
    return dyn.predict(learner.model, params, np.atleast_2d(starts), cfg, cond, t0)


def predict_on_grid(learner, task: int, starts, n_points: int, grid_points: int) -> np.ndarray:
    """Rollout with the step of a ``grid_points`` demo, for ``n_points`` (possibly more) steps."""
    params, cond = learner.params_for(task)
    cfg = dyn.IntegratorConfig(n_points - 1, 1.0 / (grid_points - 1), learner.cfg.scheme)
    return dyn.predict(learner.model, params, np.atleast_2d(starts), cfg, cond)


def evaluate_task(learner, task: int, raw: np.ndarray, kind: str, tangent_scale: float) -> list[dict]:
    """Errors for every demo of ``task`` rolled out from its ground-truth start at full resolution."""
    x, info = normalize_demos(raw, kind, tangent_scale)
    pred = predict_task(learner, task, x[:, 0], raw.shape[1])
    out = []
    finite = np.all(np.isfinite(pred.reshape(len(pred), -1)), axis=1)
    for k in range(len(raw)):
        if not finite[k]:
            out.append({"demo": k, "dtw": math.inf, "quat_err": math.inf if kind == "pose" else None,
                        "diverged": True})
            continue
        back = denormalize(pred[k:k + 1], info, demo=k)[0]
        if kind == "pose":
            rec = {"dtw": dtw(back[:, :3], raw[k, :, :3]),
                   "quat_err": trajectory_quat_error(raw[k, :, 3:], back[:, 3:])}
        else:
            rec = {"dtw": dtw(back, raw[k]), "quat_err": None}
        out.append({"demo": k, **rec, "diverged": False})
    return out


# ---------------------------------------------------------------- run log


@dataclass
class RunLog:
    """JSON-lines records, one per (seed, method, learner, train task, eval task, demo)."""

    records: list[dict] = field(default_factory=list)

    FIELDS = ("seed", "method", "learner", "train_task", "eval_task", "demo", "dtw", "quat_err",
              "wall_time_s", "param_count", "stored_sample_bytes", "dataset_bytes", "diverged",
              "diverged_steps", "iterations")

    def append(self, rec: dict) -> None:
        self.records.append(rec)

    def extend(self, recs) -> None:
        self.records.extend(recs)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")

    def append_to(self, path, recs) -> None:
        with open(path, "a") as fh:
            for r in recs:
                fh.write(json.dumps(r, sort_keys=True) + "\n")

    @classmethod
    def read(cls, *paths) -> RunLog:
        out = cls()
        for path in paths:
            with open(path) as fh:
                for n, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    try:
                        out.records.append(json.loads(line))
                    except json.JSONDecodeError as exc:
                        raise ContractError(f"{path}, line {n}: {exc}") from None
        return out

    def runs(self) -> dict[tuple, list[dict]]:
        """Records grouped by (method, learner, seed)."""
        groups: dict[tuple, list[dict]] = {}
        for r in self.records:
            groups.setdefault((r["method"], r["learner"], r["seed"]), []).append(r)
        return groups

    def n_tasks(self, run: list[dict]) -> int:
        return 1 + max(r["train_task"] for r in run)


def per_task(run: list[dict], key: str) -> list:
    """One value of ``key`` per train task (taken from its first record)."""
    seen = {}
    for r in run:
        seen.setdefault(r["train_task"], r[key])
    return [seen[i] for i in sorted(seen)]


# ---------------------------------------------------------------- protocol


@dataclass
class SequenceResult:
    log: RunLog
    learner: object
    wall_times: list[float]
    stats: list[TaskStats]


def train_sequence(dataset: TaskDataset, cfg: MethodConfig, seed: int = 0,
                   tracked: TrackedDataset | None = None,
                   on_task_end: Callable | None = None) -> SequenceResult:
    """Train tasks in order; after each, evaluate every task learned so far.

    Demonstrations are read only through ``tracked`` so isolation can be audited:
    training task ``m`` reads task ``m`` only; evaluation after task ``m`` reads
    tasks ``0..m``.  ``on_task_end(m, learner, records)`` runs after each evaluation.
    """
    tracked = tracked or TrackedDataset(dataset)
    if len(dataset) < 1:
        raise ContractError("dataset is empty")
    learner = make_learner(cfg, dataset.model_dim, seed)
    log_ = RunLog()
    times, all_stats = [], []
    base = {"seed": seed, "method": cfg.method, "learner": cfg.learner, "dataset_bytes": dataset.nbytes}
    for m in range(len(dataset)):
        with tracked.phase(f"train:{m}"):
            raw = tracked.demos(m)
            x, _ = normalize_demos(raw, dataset.kind, cfg.tangent_scale)
            train = subsample(x, cfg.train_points)
            if train.shape[1] != cfg.train_points:
                raise ContractError(f"task {m} has only {raw.shape[1]} points, fewer than train_points")
            learner.begin_task(m)
            learner.compile(m, train)
            start = time.perf_counter()
            stats = learner.train(m, train)
            wall = time.perf_counter() - start
            learner.end_task(m, train, raw.nbytes)
        times.append(wall)
        all_stats.append(stats)
        if stats.diverged_steps:
            log.warning("%s/%s task %d: %d divergent steps", cfg.method, cfg.learner, m, stats.diverged_steps)
        recs = []
        with tracked.phase(f"eval:{m}"):
            for j in range(m + 1):
                for r in evaluate_task(learner, j, tracked.demos(j), dataset.kind, cfg.tangent_scale):
                    recs.append({**base, "train_task": m, "eval_task": j, **r, "wall_time_s": wall,
                                 "param_count": learner.param_count(m),
                                 "stored_sample_bytes": learner.stored_bytes,
                                 "diverged_steps": stats.diverged_steps, "iterations": stats.iterations})
        log_.extend(recs)
        if on_task_end is not None:
            on_task_end(m, learner, recs)
    return SequenceResult(log_, learner, times, all_stats)


def rollout_fn(learner, task: int, raw: np.ndarray, kind: str, tangent_scale: float, demo: int = 0):
    """Rollout callable in dataset units for the stability probes (euclidean tasks).

    The returned ``f(starts, n_points)`` integrates on the demo's own time grid,
    so ``n_points`` beyond the demo length extends the horizon past ``t = 1``.
    """
    if kind != "euclidean":
        raise ContractError("dataset-unit rollouts need a euclidean task")
    _, info = normalize_demos(raw, kind, tangent_scale)
    T = raw.shape[1]

    def f(starts, n_points):
        starts = np.atleast_2d(starts)
        norm = (starts - info.goals[demo]) / info.scale
        pred = predict_on_grid(learner, task, norm, n_points, T)
        return denormalize(pred, info, demo=demo)

    return f
