"""Hypernetworks that emit learner parameters from task embeddings.

A *full* hypernetwork maps a task embedding straight to the learner's flat
parameter vector.  A *chunked* one runs a shared MLP on
``[task_embedding, chunk_embedding_i]`` for every chunk ``i``, concatenates the
outputs and drops the tail beyond the learner's parameter count.

Forgetting is controlled by an output regularizer: after each task the
generated parameters for every past embedding are recorded, and later training
penalizes drift of those outputs.  Drift is measured at a lookahead point
``h + dh`` where ``dh`` is the optimizer's proposed step from the task loss
alone, held constant.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import partial

import jax
import jax.numpy as jnp
import numpy as np
import optax

from stablelfd import dynamics as dyn
from stablelfd.dynamics import ContractError, MlpSpec

log = logging.getLogger(__name__)

MODES = ("full", "chunked")
EMBEDDING_INIT_WIDTH = 0.1


@dataclass(frozen=True)
class HypernetSpec:
    target_size: int
    hidden: tuple[int, ...] = (64, 64)
    task_emb_dim: int = 32
    mode: str = "chunked"
    chunk_size: int = 512
    chunk_emb_dim: int = 32
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))
        if self.mode not in MODES:
            raise ContractError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.target_size < 1 or self.task_emb_dim < 1:
            raise ContractError("target_size and task_emb_dim must be positive")
        if self.mode == "chunked" and (self.chunk_size < 1 or self.chunk_emb_dim < 1):
            raise ContractError("chunk_size and chunk_emb_dim must be positive")

    @classmethod
    def for_model(cls, model, **kwargs) -> HypernetSpec:
        return cls(model.n_params, **kwargs)

    @property
    def chunked(self) -> bool:
        return self.mode == "chunked"

    @property
    def n_chunks(self) -> int:
        return math.ceil(self.target_size / self.chunk_size) if self.chunked else 0

    @property
    def out_width(self) -> int:
        return self.chunk_size if self.chunked else self.target_size

    @property
    def mlp(self) -> MlpSpec:
        d_in = self.task_emb_dim + (self.chunk_emb_dim if self.chunked else 0)
        return MlpSpec((d_in, *self.hidden, self.out_width), self.activation)

    @property
    def n_params(self) -> int:
        return self.mlp.n_params

    @property
    def n_trainable_shared(self) -> int:
        """Hypernetwork weights plus chunk embeddings."""
        return self.n_params + self.n_chunks * self.chunk_emb_dim


def generate(spec: HypernetSpec, h, e, chunk_embs=None):
    """Traceable generation of the flat target parameters."""
    e = jnp.asarray(e)
    if e.shape != (spec.task_emb_dim,):
        raise ContractError(f"task embedding must have shape ({spec.task_emb_dim},), got {e.shape}")
    if not spec.chunked:
        return dyn.mlp_forward(spec.mlp, h, e)
    if chunk_embs is None or chunk_embs.shape != (spec.n_chunks, spec.chunk_emb_dim):
        raise ContractError(f"chunk embeddings must have shape ({spec.n_chunks}, {spec.chunk_emb_dim})")
    inp = jnp.concatenate([jnp.broadcast_to(e, (spec.n_chunks, e.shape[0])), chunk_embs], axis=1)
    return dyn.mlp_forward(spec.mlp, h, inp).reshape(-1)[:spec.target_size]


@dataclass(frozen=True)
class RegStrategy:
    """Which past embeddings enter the regularizer at each step.

    ``all`` uses every past task, ``subset`` draws ``min(k_size, m)`` distinct
    ones, ``single`` draws one.  The penalty is ``beta`` times the mean
    squared drift over the drawn tasks.
    """

    kind: str = "single"
    beta: float = 5e-3
    k_size: int = 3

    def __post_init__(self):
        if self.kind not in ("all", "subset", "single"):
            raise ContractError(f"unknown regularization strategy {self.kind!r}")
        if self.beta < 0:
            raise ContractError("beta must be nonnegative")
        if self.k_size < 1:
            raise ContractError("subset size must be at least 1")

    @classmethod
    def parse(cls, text: str, beta: float = 5e-3) -> RegStrategy:
        """``all`` | ``single`` | ``subset:K``."""
        kind, _, k = text.partition(":")
        if kind == "subset":
            if not k.isdigit():
                raise ContractError(f"subset strategy needs a size, e.g. 'subset:3', got {text!r}")
            return cls("subset", beta, int(k))
        if k:
            raise ContractError(f"strategy {kind!r} takes no argument")
        return cls(kind, beta)

    def __str__(self) -> str:
        return f"subset:{self.k_size}" if self.kind == "subset" else self.kind

    def n_drawn(self, m: int) -> int:
        if m == 0:
            return 0
        return {"all": m, "single": 1, "subset": min(self.k_size, m)}[self.kind]

    def sample(self, m: int, rng: np.random.Generator) -> np.ndarray:
        """Indices of past tasks (out of ``m``) to regularize this step."""
        if m == 0:
            return np.zeros(0, dtype=np.int64)
        if self.kind == "all":
            return np.arange(m)
        if self.kind == "single":
            return rng.integers(0, m, size=1)
        if m <= self.k_size:
            return np.arange(m)
        return np.sort(rng.choice(m, size=self.k_size, replace=False))


@dataclass
class HypernetState:
    """Hypernetwork weights, task embeddings and the frozen pre-task snapshot.

    ``targets[l]`` is the snapshot's output for embedding ``l``; it is fixed at
    :func:`begin_task` and covers every task before the current one.
    """

    spec: HypernetSpec
    h: jax.Array
    task_embs: list = field(default_factory=list)
    chunk_embs: jax.Array | None = None
    snapshot_h: jax.Array | None = None
    snapshot_chunk: jax.Array | None = None
    targets: jax.Array | None = None

    @property
    def m(self) -> int:
        """Index of the current (trainable) task."""
        if not self.task_embs:
            raise ContractError("no task started; call begin_task first")
        return len(self.task_embs) - 1

    @property
    def current_embedding(self) -> jax.Array:
        return self.task_embs[self.m]

    @property
    def past_embeddings(self) -> jax.Array:
        return jnp.stack(self.task_embs[:self.m]) if self.m else jnp.zeros((0, self.spec.task_emb_dim))

    def params_for(self, task: int) -> jax.Array:
        return generate(self.spec, self.h, self.task_embs[task], self.chunk_embs)


def init_state(spec: HypernetSpec, key, out_scale: float = 1.0) -> HypernetState:
    """Fan-in uniform init; ``out_scale`` shrinks the output layer."""
    k_h, k_c = jax.random.split(key)
    h = dyn.init_mlp(k_h, spec.mlp)
    if out_scale != 1.0:
        last = spec.mlp.layer_widths[-2] * spec.out_width + spec.out_width
        h = h.at[-last:].multiply(out_scale)
    chunk = None
    if spec.chunked:
        w = EMBEDDING_INIT_WIDTH / 2
        chunk = jax.random.uniform(k_c, (spec.n_chunks, spec.chunk_emb_dim), minval=-w, maxval=w)
    return HypernetState(spec, h, [], chunk)


def hn_forward(state: HypernetState, e) -> jax.Array:
    if state.spec.chunked:
        raise ContractError("hn_forward needs a full-mode hypernetwork")
    return generate(state.spec, state.h, e)


def chn_forward(state: HypernetState, e) -> jax.Array:
    if not state.spec.chunked:
        raise ContractError("chn_forward needs a chunked hypernetwork")
    return generate(state.spec, state.h, e, state.chunk_embs)


def begin_task(state: HypernetState, key) -> HypernetState:
    """Freeze the current embedding, snapshot shared weights, add a fresh embedding."""
    embs = list(state.task_embs)
    snap_h = state.h
    snap_c = state.chunk_embs
    if embs:
        targets = jax.vmap(lambda e: generate(state.spec, snap_h, e, snap_c))(jnp.stack(embs))
    else:
        targets = jnp.zeros((0, state.spec.target_size))
    w = EMBEDDING_INIT_WIDTH / 2
    embs.append(jax.random.uniform(key, (state.spec.task_emb_dim,), minval=-w, maxval=w))
    return replace(state, task_embs=embs, snapshot_h=snap_h, snapshot_chunk=snap_c, targets=targets)


# ---------------------------------------------------------------- losses


def _task_loss(spec, model, cfg, h, e, chunk, demos):
    return dyn.batch_loss(model, generate(spec, h, e, chunk), demos, cfg)


def _reg_mean(spec, h, chunk, embs, targets):
    """Mean over drawn tasks of ``|target_l - f(e_l, h)|^2``."""
    gen = jax.vmap(lambda e: generate(spec, h, e, chunk))(embs)
    return jnp.mean(jnp.sum((targets - gen) ** 2, axis=1))


def task_loss(state: HypernetState, e, demos, model, cfg: dyn.IntegratorConfig) -> float:
    return float(_task_loss(state.spec, model, cfg, state.h, jnp.asarray(e), state.chunk_embs,
                            jnp.asarray(demos)))


def reg_term(state: HypernetState, task: int, h=None, chunk_embs=None) -> float:
    """Squared drift of past task ``task``'s generated parameters, evaluated at ``h``."""
    if state.targets is None or state.m == 0:
        raise ContractError("no past tasks to regularize")
    if not 0 <= task < state.m:
        raise ContractError(f"task {task} is not a past task (m={state.m})")
    h = state.h if h is None else h
    chunk = state.chunk_embs if chunk_embs is None else chunk_embs
    gen = generate(state.spec, h, state.task_embs[task], chunk)
    return float(jnp.sum((state.targets[task] - gen) ** 2))


def regularizer(state: HypernetState, indices, h=None, chunk_embs=None) -> float:
    """``mean_l reg_term(l)`` over ``indices`` (without beta)."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        return 0.0
    h = state.h if h is None else h
    chunk = state.chunk_embs if chunk_embs is None else chunk_embs
    embs = jnp.stack([state.task_embs[i] for i in indices])
    return float(_reg_mean(state.spec, h, chunk, embs, state.targets[indices]))


def composite_loss(state: HypernetState, demos, model, cfg, strategy: RegStrategy,
                   rng: np.random.Generator, h=None, chunk_embs=None) -> float:
    """Task loss plus ``beta`` times the strategy's mean drift."""
    loss = task_loss(state, state.current_embedding, demos, model, cfg)
    idx = strategy.sample(state.m, rng)
    if idx.size == 0 or strategy.beta == 0:
        return loss
    return loss + strategy.beta * regularizer(state, idx, h, chunk_embs)


# ---------------------------------------------------------------- two-step update


def _trainable(state: HypernetState) -> dict:
    out = {"h": state.h, "e": state.current_embedding}
    if state.spec.chunked:
        out["c"] = state.chunk_embs
    return out


@partial(jax.jit, static_argnames=("spec", "model", "cfg", "opt", "lookahead", "regularize"))
def _two_step(params, opt_state, demos, embs, targets, beta, weight, *, spec, model, cfg, opt,
              lookahead, regularize):
    def loss_fn(p):
        return weight * _task_loss(spec, model, cfg, p["h"], p["e"], p.get("c"), demos)

    loss, grads = jax.value_and_grad(loss_fn)(params)
    reg = jnp.zeros(())
    if regularize:
        if lookahead:
            step, _ = opt.update(grads, opt_state, params)
            look = jax.lax.stop_gradient(optax.apply_updates(params, step))
        else:
            look = params
        # d/dh reg(h + dh) with dh held constant equals the gradient at the lookahead point
        shared = {k: v for k, v in look.items() if k != "e"}
        reg, reg_grads = jax.value_and_grad(
            lambda s: _reg_mean(spec, s["h"], s.get("c"), embs, targets))(shared)
        grads = {k: g + beta * reg_grads[k] if k in reg_grads else g for k, g in grads.items()}
    updates, new_opt_state = opt.update(grads, opt_state, params)
    new_params = optax.apply_updates(params, updates)
    finite = jnp.isfinite(loss) & jnp.all(jnp.stack([jnp.all(jnp.isfinite(v)) for v in new_params.values()]))
    return new_params, new_opt_state, loss, reg, finite


@dataclass
class StepStats:
    iterations: int = 0
    diverged_steps: int = 0
    last_loss: float = math.nan
    last_reg: float = 0.0
    losses: list = field(default_factory=list)


class HypernetTrainer:
    """Runs two-step updates for one hypernetwork and learner.

    The optimizer state is kept across calls and reset on divergence.
    """

    def __init__(self, state: HypernetState, model, cfg: dyn.IntegratorConfig, strategy: RegStrategy,
                 lr: float = 1e-3, lookahead: bool = True, seed: int = 0):
        # ``loss_weight`` multiplies the task loss; set it to scale**2 to express a
        # normalized-frame loss in dataset units
        self.loss_weight = 1.0
        if state.spec.target_size != model.n_params:
            raise ContractError(f"hypernetwork emits {state.spec.target_size} values, "
                                f"learner needs {model.n_params}")
        self.state = state
        self.model = model
        self.cfg = cfg
        self.strategy = strategy
        self.lookahead = lookahead
        self.opt = optax.adam(lr)
        self.rng = np.random.default_rng(seed)
        self.opt_state = None
        self._compiled = {}

    def _static(self, regularize: bool) -> dict:
        return dict(spec=self.state.spec, model=self.model, cfg=self.cfg, opt=self.opt,
                    lookahead=self.lookahead, regularize=regularize)

    def _scalars(self):
        return (jnp.asarray(self.strategy.beta, dtype=jnp.float64),
                jnp.asarray(self.loss_weight, dtype=jnp.float64))

    def _draw(self):
        m = self.state.m
        idx = self.strategy.sample(m, self.rng)
        if idx.size == 0 or self.strategy.beta == 0:
            dummy_e = jnp.zeros((1, self.state.spec.task_emb_dim))
            return False, dummy_e, jnp.zeros((1, self.state.spec.target_size))
        embs = self.state.past_embeddings[idx]
        return True, embs, self.state.targets[idx]

    def compile(self, demos) -> None:
        """Compile the step for the current task's shapes; keeps compilation out of timed loops."""
        params = _trainable(self.state)
        if self.opt_state is None:
            self.opt_state = self.opt.init(params)
        regularize, embs, targets = self._draw()
        key = (regularize, embs.shape, jnp.shape(demos))
        if key not in self._compiled:
            lowered = _two_step.lower(params, self.opt_state, jnp.asarray(demos), embs, targets,
                                      *self._scalars(), **self._static(regularize))
            self._compiled[key] = lowered.compile()

    def begin_task(self, key) -> None:
        self.state = begin_task(self.state, key)
        # a fresh embedding is a new leaf; optimizer moments restart
        self.opt_state = self.opt.init(_trainable(self.state))

    def step(self, demos) -> tuple[float, float]:
        """One two-step update on ``demos``.  Returns (task loss, drift)."""
        demos = jnp.asarray(demos)
        params = _trainable(self.state)
        if self.opt_state is None:
            self.opt_state = self.opt.init(params)
        regularize, embs, targets = self._draw()
        key = (regularize, embs.shape, demos.shape)
        fn = self._compiled.get(key)
        if fn is None:
            fn = partial(_two_step, **self._static(regularize))
        new_params, new_opt, loss, reg, finite = fn(params, self.opt_state, demos, embs, targets, *self._scalars())
        loss = float(loss)
        if not bool(finite):
            raise dyn.DivergenceError(self.cfg.n_steps, "non-finite loss or parameters in hypernetwork step")
        self._apply(new_params)
        self.opt_state = new_opt
        return loss, float(reg)

    def _apply(self, params: dict) -> None:
        embs = list(self.state.task_embs)
        embs[-1] = params["e"]
        self.state = replace(self.state, h=params["h"], task_embs=embs,
                             chunk_embs=params.get("c", self.state.chunk_embs))

    def reset_optimizer(self) -> None:
        self.opt_state = self.opt.init(_trainable(self.state))

    def train(self, demos, iterations: int, stats: StepStats | None = None) -> StepStats:
        """Run ``iterations`` steps; a divergent step is discarded and the optimizer reset."""
        stats = stats or StepStats()
        for _ in range(iterations):
            try:
                loss, reg = self.step(demos)
            except dyn.DivergenceError:
                stats.diverged_steps += 1
                log.warning("hypernetwork step diverged on task %d; update discarded, optimizer reset",
                            self.state.m)
                self.reset_optimizer()
                continue
            stats.iterations += 1
            stats.last_loss, stats.last_reg = loss, reg
            stats.losses.append(loss)
        return stats


def two_step_update(trainer: HypernetTrainer, demos) -> HypernetState:
    """Single update through ``trainer``; returns the new state."""
    trainer.step(demos)
    return trainer.state


# ---------------------------------------------------------------- serialization


def state_arrays(state: HypernetState) -> dict[str, np.ndarray]:
    out = {"h": np.asarray(state.h), "task_embs": np.asarray(jnp.stack(state.task_embs))
           if state.task_embs else np.zeros((0, state.spec.task_emb_dim))}
    if state.chunk_embs is not None:
        out["chunk_embs"] = np.asarray(state.chunk_embs)
    return out


def state_from_arrays(spec: HypernetSpec, arrays: dict[str, np.ndarray]) -> HypernetState:
    h = jnp.asarray(arrays["h"])
    if h.shape != (spec.n_params,):
        raise ContractError(f"hypernetwork weights have shape {h.shape}, spec needs ({spec.n_params},)")
    embs = [jnp.asarray(e) for e in arrays["task_embs"]]
    chunk = jnp.asarray(arrays["chunk_embs"]) if "chunk_embs" in arrays else None
    if spec.chunked and (chunk is None or chunk.shape != (spec.n_chunks, spec.chunk_emb_dim)):
        raise ContractError("chunk embeddings missing or misshapen")
    return HypernetState(spec, h, embs, chunk)


def spec_dict(spec: HypernetSpec) -> dict:
    return {"target_size": spec.target_size, "hidden": list(spec.hidden), "task_emb_dim": spec.task_emb_dim,
            "mode": spec.mode, "chunk_size": spec.chunk_size, "chunk_emb_dim": spec.chunk_emb_dim,
            "activation": spec.activation}
