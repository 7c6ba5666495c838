"""Neural ODE learners: a plain time-input NODE and the Lyapunov-projected stable NODE.

Every learner keeps its parameters in one flat float64 vector.  The layout is
canonical: the nominal-dynamics MLP layers in order (weights row-major, then
bias) followed by the ICNN layers in order.  Keeping parameters flat lets a
hypernetwork emit them directly.

The stable field works on the time-augmented state ``[x, t]``.  The nominal
network predicts ``dx/dt``, a constant ``dt/dt = 1`` is appended, and the
augmented vector is projected so the learned Lyapunov function cannot increase.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property, partial
from typing import Callable, NamedTuple, Sequence

import jax
import jax.numpy as jnp
import numpy as np

log = logging.getLogger(__name__)


class ContractError(ValueError):
    """Raised when an argument violates a documented shape or domain contract."""


class DivergenceError(RuntimeError):
    """An integration produced a non-finite state."""

    def __init__(self, step: int, message: str | None = None):
        self.step = int(step)
        super().__init__(message or f"non-finite state at integration step {self.step}")


def _softplus_inv(y: float) -> float:
    return math.log(math.expm1(y))


_ACTIVATIONS: dict[str, Callable] = {
    "softplus": jax.nn.softplus,
    "tanh": jnp.tanh,
    "elu": jax.nn.elu,
    "relu": jax.nn.relu,
}

# derivatives for the activations the ICNN may use (convex, nondecreasing)
_CONVEX_DERIVATIVES: dict[str, Callable] = {
    "softplus": jax.nn.sigmoid,
}


@dataclass(frozen=True)
class MlpSpec:
    """Fully connected network; hidden layers use ``activation``, the last layer is affine."""

    layer_widths: tuple[int, ...]
    activation: str = "softplus"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2 or min(widths) < 1:
            raise ContractError(f"MLP needs at least two positive widths, got {widths}")
        if self.activation not in _ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "layer_widths", widths)

    @property
    def d_in(self) -> int:
        return self.layer_widths[0]

    @property
    def d_out(self) -> int:
        return self.layer_widths[-1]

    def layer_shapes(self) -> list[list[tuple[str, tuple[int, ...]]]]:
        w = self.layer_widths
        return [[("W", (o, i)), ("b", (o,))] for i, o in zip(w[:-1], w[1:])]

    @property
    def n_params(self) -> int:
        return sum(math.prod(s) for layer in self.layer_shapes() for _, s in layer)


@dataclass(frozen=True)
class IcnnSpec:
    """Input-convex network ``x -> g(x)``.

    Layer 0 is ``W x + b``; every later layer adds a z-path ``softplus(U) z``
    whose weights are stored unconstrained and made nonnegative at use time.
    """

    layer_widths: tuple[int, ...]
    activation: str = "softplus"
    positivity: str = "softplus"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2 or min(widths) < 1:
            raise ContractError(f"ICNN needs at least two positive widths, got {widths}")
        if widths[-1] != 1:
            raise ContractError("ICNN output width must be 1")
        if self.activation not in _CONVEX_DERIVATIVES:
            raise ContractError(f"ICNN activation must be convex and nondecreasing, got {self.activation!r}")
        if self.positivity != "softplus":
            raise ContractError(f"unsupported positivity mechanism {self.positivity!r}")
        object.__setattr__(self, "layer_widths", widths)

    @property
    def d_in(self) -> int:
        return self.layer_widths[0]

    def layer_shapes(self) -> list[list[tuple[str, tuple[int, ...]]]]:
        w = self.layer_widths
        n = w[0]
        shapes = []
        for k, o in enumerate(w[1:]):
            if k == 0:
                shapes.append([("W", (o, n)), ("b", (o,))])
            else:
                shapes.append([("U", (o, w[k])), ("W", (o, n)), ("b", (o,))])
        return shapes

    @property
    def n_params(self) -> int:
        return sum(math.prod(s) for layer in self.layer_shapes() for _, s in layer)


class LayoutEntry(NamedTuple):
    network: str
    layer: int
    kind: str
    shape: tuple[int, ...]
    offset: int

    @property
    def size(self) -> int:
        return math.prod(self.shape)


class ParamLayout:
    """Deterministic map from (network, layer, kind, row, col) to a flat index."""

    def __init__(self, networks: Sequence[tuple[str, MlpSpec | IcnnSpec]]):
        entries = []
        offset = 0
        self.bounds: dict[str, tuple[int, int]] = {}
        for name, spec in networks:
            start = offset
            for layer, kinds in enumerate(spec.layer_shapes()):
                for kind, shape in kinds:
                    entries.append(LayoutEntry(name, layer, kind, shape, offset))
                    offset += math.prod(shape)
            self.bounds[name] = (start, offset)
        self.entries: tuple[LayoutEntry, ...] = tuple(entries)
        self.size = offset

    def entry(self, network: str, layer: int, kind: str) -> LayoutEntry:
        for e in self.entries:
            if (e.network, e.layer, e.kind) == (network, layer, kind):
                return e
        raise KeyError((network, layer, kind))

    def index(self, network: str, layer: int, kind: str, row: int = 0, col: int = 0) -> int:
        e = self.entry(network, layer, kind)
        if len(e.shape) == 1:
            if col != 0 or not 0 <= row < e.shape[0]:
                raise IndexError((row, col))
            return e.offset + row
        if not (0 <= row < e.shape[0] and 0 <= col < e.shape[1]):
            raise IndexError((row, col))
        return e.offset + row * e.shape[1] + col

    def network_slice(self, network: str) -> slice:
        start, stop = self.bounds[network]
        return slice(start, stop)

    def unflatten(self, flat) -> dict[tuple[str, int, str], np.ndarray]:
        flat = np.asarray(flat)
        if flat.shape != (self.size,):
            raise ContractError(f"expected {self.size} parameters, got shape {flat.shape}")
        return {(e.network, e.layer, e.kind): flat[e.offset:e.offset + e.size].reshape(e.shape)
                for e in self.entries}


def _unpack(spec, params) -> list[dict[str, jax.Array]]:
    if params.shape != (spec.n_params,):
        raise ContractError(f"parameter slice has shape {params.shape}, spec needs ({spec.n_params},)")
    layers = []
    off = 0
    for kinds in spec.layer_shapes():
        d = {}
        for kind, shape in kinds:
            n = math.prod(shape)
            d[kind] = params[off:off + n].reshape(shape)
            off += n
        layers.append(d)
    return layers


def mlp_forward(spec: MlpSpec, params, x):
    """Evaluate the MLP on ``x`` of shape ``(..., d_in)``."""
    x = jnp.asarray(x)
    if x.shape[-1] != spec.d_in:
        raise ContractError(f"input width {x.shape[-1]} does not match spec width {spec.d_in}")
    act = _ACTIVATIONS[spec.activation]
    layers = _unpack(spec, jnp.asarray(params))
    h = x
    for k, layer in enumerate(layers):
        h = h @ layer["W"].T + layer["b"]
        if k < len(layers) - 1:
            h = act(h)
    return h


def icnn_value_and_input_grad(spec: IcnnSpec, params, x):
    """Raw ICNN output ``g(x)`` and its exact input gradient, back-propagated by hand.

    ``x`` has shape ``(..., d_in)``; returns ``g`` of shape ``(...)`` and ``dg/dx`` of shape ``(..., d_in)``.
    """
    x = jnp.asarray(x)
    if x.shape[-1] != spec.d_in:
        raise ContractError(f"input width {x.shape[-1]} does not match ICNN width {spec.d_in}")
    act = _ACTIVATIONS[spec.activation]
    dact = _CONVEX_DERIVATIVES[spec.activation]
    layers = _unpack(spec, jnp.asarray(params))
    pos = [jax.nn.softplus(layer["U"]) if "U" in layer else None for layer in layers]

    pre = []
    z = None
    for k, layer in enumerate(layers):
        a = x @ layer["W"].T + layer["b"]
        if k > 0:
            a = a + z @ pos[k].T
        if k < len(layers) - 1:
            pre.append(a)
            z = act(a)
        else:
            g = a[..., 0]

    out = layers[-1]
    dx = jnp.broadcast_to(out["W"][0], x.shape)
    if len(layers) > 1:
        dz = jnp.broadcast_to(pos[-1][0], x.shape[:-1] + pos[-1].shape[1:])
        for k in range(len(layers) - 2, -1, -1):
            da = dz * dact(pre[k])
            dx = dx + da @ layers[k]["W"]
            if k > 0:
                dz = da @ pos[k]
    return g, dx


def icnn_forward(spec: IcnnSpec, params, x):
    return icnn_value_and_input_grad(spec, params, x)[0]


def smooth_relu(z, width):
    """Quadratic near zero, linear beyond ``width``; zero for z <= 0, convex and nondecreasing."""
    return jnp.where(z <= 0, 0.0, jnp.where(z < width, z * z / (2 * width), z - width / 2))


def smooth_relu_grad(z, width):
    return jnp.clip(z / width, 0.0, 1.0)


_near_singular_logged = False


def reset_near_singular_log() -> None:
    global _near_singular_logged
    _near_singular_logged = False


def project_stable(f_hat, grad_v, v, alpha: float, grad_floor: float = 1e-8, alpha_in_relu: bool = False):
    """Remove the component of ``f_hat`` that would let ``V`` decrease slower than ``alpha * V``.

    Returns ``f_hat - grad_v * (relu(grad_v . f_hat) + alpha * v) / max(|grad_v|^2, grad_floor)``.
    With ``alpha_in_relu`` the correction is ``relu(grad_v . f_hat + alpha * v)`` instead.
    Works on a single vector or a batch along leading axes.
    """
    f_hat = jnp.asarray(f_hat)
    grad_v = jnp.asarray(grad_v)
    v = jnp.asarray(v)
    dot = jnp.sum(grad_v * f_hat, axis=-1)
    if alpha_in_relu:
        num = jax.nn.relu(dot + alpha * v)
    else:
        num = jax.nn.relu(dot) + alpha * v
    sq = jnp.sum(grad_v * grad_v, axis=-1)
    _maybe_log_near_singular(sq, num, grad_floor)
    return f_hat - grad_v * (num / jnp.maximum(sq, grad_floor))[..., None]


def _maybe_log_near_singular(sq, num, grad_floor):
    global _near_singular_logged
    if _near_singular_logged or isinstance(sq, jax.core.Tracer) or isinstance(num, jax.core.Tracer):
        return
    if bool(np.any((np.asarray(sq) < grad_floor) & (np.asarray(num) > 0))):
        log.warning("projection near singularity: |grad V|^2 < %g with active correction; correction capped",
                    grad_floor)
        _near_singular_logged = True


def _augment(x, t, cond, time_input: bool):
    parts = [x]
    if time_input:
        parts.append(jnp.broadcast_to(jnp.asarray(t, dtype=x.dtype), x.shape[:-1] + (1,)))
    if cond is not None:
        cond = jnp.asarray(cond, dtype=x.dtype)
        parts.append(jnp.broadcast_to(cond, x.shape[:-1] + cond.shape[-1:]))
    return jnp.concatenate(parts, axis=-1) if len(parts) > 1 else x


def _uniform_fan_in(key, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return jax.random.uniform(key, shape, minval=-bound, maxval=bound)


def init_mlp(key, spec: MlpSpec) -> jax.Array:
    chunks = []
    for kinds in spec.layer_shapes():
        fan_in = kinds[0][1][1]
        for kind, shape in kinds:
            key, sub = jax.random.split(key)
            chunks.append(_uniform_fan_in(sub, shape, fan_in).ravel())
    return jnp.concatenate(chunks)


def init_icnn(key, spec: IcnnSpec) -> jax.Array:
    chunks = []
    for k, kinds in enumerate(spec.layer_shapes()):
        fan_in = spec.d_in + (spec.layer_widths[k] if k > 0 else 0)
        for kind, shape in kinds:
            key, sub = jax.random.split(key)
            w = _uniform_fan_in(sub, shape, fan_in)
            if kind == "U":
                # softplus(U) starts near 1/width so the z-path neither vanishes nor explodes
                w = w + _softplus_inv(1.0 / shape[1])
            chunks.append(w.ravel())
    return jnp.concatenate(chunks)


@dataclass(frozen=True)
class Node:
    """Plain NODE: ``dx/dt = f([x, t, cond])`` with no stability projection."""

    spec: MlpSpec
    time_input: bool = True
    cond_dim: int = 0

    def __post_init__(self):
        if self.spec.d_in != self.dim + int(self.time_input) + self.cond_dim:
            raise ContractError("NODE input width must be state dim + time + conditioning width")

    @classmethod
    def build(cls, dim: int, hidden: Sequence[int] = (64, 64), time_input: bool = True,
              cond_dim: int = 0, activation: str = "softplus") -> Node:
        spec = MlpSpec((dim + int(time_input) + cond_dim, *hidden, dim), activation)
        return cls(spec, time_input, cond_dim)

    @property
    def kind(self) -> str:
        return "NODE"

    @property
    def dim(self) -> int:
        return self.spec.d_out

    @cached_property
    def layout(self) -> ParamLayout:
        return ParamLayout([("f", self.spec)])

    @property
    def n_params(self) -> int:
        return self.spec.n_params

    def init_params(self, key) -> jax.Array:
        return init_mlp(key, self.spec)

    def velocity(self, params, x, t, cond=None):
        return node_rhs(self, params, x, t, cond)


@dataclass(frozen=True)
class SNode:
    """Stable NODE: nominal dynamics MLP projected against an ICNN Lyapunov function.

    ``V(x) = smooth_relu(g(x) - g(0)) + lyap_eps * |x|^2`` on the augmented state.
    """

    f_spec: MlpSpec
    v_spec: IcnnSpec
    alpha: float = 0.0
    grad_floor: float = 1e-8
    lyap_eps: float = 1e-3
    relu_smooth: float = 0.1
    time_input: bool = True
    cond_dim: int = 0
    alpha_in_relu: bool = False
    project: bool = True

    def __post_init__(self):
        if self.alpha < 0:
            raise ContractError("alpha must be nonnegative")
        if self.grad_floor <= 0 or self.lyap_eps <= 0 or self.relu_smooth <= 0:
            raise ContractError("grad_floor, lyap_eps and relu_smooth must be positive")
        n_in = self.aug_dim + self.cond_dim
        if self.f_spec.d_in != n_in:
            raise ContractError(f"f input width {self.f_spec.d_in} != augmented width {n_in}")
        if self.v_spec.d_in != n_in:
            raise ContractError(f"V input width {self.v_spec.d_in} != augmented width {n_in}")

    @classmethod
    def build(cls, dim: int, f_hidden: Sequence[int] = (64, 64), v_hidden: Sequence[int] = (32, 32),
              time_input: bool = True, cond_dim: int = 0, **kwargs) -> SNode:
        n_in = dim + int(time_input) + cond_dim
        return cls(MlpSpec((n_in, *f_hidden, dim)), IcnnSpec((n_in, *v_hidden, 1)),
                   time_input=time_input, cond_dim=cond_dim, **kwargs)

    @property
    def kind(self) -> str:
        return "sNODE"

    @property
    def dim(self) -> int:
        return self.f_spec.d_out

    @property
    def aug_dim(self) -> int:
        return self.dim + int(self.time_input)

    @cached_property
    def layout(self) -> ParamLayout:
        return ParamLayout([("f", self.f_spec), ("V", self.v_spec)])

    @property
    def n_params(self) -> int:
        return self.f_spec.n_params + self.v_spec.n_params

    def split(self, params):
        params = jnp.asarray(params)
        if params.shape != (self.n_params,):
            raise ContractError(f"expected {self.n_params} parameters, got shape {params.shape}")
        n_f = self.f_spec.n_params
        return params[:n_f], params[n_f:]

    def init_params(self, key) -> jax.Array:
        kf, kv = jax.random.split(key)
        return jnp.concatenate([init_mlp(kf, self.f_spec), init_icnn(kv, self.v_spec)])

    def velocity(self, params, x, t, cond=None):
        return snode_rhs(self, params, x, t, cond)


def _lyapunov_parts(model: SNode, params, x_aug, cond):
    _, gamma = model.split(params)
    x_aug = jnp.asarray(x_aug)
    if x_aug.shape[-1] != model.aug_dim:
        raise ContractError(f"augmented state width {x_aug.shape[-1]} != {model.aug_dim}")
    if cond is None:
        if model.cond_dim:
            raise ContractError("conditioning vector required")
        inp, inp0 = x_aug, jnp.zeros_like(x_aug)
    else:
        inp = _augment(x_aug, None, cond, time_input=False)
        inp0 = _augment(jnp.zeros_like(x_aug), None, cond, time_input=False)
    g, dg = icnn_value_and_input_grad(model.v_spec, gamma, inp)
    g0 = icnn_forward(model.v_spec, gamma, inp0)
    z = g - g0
    v = smooth_relu(z, model.relu_smooth) + model.lyap_eps * jnp.sum(x_aug * x_aug, axis=-1)
    grad = (smooth_relu_grad(z, model.relu_smooth)[..., None] * dg[..., :model.aug_dim]
            + 2.0 * model.lyap_eps * x_aug)
    return v, grad


def lyapunov_value(model: SNode, params, x_aug, cond=None):
    """``V`` at the augmented state(s); zero exactly at the origin and positive elsewhere."""
    return _lyapunov_parts(model, params, x_aug, cond)[0]


def lyapunov_grad(model: SNode, params, x_aug, cond=None):
    """Analytic ``dV/dx_aug`` (time coordinate included)."""
    return _lyapunov_parts(model, params, x_aug, cond)[1]


def snode_rhs(model: SNode, params, x, t, cond=None):
    """Projected velocity of the state part; time always advances at unit rate."""
    x = jnp.asarray(x)
    theta, _ = model.split(params)
    f_in = _augment(x, t, cond, model.time_input)
    f = mlp_forward(model.f_spec, theta, f_in)
    if not model.project:
        return f
    x_aug = f_in[..., :model.aug_dim]
    if model.time_input:
        f = jnp.concatenate([f, jnp.ones(f.shape[:-1] + (1,), f.dtype)], axis=-1)
    v, grad = _lyapunov_parts(model, params, x_aug, cond)
    out = project_stable(f, grad, v, model.alpha, model.grad_floor, model.alpha_in_relu)
    return out[..., :model.dim]


def node_rhs(model: Node, params, x, t, cond=None):
    x = jnp.asarray(x)
    return mlp_forward(model.spec, params, _augment(x, t, cond, model.time_input))


@dataclass(frozen=True)
class IntegratorConfig:
    n_steps: int
    dt: float
    scheme: str = "euler"

    def __post_init__(self):
        if self.n_steps < 1 or self.dt <= 0:
            raise ContractError("n_steps must be >= 1 and dt > 0")
        if self.scheme not in ("euler", "rk4"):
            raise ContractError(f"unknown scheme {self.scheme!r}")

    @classmethod
    def for_points(cls, n_points: int, duration: float = 1.0, scheme: str = "euler") -> IntegratorConfig:
        """``n_points - 1`` steps spanning ``duration``."""
        return cls(n_points - 1, duration / (n_points - 1), scheme)

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt


@dataclass(frozen=True)
class Trajectory:
    points: np.ndarray
    dt: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[0] < 2:
            raise ContractError(f"trajectory needs shape (T>=2, d), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ContractError("trajectory contains non-finite values")
        object.__setattr__(self, "points", pts)

    @property
    def T(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def rollout(rhs, x0, n_steps: int, dt: float, scheme: str = "euler", t0: float = 0.0):
    """Unrolled fixed-step integration; traceable.  Returns ``(..., n_steps + 1, d)``."""
    x0 = jnp.asarray(x0)

    def step(x, k):
        t = t0 + k * dt
        if scheme == "euler":
            xn = x + dt * rhs(x, t)
        else:
            k1 = rhs(x, t)
            k2 = rhs(x + 0.5 * dt * k1, t + 0.5 * dt)
            k3 = rhs(x + 0.5 * dt * k2, t + 0.5 * dt)
            k4 = rhs(x + dt * k3, t + dt)
            xn = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        return xn, xn

    _, xs = jax.lax.scan(step, x0, jnp.arange(n_steps))
    traj = jnp.concatenate([x0[None], xs], axis=0)
    return jnp.moveaxis(traj, 0, -2)


def first_nonfinite_step(points) -> int | None:
    """Index of the first time step holding a non-finite value, scanning ``(..., T, d)``."""
    pts = np.asarray(points)
    bad = ~np.isfinite(pts).all(axis=-1)
    bad = bad.reshape(-1, pts.shape[-2]).any(axis=0)
    idx = np.flatnonzero(bad)
    return int(idx[0]) if idx.size else None


def integrate(rhs, x0, cfg: IntegratorConfig, t0: float = 0.0) -> Trajectory:
    """Integrate ``rhs(x, t)`` from a single start ``x0`` with a fixed step.

    Raises :class:`DivergenceError` with the offending step index on non-finite states.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.ndim != 1 or not np.all(np.isfinite(x0)):
        raise ContractError("x0 must be a finite vector")
    pts = np.asarray(rollout(rhs, jnp.asarray(x0), cfg.n_steps, cfg.dt, cfg.scheme, t0))
    bad = first_nonfinite_step(pts)
    if bad is not None:
        raise DivergenceError(bad)
    return Trajectory(pts, cfg.dt)


def trajectory_loss(pred, truth):
    """``0.5 * sum_t |x_t - x_hat_t|^2``, averaged over any leading batch axes."""
    p = pred.points if isinstance(pred, Trajectory) else pred
    q = truth.points if isinstance(truth, Trajectory) else truth
    p = jnp.asarray(p)
    q = jnp.asarray(q)
    if p.shape != q.shape:
        raise ContractError(f"shape mismatch {p.shape} vs {q.shape}")
    per_traj = 0.5 * jnp.sum((p - q) ** 2, axis=(-2, -1))
    return jnp.mean(per_traj)


def batch_loss(model, params, demos, cfg: IntegratorConfig, cond=None):
    """Traceable loss of rolling out ``model`` from each demo start. ``demos`` is ``(B, T, d)``."""
    demos = jnp.asarray(demos)
    if demos.shape[-2] != cfg.n_steps + 1:
        raise ContractError(f"demos have T={demos.shape[-2]} but integrator produces {cfg.n_steps + 1}")

    def rhs(x, t):
        return model.velocity(params, x, t, cond)

    pred = rollout(rhs, demos[..., 0, :], cfg.n_steps, cfg.dt, cfg.scheme)
    return trajectory_loss(pred, demos)


@partial(jax.jit, static_argnums=(0, 3))
def _loss_and_grad(model, params, demos, cfg, cond):
    return jax.value_and_grad(batch_loss, argnums=1)(model, params, demos, cfg, cond)


def loss_and_param_grads(model, params, demos, cfg: IntegratorConfig, cond=None):
    """Loss over a batch of demonstrations and its gradient in the flat parameter layout.

    Differentiates through the fully unrolled integrator (and projection, for sNODE).
    """
    demos = np.asarray(demos, dtype=np.float64)
    if demos.ndim == 2:
        demos = demos[None]
    loss, grad = _loss_and_grad(model, jnp.asarray(params), jnp.asarray(demos), cfg,
                                None if cond is None else jnp.asarray(cond))
    loss = float(loss)
    if not np.isfinite(loss):
        pred = rollout(lambda x, t: model.velocity(params, x, t, cond), jnp.asarray(demos[:, 0]),
                       cfg.n_steps, cfg.dt, cfg.scheme)
        raise DivergenceError(first_nonfinite_step(pred) or cfg.n_steps)
    return loss, np.asarray(grad)


def predict(model, params, starts, cfg: IntegratorConfig, cond=None, t0: float = 0.0) -> np.ndarray:
    """Roll out from each start in ``starts`` (``(B, d)``); non-finite values are left in place."""
    return np.asarray(_predict(model, jnp.asarray(params), jnp.asarray(starts, dtype=jnp.float64), cfg,
                               None if cond is None else jnp.asarray(cond), t0))


@partial(jax.jit, static_argnums=(0, 3, 5))
def _predict(model, params, starts, cfg, cond, t0):
    return rollout(lambda x, t: model.velocity(params, x, t, cond), starts, cfg.n_steps, cfg.dt, cfg.scheme, t0)
