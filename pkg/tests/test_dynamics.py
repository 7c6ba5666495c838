import math

import jax
import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stablelfd import dynamics as dyn
from stablelfd.dynamics import (
    ContractError,
    DivergenceError,
    IntegratorConfig,
    MlpSpec,
    Node,
    SNode,
    Trajectory,
)


def _softplus(a):
    return np.logaddexp(0.0, a)


def _random_snode(seed, dim=2, f_hidden=(8, 8), v_hidden=(8, 8), scale=1.0, **kw):
    model = SNode.build(dim, f_hidden, v_hidden, **kw)
    params = model.init_params(jax.random.PRNGKey(seed)) * scale
    return model, params


# -- MLP -------------------------------------------------------------------

def test_mlp_zero_params_gives_zero():
    spec = MlpSpec((3, 5, 2))
    out = dyn.mlp_forward(spec, jnp.zeros(spec.n_params), jnp.array([1.0, -2.0, 3.0]))
    np.testing.assert_array_equal(out, np.zeros(2))


def test_mlp_identity_layer():
    spec = MlpSpec((3, 3))
    params = jnp.concatenate([jnp.eye(3).ravel(), jnp.zeros(3)])
    v = jnp.array([0.3, -1.2, 4.0])
    np.testing.assert_array_equal(dyn.mlp_forward(spec, params, v), v)


def test_mlp_hand_computed_2_2_1():
    spec = MlpSpec((2, 2, 1))
    # W1 = [[1, 2], [-1, 0.5]], b1 = [0, 1], W2 = [[1, -2]], b2 = [0.5]
    params = jnp.array([1, 2, -1, 0.5, 0, 1, 1, -2, 0.5], dtype=jnp.float64)
    out = dyn.mlp_forward(spec, params, jnp.array([1.0, 0.0]))
    # softplus(1) - 2 softplus(0) + 0.5
    assert float(out[0]) == pytest.approx(0.42696732639833224, abs=1e-15)


def test_mlp_dimension_mismatch():
    spec = MlpSpec((2, 4, 1))
    with pytest.raises(ContractError):
        dyn.mlp_forward(spec, jnp.zeros(spec.n_params), jnp.zeros(3))
    with pytest.raises(ContractError):
        dyn.mlp_forward(spec, jnp.zeros(spec.n_params + 1), jnp.zeros(2))


def test_layout_is_canonical():
    model = SNode.build(2, (4,), (3,))
    lay = model.layout
    assert lay.size == model.n_params
    # f layer 0: W (4x3) then b (4); f layer 1: W (2x4), b (2); then V
    assert lay.index("f", 0, "W", 0, 0) == 0
    assert lay.index("f", 0, "W", 1, 2) == 5
    assert lay.index("f", 0, "b", 0) == 12
    assert lay.index("f", 1, "W", 0, 0) == 16
    assert lay.index("V", 0, "W", 0, 0) == model.f_spec.n_params
    v_last = lay.entries[-1]
    assert (v_last.network, v_last.kind) == ("V", "b")
    assert v_last.offset + v_last.size == model.n_params


# -- Lyapunov function -------------------------------------------------------

def _reference_lyapunov(model: SNode, params, x):
    """Independent loop-based evaluation of V; shares no code with the library."""
    params = np.asarray(params)
    gamma = params[model.f_spec.n_params:]
    w = model.v_spec.layer_widths
    n = w[0]

    def g(inp):
        off = 0
        z = None
        for k in range(len(w) - 1):
            out = w[k + 1]
            if k > 0:
                U = gamma[off:off + out * w[k]].reshape(out, w[k])
                off += out * w[k]
            W = gamma[off:off + out * n].reshape(out, n)
            off += out * n
            b = gamma[off:off + out]
            off += out
            a = np.array([sum(W[i, j] * inp[j] for j in range(n)) + b[i] for i in range(out)])
            if k > 0:
                a = a + np.array([sum(_softplus(U[i, j]) * z[j] for j in range(w[k])) for i in range(out)])
            z = _softplus(a) if k < len(w) - 2 else a
        return z[0]

    diff = g(np.asarray(x)) - g(np.zeros(n))
    d = model.relu_smooth
    sig = 0.0 if diff <= 0 else (diff ** 2 / (2 * d) if diff < d else diff - d / 2)
    return sig + model.lyap_eps * float(np.dot(x, x))


def test_lyapunov_zero_at_origin():
    model, params = _random_snode(0)
    assert float(dyn.lyapunov_value(model, params, jnp.zeros(3))) == 0.0
    np.testing.assert_array_equal(dyn.lyapunov_grad(model, params, jnp.zeros(3)), np.zeros(3))


def test_lyapunov_matches_reference_implementation():
    model, params = _random_snode(1, scale=3.0)
    for x in ([1.0, 0.0, 0.0], [0.3, -0.7, 0.5], [-2.0, 1.5, 0.9]):
        got = float(dyn.lyapunov_value(model, params, jnp.array(x)))
        assert got == pytest.approx(_reference_lyapunov(model, params, np.array(x)), rel=1e-12, abs=1e-15)


def test_lyapunov_quadratic_when_icnn_flat():
    model = SNode.build(2, (4,), (4,))
    params = jnp.zeros(model.n_params)  # g is constant so g(x) - g(0) = 0
    x = jnp.array([0.5, -1.0, 2.0])
    np.testing.assert_allclose(dyn.lyapunov_grad(model, params, x), 2 * model.lyap_eps * x, rtol=1e-14)
    assert float(dyn.lyapunov_value(model, params, x)) == pytest.approx(model.lyap_eps * 5.25)


def test_lyapunov_grad_matches_finite_differences():
    rng = np.random.default_rng(0)
    for seed in range(5):
        model, params = _random_snode(seed, scale=3.0)
        x = rng.normal(size=3)
        analytic = np.asarray(dyn.lyapunov_grad(model, params, jnp.array(x)))
        h = 1e-5
        fd = np.zeros(3)
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            fd[i] = (float(dyn.lyapunov_value(model, params, jnp.array(x + e)))
                     - float(dyn.lyapunov_value(model, params, jnp.array(x - e)))) / (2 * h)
        rel = np.max(np.abs(analytic - fd)) / np.max(np.abs(fd))
        assert rel < 1e-5


def test_lyapunov_grad_matches_autodiff():
    model, params = _random_snode(3, scale=2.0)
    x = jnp.array([0.4, -0.2, 0.8])
    auto = jax.grad(lambda z: dyn.lyapunov_value(model, params, z))(x)
    np.testing.assert_allclose(dyn.lyapunov_grad(model, params, x), auto, rtol=1e-12, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000), lam=st.floats(0.0, 1.0))
def test_icnn_is_convex(seed, lam):
    model, params = _random_snode(seed, scale=3.0)
    _, gamma = model.split(params)
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, 3)) * 2
    g = lambda z: float(dyn.icnn_forward(model.v_spec, gamma, jnp.asarray(z)))
    assert g(lam * x + (1 - lam) * y) <= lam * g(x) + (1 - lam) * g(y) + 1e-9


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_lyapunov_positive_definite(seed):
    model, params = _random_snode(seed, scale=3.0)
    x = np.random.default_rng(seed).normal(size=(16, 3))
    v = np.asarray(dyn.lyapunov_value(model, params, jnp.asarray(x)))
    assert np.all(v >= model.lyap_eps * np.sum(x * x, axis=1) - 1e-15)
    assert np.all(v > 0)


# -- projection -------------------------------------------------------------

def test_projection_inactive_when_already_decreasing():
    f = jnp.array([1.0, -2.0])
    out = dyn.project_stable(f, jnp.array([0.0, 1.0]), 0.0, alpha=0.0)
    np.testing.assert_array_equal(out, f)


def test_projection_hand_case_with_alpha():
    out = dyn.project_stable(jnp.array([3.0, 1.0]), jnp.array([0.0, 2.0]), 2.0, alpha=1.0)
    np.testing.assert_allclose(out, [3.0, -1.0])
    assert float(jnp.dot(jnp.array([0.0, 2.0]), out)) == pytest.approx(-2.0)


def test_projection_hand_case_no_alpha():
    out = dyn.project_stable(jnp.array([1.0, 1.0]), jnp.array([0.0, 1.0]), 0.0, alpha=0.0)
    np.testing.assert_allclose(out, [1.0, 0.0])


def test_projection_guard_caps_correction(caplog):
    dyn.reset_near_singular_log()
    out = dyn.project_stable(jnp.array([1.0, 1.0]), jnp.array([1e-6, 0.0]), 1.0, alpha=1.0, grad_floor=1e-8)
    assert np.all(np.isfinite(out))
    # correction = grad * (1e-6 + 1) / 1e-8 ~ 1e2 in the first coordinate, not 1e12
    assert abs(float(out[0]) - 1.0) < 200
    assert "near singularity" in caplog.text


@pytest.mark.parametrize("alpha", [0.0, 0.1, 1.0])
@pytest.mark.parametrize("alpha_in_relu", [False, True])
def test_projected_field_satisfies_decrease(alpha, alpha_in_relu):
    rng = np.random.default_rng(7)
    for seed in range(10):
        model, params = _random_snode(seed, scale=2.0, alpha=alpha, alpha_in_relu=alpha_in_relu)
        x = rng.normal(size=(50, 2))
        t = rng.uniform(0, 1.5, size=(50, 1))
        theta, _ = model.split(params)
        x_aug = np.concatenate([x, t], axis=1)
        f = np.asarray(dyn.mlp_forward(model.f_spec, theta, jnp.asarray(x_aug)))
        f_aug = np.concatenate([f, np.ones((50, 1))], axis=1)
        grad = np.asarray(dyn.lyapunov_grad(model, params, x_aug))
        v = np.asarray(dyn.lyapunov_value(model, params, x_aug))
        proj = np.asarray(dyn.project_stable(f_aug, grad, v, alpha, model.grad_floor, alpha_in_relu))
        ok = np.sum(grad * grad, axis=1) >= model.grad_floor
        lhs = np.sum(grad * proj, axis=1)
        assert np.all(lhs[ok] <= -alpha * v[ok] + 1e-9)


# -- right-hand sides ------------------------------------------------------

def test_snode_rhs_at_equilibrium_is_nominal():
    model, params = _random_snode(4)
    theta, _ = model.split(params)
    out = dyn.snode_rhs(model, params, jnp.zeros(2), 0.0)
    nominal = dyn.mlp_forward(model.f_spec, theta, jnp.zeros(3))
    np.testing.assert_array_equal(out, nominal)


def test_snode_rhs_inactive_projection_returns_nominal():
    model = SNode.build(2, (4,), (4,))
    params = np.zeros(model.n_params)
    # V = eps |x|^2 exactly; grad V = 2 eps [x, t].  Pick f = [-1, 0] from the bias and
    # x = [1, 0], t = 0 so grad.f_aug = 2 eps (-1) + 0 < 0 and alpha = 0.
    lay = model.layout
    params[lay.index("f", 1, "b", 0)] = -1.0
    params = jnp.asarray(params)
    out = dyn.snode_rhs(model, params, jnp.array([1.0, 0.0]), 0.0)
    theta, _ = model.split(params)
    np.testing.assert_array_equal(out, dyn.mlp_forward(model.f_spec, theta, jnp.array([1.0, 0.0, 0.0])))


def test_disabled_projection_matches_node_bitwise():
    model, params = _random_snode(5)
    plain = SNode(model.f_spec, model.v_spec, project=False)
    node = Node(model.f_spec)
    theta, _ = model.split(params)
    x = jnp.array([[0.3, -0.1], [1.0, 2.0]])
    a = np.asarray(dyn.snode_rhs(plain, params, x, 0.25))
    b = np.asarray(dyn.node_rhs(node, theta, x, 0.25))
    assert np.array_equal(a, b)


def test_node_rhs_zero_params():
    node = Node.build(2, (5,))
    np.testing.assert_array_equal(dyn.node_rhs(node, jnp.zeros(node.n_params), jnp.array([1.0, 2.0]), 0.3),
                                  np.zeros(2))


def test_node_rhs_hand_computed():
    node = Node(MlpSpec((3, 2, 2)))
    # W1 = [[1, 0, 2], [0, 1, -2]], b1 = 0, W2 = I, b2 = 0
    params = jnp.array([1, 0, 2, 0, 1, -2, 0, 0, 1, 0, 0, 1, 0, 0], dtype=jnp.float64)
    out = dyn.node_rhs(node, params, jnp.array([1.0, 0.0]), 0.5)
    np.testing.assert_allclose(out, [2.1269280110429727, 0.31326168751822286], rtol=1e-15)


def test_conditioned_snode_shapes():
    model = SNode.build(2, (6,), (6,), cond_dim=3)
    params = model.init_params(jax.random.PRNGKey(0))
    out = dyn.snode_rhs(model, params, jnp.ones((4, 2)), 0.1, cond=jnp.ones(3))
    assert out.shape == (4, 2)
    with pytest.raises(ContractError):
        dyn.lyapunov_value(model, params, jnp.ones(3))


# -- integration ------------------------------------------------------------

def test_integrate_zero_field_is_constant():
    traj = dyn.integrate(lambda x, t: jnp.zeros_like(x), np.array([1.5, -2.0]), IntegratorConfig(4, 0.25))
    assert traj.T == 5
    np.testing.assert_array_equal(traj.points, np.tile([1.5, -2.0], (5, 1)))


def test_integrate_euler_decay():
    traj = dyn.integrate(lambda x, t: -x, np.array([1.0]), IntegratorConfig(2, 0.1))
    np.testing.assert_allclose(traj.points[:, 0], [1.0, 0.9, 0.81], rtol=1e-15)


def test_integrate_constant_field():
    traj = dyn.integrate(lambda x, t: jnp.ones_like(x), np.array([0.0]), IntegratorConfig(2, 0.5))
    np.testing.assert_allclose(traj.points[:, 0], [0.0, 0.5, 1.0])


def test_integrate_time_advances():
    traj = dyn.integrate(lambda x, t: jnp.full_like(x, t), np.array([0.0]), IntegratorConfig(3, 0.5))
    # x_{k+1} = x_k + 0.5 * (0.5 k)
    np.testing.assert_allclose(traj.points[:, 0], [0.0, 0.0, 0.25, 0.75])


def test_integrate_rk4_exact_for_polynomial_time():
    # dx/dt = 3 t^2 -> x = t^3; RK4 is exact for cubic time dependence
    traj = dyn.integrate(lambda x, t: jnp.full_like(x, 3 * t * t), np.array([0.0]), IntegratorConfig(4, 0.25, "rk4"))
    np.testing.assert_allclose(traj.points[:, 0], np.linspace(0, 1, 5) ** 3, atol=1e-14)


def test_integrate_divergence_reports_step():
    with pytest.raises(DivergenceError) as err:
        dyn.integrate(lambda x, t: x ** 2 * 1e200, np.array([1.0]), IntegratorConfig(10, 1.0))
    assert 1 <= err.value.step <= 10


def test_integrate_is_deterministic():
    model, params = _random_snode(9)
    cfg = IntegratorConfig.for_points(20)
    rhs = lambda x, t: dyn.snode_rhs(model, params, x, t)
    a = dyn.integrate(rhs, np.array([0.5, -0.5]), cfg)
    b = dyn.integrate(rhs, np.array([0.5, -0.5]), cfg)
    assert np.array_equal(a.points, b.points)
    assert a.points[0].tolist() == [0.5, -0.5]


def test_trajectory_validation():
    with pytest.raises(ContractError):
        Trajectory(np.zeros((1, 2)), 0.1)
    with pytest.raises(ContractError):
        Trajectory(np.array([[0.0], [np.nan]]), 0.1)


# -- loss and gradients ------------------------------------------------------

def test_trajectory_loss_values():
    truth = np.zeros((2, 1))
    assert float(dyn.trajectory_loss(truth, truth)) == 0.0
    assert float(dyn.trajectory_loss(np.ones((2, 1)), truth)) == pytest.approx(1.0)
    rng = np.random.default_rng(0)
    p, q = rng.normal(size=(2, 6, 3))
    base = float(dyn.trajectory_loss(p, q))
    assert float(dyn.trajectory_loss(q + 2 * (p - q), q)) == pytest.approx(4 * base)
    with pytest.raises(ContractError):
        dyn.trajectory_loss(np.zeros((3, 2)), np.zeros((2, 2)))


def test_gradient_vanishes_at_minimum():
    node = Node.build(2, (4,))
    demos = np.tile(np.array([0.7, -0.3]), (3, 5, 1))
    loss, grad = dyn.loss_and_param_grads(node, np.zeros(node.n_params), demos, IntegratorConfig.for_points(5))
    assert loss == 0.0
    assert np.linalg.norm(grad) < 1e-8


def _fd_grad(model, params, demos, cfg, h=1e-6):
    params = np.asarray(params, dtype=np.float64)
    fd = np.zeros_like(params)
    jf = jax.jit(lambda p: dyn.batch_loss(model, p, demos, cfg))
    f = lambda p: float(jf(jnp.asarray(p)))
    for i in range(params.size):
        e = np.zeros_like(params)
        e[i] = h
        fd[i] = (f(params + e) - f(params - e)) / (2 * h)
    return fd


def _coordinatewise_rel_err(a, b):
    floor = 1e-6 * np.max(np.abs(b))
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor))


@pytest.mark.parametrize("alpha", [0.0, 0.5])
def test_snode_param_gradient_matches_finite_differences(alpha):
    model, params = _random_snode(11, f_hidden=(8,), v_hidden=(6, 6), alpha=alpha, scale=2.0)
    rng = np.random.default_rng(1)
    demos = rng.normal(size=(2, 5, 2))
    cfg = IntegratorConfig.for_points(5)
    _, grad = dyn.loss_and_param_grads(model, params, demos, cfg)
    fd = _fd_grad(model, params, demos, cfg)
    assert _coordinatewise_rel_err(grad, fd) < 1e-4


def test_node_param_gradient_matches_finite_differences():
    node = Node.build(2, (8,))
    params = node.init_params(jax.random.PRNGKey(2))
    demos = np.random.default_rng(2).normal(size=(3, 5, 2))
    cfg = IntegratorConfig.for_points(5, scheme="rk4")
    _, grad = dyn.loss_and_param_grads(node, params, demos, cfg)
    assert _coordinatewise_rel_err(grad, _fd_grad(node, params, demos, cfg)) < 1e-4


def test_gradient_step_decreases_loss_on_linear_fit():
    # single linear layer NODE without time input fitting x' = -x
    node = Node(MlpSpec((1, 1)), time_input=False)
    cfg = IntegratorConfig.for_points(11)
    t = np.linspace(0, 1, 11)
    demos = np.exp(-t)[None, :, None]
    params = jnp.array([0.5, 0.0])
    loss0, grad = dyn.loss_and_param_grads(node, params, demos, cfg)
    loss1, _ = dyn.loss_and_param_grads(node, params - 1e-2 * grad, demos, cfg)
    assert loss1 < loss0


def test_divergent_loss_raises():
    node = Node(MlpSpec((1, 1)), time_input=False)
    params = jnp.array([800.0, 0.0])
    with pytest.raises(DivergenceError):
        dyn.loss_and_param_grads(node, params, np.ones((1, 200, 1)), IntegratorConfig(199, 1.0))


def test_integrator_config_duration():
    cfg = IntegratorConfig.for_points(1000)
    assert cfg.n_steps == 999
    assert math.isclose(cfg.duration, 1.0)
    with pytest.raises(ContractError):
        IntegratorConfig(5, 0.1, "midpoint")
