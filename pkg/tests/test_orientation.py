import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stablelfd.dynamics import ContractError
from stablelfd.orientation import (
    IDENTITY,
    DomainError,
    PoseTrajectory,
    decode_pose,
    encode_pose,
    exp_map,
    log_map,
    quat_conj,
    quat_error,
    quat_exp,
    quat_mul,
    random_unit_quaternions,
    trajectory_quat_error,
)


def same_rotation(a, b):
    """Distance between quaternions modulo the double cover."""
    return np.minimum(np.abs(a - b).max(axis=-1), np.abs(a + b).max(axis=-1))


quat_vectors = arrays(np.float64, 4, elements=st.floats(-1, 1)).filter(
    lambda v: np.linalg.norm(v) > 1e-3
)


def unit(v):
    return v / np.linalg.norm(v)


def test_hamilton_product_basis():
    i = np.array([0.0, 1, 0, 0])
    j = np.array([0.0, 0, 1, 0])
    np.testing.assert_array_equal(quat_mul(i, j), [0, 0, 0, 1])
    np.testing.assert_array_equal(quat_mul(j, i), [0, 0, 0, -1])


def test_identity_and_inverse():
    q = random_unit_quaternions(np.random.default_rng(0), 20)
    np.testing.assert_allclose(quat_mul(q, IDENTITY), q, atol=0)
    np.testing.assert_allclose(quat_mul(q, quat_conj(q)), np.tile(IDENTITY, (20, 1)), atol=1e-15)


def test_log_of_equal_quaternions_is_zero():
    q = random_unit_quaternions(np.random.default_rng(1), 5)
    np.testing.assert_allclose(log_map(q, q), np.zeros((5, 3)), atol=1e-7)


def test_log_axis_aligned_half_angle():
    rel = np.array([np.cos(np.pi / 4), np.sin(np.pi / 4), 0, 0])
    # conj(identity) * rel = rel
    np.testing.assert_allclose(log_map(IDENTITY, rel), [np.pi / 4, 0, 0], atol=1e-15)


def test_log_rejects_non_unit():
    with pytest.raises(ContractError):
        log_map([1.0, 0.1, 0, 0], IDENTITY)


def test_log_rejects_antipodal_relative_rotation():
    with pytest.raises(DomainError):
        log_map(IDENTITY, [0.0, 1.0, 0, 0])


def test_exp_of_zero_is_goal():
    g = random_unit_quaternions(np.random.default_rng(2), 1)[0]
    np.testing.assert_allclose(exp_map(np.zeros(3), g), g, atol=0)


def test_exp_quarter_turn_up_to_sign():
    out = exp_map([np.pi / 2, 0, 0], IDENTITY)
    assert same_rotation(out, np.array([0.0, 1, 0, 0])) < 1e-15
    # forward Exp itself matches the textbook value without sign ambiguity
    np.testing.assert_allclose(quat_exp([np.pi / 2, 0, 0]), [0, 1, 0, 0], atol=1e-16)


@pytest.mark.parametrize("norm", [np.pi, 3.5])
def test_exp_domain(norm):
    with pytest.raises(DomainError):
        exp_map([norm, 0, 0], IDENTITY)


def test_round_trip_ten_thousand_pairs():
    rng = np.random.default_rng(3)
    q = random_unit_quaternions(rng, 10_000)
    g = random_unit_quaternions(rng, 10_000)
    back = exp_map(log_map(q, g), g)
    assert same_rotation(back, q).max() < 1e-9


def test_log_norm_bounded_after_canonicalization():
    rng = np.random.default_rng(4)
    r = log_map(random_unit_quaternions(rng, 2000), random_unit_quaternions(rng, 2000))
    assert np.linalg.norm(r, axis=1).max() <= np.pi / 2 + 1e-12


def test_quat_error_threshold_value():
    q_hat = np.array([np.cos(0.04), np.sin(0.04), 0, 0])
    assert quat_error(IDENTITY, q_hat) == pytest.approx(0.08, abs=1e-12)


def test_quat_error_double_cover():
    q = random_unit_quaternions(np.random.default_rng(5), 10)
    np.testing.assert_allclose(quat_error(q, q), 0, atol=1e-7)
    np.testing.assert_allclose(quat_error(q, -q), 0, atol=1e-7)


@settings(max_examples=200, deadline=None)
@given(quat_vectors, quat_vectors)
def test_quat_error_symmetric_and_sign_invariant(a, b):
    a, b = unit(a), unit(b)
    e = quat_error(a, b)
    assert e >= 0
    assert e == pytest.approx(quat_error(b, a), abs=1e-12)
    assert e == pytest.approx(quat_error(-a, b), abs=1e-12)
    assert e <= np.pi + 1e-12


def test_trajectory_error_is_mean():
    q = np.tile(IDENTITY, (2, 1))
    q_hat = np.array([IDENTITY, [np.cos(0.05), 0, np.sin(0.05), 0]])
    assert trajectory_quat_error(q, q_hat) == pytest.approx(0.05)


def _pose_traj(seed=6, T=50):
    rng = np.random.default_rng(seed)
    positions = np.cumsum(rng.normal(size=(T, 3)), axis=0)
    axis = unit(rng.normal(size=3))
    angles = np.linspace(0.6, 0.0, T)[:, None]
    rel = quat_exp(angles * axis)
    goal = random_unit_quaternions(rng, 1)[0]
    return PoseTrajectory(positions, quat_mul(goal, rel), dt=0.01)


def test_encode_goal_is_origin():
    x = encode_pose(_pose_traj())
    assert x.shape == (50, 6)
    np.testing.assert_array_equal(x[-1], np.zeros(6))


def test_constant_pose_encodes_to_zero():
    q = random_unit_quaternions(np.random.default_rng(7), 1)
    traj = PoseTrajectory(np.ones((10, 3)), np.tile(q, (10, 1)))
    np.testing.assert_allclose(encode_pose(traj), 0, atol=1e-7)


def test_encode_scale_is_linear():
    traj = _pose_traj()
    x1 = encode_pose(traj, scale=1.0)
    x5 = encode_pose(traj, scale=5.0)
    np.testing.assert_allclose(x5[:, 3:], 5 * x1[:, 3:], rtol=1e-15)
    np.testing.assert_array_equal(x5[:, :3], x1[:, :3])


def test_decode_inverts_encode():
    traj = _pose_traj()
    x = encode_pose(traj)
    back = decode_pose(x, traj.positions[-1], traj.quaternions[-1])
    np.testing.assert_allclose(back.positions, traj.positions, atol=1e-12)
    assert same_rotation(back.quaternions, traj.quaternions).max() < 1e-9


def test_decode_zero_row_is_goal():
    g = random_unit_quaternions(np.random.default_rng(8), 1)[0]
    out = decode_pose(np.zeros((1, 6)), [1.0, 2.0, 3.0], g)
    np.testing.assert_array_equal(out.positions[0], [1, 2, 3])
    np.testing.assert_allclose(out.quaternions[0], g, atol=0)


def test_scale_mismatch_breaks_round_trip():
    traj = _pose_traj()
    back = decode_pose(encode_pose(traj, 5.0), traj.positions[-1], traj.quaternions[-1], scale=1.0)
    assert same_rotation(back.quaternions, traj.quaternions).max() > 1e-3


def test_decode_domain_error():
    with pytest.raises(DomainError):
        decode_pose(np.array([[0, 0, 0, 16.0, 0, 0]]), np.zeros(3), IDENTITY, scale=5.0)


def test_pose_trajectory_removes_sign_flips():
    q = random_unit_quaternions(np.random.default_rng(9), 1)[0]
    quats = np.array([q, -q, q, -q])
    traj = PoseTrajectory(np.zeros((4, 3)), quats)
    assert np.all(np.sum(traj.quaternions[1:] * traj.quaternions[:-1], axis=1) > 0)


def test_pose_trajectory_validates_shapes():
    with pytest.raises(ContractError):
        PoseTrajectory(np.zeros((4, 3)), np.tile(IDENTITY, (3, 1)))
    with pytest.raises(ContractError):
        PoseTrajectory(np.zeros((2, 3)), np.array([IDENTITY, [1.0, 1, 0, 0]]))
