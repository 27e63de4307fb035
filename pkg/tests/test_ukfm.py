import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from swabservo.errors import CovarianceNotPSD
from swabservo.manifold import Pose, Twist, exp_so3, inverse_retract, retract
from swabservo.ukfm import (
    SigmaWeights,
    UkfParams,
    UkfState,
    initial_state,
    process,
    propagate,
    repair_covariance,
    step,
    update,
)

from .helpers import random_rotation

ZERO = Twist(np.zeros(3), np.zeros(3))
X0 = Pose([0.02, -0.01, 0.4], exp_so3([0.1, -0.2, 0.05]))


def test_weights_sum_to_one():
    for alpha in (0.01, 0.1, 1.0):
        w = SigmaWeights(6, alpha)
        assert w.wm0 + 12 * w.wj == pytest.approx(1.0)


def test_static_without_noise():
    params = UkfParams(Q=np.zeros((6, 6)))
    P = np.diag([1e-4, 2e-4, 3e-4, 1e-3, 2e-3, 3e-3])
    out = propagate(UkfState(X0, P), ZERO, 0.01, params)
    assert np.allclose(out.X.position, X0.position, atol=1e-15)
    assert np.allclose(out.X.rotation, X0.rotation, atol=1e-15)
    assert np.allclose(out.P, P, rtol=1e-9, atol=1e-15)
    assert out.t == pytest.approx(0.01)


def test_linear_command_shifts_target():
    params = UkfParams(Q=np.zeros((6, 6)))
    out = propagate(UkfState(X0, 1e-6 * np.eye(6)), Twist([0.1, 0, 0], [0, 0, 0]), 0.1, params)
    assert np.allclose(out.X.position, X0.position - [0.01, 0, 0], atol=1e-15)
    assert np.allclose(out.X.rotation, X0.rotation, atol=1e-15)


def test_rotation_command_matches_process():
    w = np.array([0.1, -0.3, 0.2])
    v = np.array([0.02, 0.0, -0.01])
    out = propagate(UkfState(X0, 1e-8 * np.eye(6)), Twist(v, w), 0.05, UkfParams(Q=np.zeros((6, 6))))
    p, R = process(X0.position, X0.rotation, v, w, 0.05)
    assert np.allclose(out.X.position, p, atol=1e-15)
    assert np.allclose(out.X.rotation, R, atol=1e-15)


def test_propagated_covariance_monte_carlo():
    rng = np.random.default_rng(0)
    P0 = np.diag([1e-4, 2e-4, 1e-4, 4e-4, 1e-4, 2e-4])
    params = UkfParams()
    v, w, dt = np.array([0.05, 0.0, -0.02]), np.array([0.1, 0.2, 0.0]), 0.1
    out = propagate(UkfState(X0, P0), Twist(v, w), dt, params)

    n = 10000
    xi = rng.multivariate_normal(np.zeros(6), P0, n)
    nz = rng.multivariate_normal(np.zeros(6), params.Q, n)
    samples = []
    for k in range(n):
        Xk = retract(X0, xi[k])
        p, R = process(Xk.position, Xk.rotation, v + nz[k, :3], w + nz[k, 3:], dt)
        samples.append(inverse_retract(Pose(p, R), out.X))
    emp = np.cov(np.array(samples).T)
    assert np.linalg.norm(out.P - emp) < 0.1 * np.linalg.norm(emp)
    assert np.allclose(np.diag(out.P), np.diag(emp), rtol=0.1)


def test_update_at_mean_keeps_mean():
    P = np.diag([1e-4] * 3 + [1e-3] * 3)
    out = update(UkfState(X0, P), X0, UkfParams())
    assert np.allclose(out.X.position, X0.position, atol=1e-14)
    assert np.allclose(out.X.rotation, X0.rotation, atol=1e-14)
    assert np.all(np.linalg.eigvalsh(P - out.P) >= -1e-15)


def test_uninformative_measurement_ignored():
    params = UkfParams(R_meas=1e8 * UkfParams().R_meas)
    P = np.diag([1e-4] * 3 + [1e-3] * 3)
    z = retract(X0, [0.01, -0.02, 0.03, 0.1, 0.0, -0.1])
    out = update(UkfState(X0, P), z, params)
    assert np.linalg.norm(inverse_retract(out.X, X0)) < 1e-6 * 0.1
    assert np.allclose(out.P, P, rtol=1e-6)


def test_update_matches_linear_kalman_filter():
    params = UkfParams()
    rng = np.random.default_rng(3)
    A = rng.standard_normal((6, 6))
    P = 1e-4 * (A @ A.T + np.eye(6))
    xi = np.array([0.01, -0.005, 0.002, 0.05, -0.03, 0.02])
    out = update(UkfState(X0, P), retract(X0, xi), params)
    K = P @ np.linalg.inv(P + params.R_meas)
    assert np.allclose(inverse_retract(out.X, X0), K @ xi, atol=1e-12)
    assert np.allclose(out.P, P - K @ P, atol=1e-12)


def test_step_without_measurement_is_propagate():
    s = UkfState(X0, 1e-4 * np.eye(6))
    cmd = Twist([0.01, 0, 0], [0, 0.1, 0])
    a = step(s, cmd, 0.01, None, UkfParams())
    b = propagate(s, cmd, 0.01, UkfParams())
    assert np.array_equal(a.P, b.P) and np.array_equal(a.X.position, b.X.position)


def test_dead_reckoning_grows_uncertainty():
    params = UkfParams()
    s = initial_state(X0, params)
    traces = [np.trace(s.P)]
    for _ in range(100):
        s = step(s, ZERO, 0.01, None, params)
        traces.append(np.trace(s.P))
    assert np.all(np.diff(traces) > 0)
    assert np.allclose(s.X.position, X0.position) and np.allclose(s.X.rotation, X0.rotation)


def test_filter_attenuates_measurement_noise():
    params = UkfParams()
    rng = np.random.default_rng(7)
    sigma = 0.0082
    s = initial_state(X0, params)
    raw, filt = [], []
    for k in range(1000):
        z = Pose(X0.position + sigma * rng.standard_normal(3), X0.rotation @ exp_so3(0.03 * rng.standard_normal(3)))
        for _ in range(3):
            s = propagate(s, ZERO, 1 / 90, params)
        s = update(s, z, params)
        if k >= 100:
            raw.append(z.position)
            filt.append(s.X.position)
    ratio = np.std(raw, axis=0) / np.std(filt, axis=0)
    assert np.all(ratio >= 3.0)


def test_rotation_stays_orthonormal():
    params = UkfParams()
    s = initial_state(X0, params)
    cmd = Twist([0.01, 0.0, 0.0], [0.3, -0.2, 0.5])
    for _ in range(10000):
        s = propagate(s, cmd, 0.01, params)
    R = s.X.rotation
    assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-9
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-9)


@given(st.integers(0, 10**6), st.lists(st.booleans(), min_size=1, max_size=20))
def test_covariance_stays_symmetric_psd(seed, measured):
    rng = np.random.default_rng(seed)
    params = UkfParams()
    s = initial_state(Pose(rng.uniform(-0.1, 0.1, 3) + [0, 0, 0.4], random_rotation(rng)), params)
    for m in measured:
        cmd = Twist(rng.uniform(-0.15, 0.15, 3), rng.uniform(-0.5, 0.5, 3))
        z = retract(s.X, 0.05 * rng.standard_normal(6)) if m else None
        s = step(s, cmd, 0.01, z, params)
        assert np.array_equal(s.P, s.P.T)
        assert np.linalg.eigvalsh(s.P).min() > 0


def test_repair_covariance():
    P = np.diag([1e-4, 1e-4, 1e-4, 1e-4, 1e-4, -1e-13])
    fixed = repair_covariance(P)
    assert np.linalg.eigvalsh(fixed).min() > 0
    with pytest.raises(CovarianceNotPSD):
        repair_covariance(np.diag([1.0, 1, 1, 1, 1, -1e-3]))


def test_param_validation():
    with pytest.raises(ValueError):
        UkfParams(Q=-np.eye(6))
    with pytest.raises(ValueError):
        UkfParams(R_meas=np.zeros((6, 6)))
    with pytest.raises(ValueError):
        UkfParams(alpha=(0.1, 0.1))
    with pytest.raises(ValueError):
        propagate(initial_state(X0, UkfParams()), ZERO, 0.0, UkfParams())
