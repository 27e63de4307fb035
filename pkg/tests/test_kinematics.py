import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from swabservo.errors import ChainFileError, IKFailure, MaxItersExceeded
from swabservo.kinematics import (
    SUCCESS,
    Capsule,
    CollisionGeometry,
    KinematicChain,
    check_self_collision,
    forward_kinematics,
    ik_path,
    ik_step,
    jacobian,
    load_chain,
    parse_chain,
    pose_error,
    pseudo_inverse,
    reference_chain_text,
    solve_ik,
    solve_ik_batch,
)
from swabservo.manifold import Pose, exp_so3, log_so3, rotz, skew

from .helpers import random_q

FOLDED = np.array([0.0, 0.5, 0.0, -2.09, 0.0, -0.5, 0.0])  # elbow closed: forearm against upper arm


def homogeneous(p, R):
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = p
    return T


def oracle_frames(chain, q):
    """Link frames by explicit 4x4 products with a dense matrix exponential for each joint."""
    T = chain.base.matrix()
    frames = [T]
    for i in range(7):
        T = T @ homogeneous(chain.origins[i], chain.fixed_rotations[i]) @ homogeneous(
            np.zeros(3), expm(skew(chain.axes[i]) * q[i])
        )
        frames.append(T)
    return frames, T @ chain.flange.matrix()


def oracle_fk(chain, q):
    return oracle_frames(chain, q)[1]


def fd_jacobian(chain, q, h=1e-6):
    J = np.zeros((6, 7))
    for i in range(7):
        dq = np.zeros(7)
        dq[i] = h
        a, b = forward_kinematics(chain, q + dq), forward_kinematics(chain, q - dq)
        J[:3, i] = (a.position - b.position) / (2 * h)
        J[3:, i] = log_so3(a.rotation @ b.rotation.T) / (2 * h)
    return J


# ---------------------------------------------------------------- forward kinematics


def test_home_pose_matches_hand_composition(chain):
    T = oracle_fk(chain, np.zeros(7))
    X = forward_kinematics(chain, np.zeros(7))
    assert np.allclose(X.matrix(), T, atol=1e-12)
    # straight up: base 0.40 + 0.34 + 0.40 + 0.39 + flange 0.08
    assert np.allclose(X.position, [0, 0, 1.61], atol=1e-12)


def test_fk_matches_oracle_at_random_q(chain):
    rng = np.random.default_rng(0)
    for _ in range(50):
        q = random_q(chain, rng, 0.0)
        assert np.allclose(forward_kinematics(chain, q).matrix(), oracle_fk(chain, q), atol=1e-12)


def test_first_joint_rotates_about_base_z(chain):
    rng = np.random.default_rng(1)
    q = random_q(chain, rng)
    delta = 0.3
    dq = q.copy()
    dq[0] += delta
    a, b = forward_kinematics(chain, q).position, forward_kinematics(chain, dq).position
    assert np.allclose(b, rotz(delta) @ a, atol=1e-12)


def test_fk_first_order(chain):
    rng = np.random.default_rng(2)
    q = random_q(chain, rng)
    J = jacobian(chain, q)
    for h in (1e-6, 1e-5):
        dq = h * rng.standard_normal(7) / np.sqrt(7)
        lin = forward_kinematics(chain, q + dq).position - forward_kinematics(chain, q).position
        assert np.linalg.norm(lin - J[:3] @ dq) < 10 * np.linalg.norm(dq) ** 2


# ---------------------------------------------------------------- jacobian


def test_jacobian_matches_finite_differences(chain):
    rng = np.random.default_rng(3)
    for _ in range(100):
        q = random_q(chain, rng, 0.0)
        assert np.allclose(jacobian(chain, q), fd_jacobian(chain, q), atol=1e-5)


def test_jacobian_relative_accuracy(chain):
    q = random_q(chain, np.random.default_rng(4))
    J, F = jacobian(chain, q), fd_jacobian(chain, q)
    assert np.linalg.norm(J - F) / np.linalg.norm(J) < 1e-6


def test_jacobian_bounded_and_first_axis(chain):
    rng = np.random.default_rng(5)
    for _ in range(20):
        J = jacobian(chain, random_q(chain, rng, 0.0))
        assert np.all(np.isfinite(J))
        assert np.all(np.linalg.norm(J[:3], axis=0) <= chain.reach() + 1e-12)
        assert np.allclose(J[3:, 0], [0, 0, 1])


# ---------------------------------------------------------------- pseudo-inverse


def test_pinv_orthonormal_rows():
    Q, _ = np.linalg.qr(np.random.default_rng(6).standard_normal((7, 7)))
    J = Q[:6]
    assert np.allclose(pseudo_inverse(J, 0.0), J.T, atol=1e-12)


def test_pinv_moore_penrose(chain):
    rng = np.random.default_rng(7)
    for _ in range(20):
        J = jacobian(chain, random_q(chain, rng))
        P = pseudo_inverse(J, 0.0)
        assert np.allclose(J @ P, np.eye(6), atol=1e-8)
        assert np.allclose(J @ P @ J, J, atol=1e-8)
        assert np.allclose(P @ J @ P, P, atol=1e-8)
        assert np.allclose((J @ P).T, J @ P, atol=1e-8)
        assert np.allclose((P @ J).T, P @ J, atol=1e-8)


def test_pinv_damped_vs_dense_solve():
    rng = np.random.default_rng(8)
    for lam in (1e-3, 1e-1, 1.0):
        J = rng.standard_normal((6, 7))
        ref = J.T @ np.linalg.solve(J @ J.T + lam**2 * np.eye(6), np.eye(6))
        assert np.allclose(pseudo_inverse(J, lam), ref, atol=1e-10)


@given(st.integers(0, 2**32 - 1))
def test_pinv_default_damping_property(seed):
    J = np.random.default_rng(seed).standard_normal((6, 7))
    if np.linalg.svd(J, compute_uv=False)[-1] < 1e-2:
        return
    P = pseudo_inverse(J)
    assert np.allclose(J @ P @ J, J, atol=1e-8)


# ---------------------------------------------------------------- ik


def test_ik_step_at_target_is_noop(chain):
    q = random_q(chain, np.random.default_rng(9))
    assert np.array_equal(ik_step(chain, q, forward_kinematics(chain, q), 0.5), q)


def planar_chain(L1=0.4, L2=0.3):
    """Two planar links about z, then a link-free three-axis wrist so orientation never constrains q1, q2."""
    origins = np.zeros((7, 3))
    origins[1] = [L1, 0, 0]
    origins[2] = [L2, 0, 0]
    axes = np.array([[0, 0, 1], [0, 0, 1], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 0, 0], [0, 1, 0]], float)
    limits = np.tile([-3.1, 3.1], (7, 1))
    return KinematicChain(Pose(), origins, np.tile(np.eye(3), (7, 1, 1)), axes, limits, Pose(), Pose(),
                          np.zeros(3), np.zeros(3), np.zeros(7))


def two_link_solutions(x, y, L1, L2):
    c2 = (x * x + y * y - L1 * L1 - L2 * L2) / (2 * L1 * L2)
    out = []
    for q2 in (np.arccos(c2), -np.arccos(c2)):
        q1 = np.arctan2(y, x) - np.arctan2(L2 * np.sin(q2), L1 + L2 * np.cos(q2))
        out.append(np.array([q1, q2]))
    return out


def test_ik_planar_two_link_matches_analytic():
    L1, L2 = 0.4, 0.3
    chain = planar_chain(L1, L2)
    rng = np.random.default_rng(10)
    for _ in range(10):
        r = rng.uniform(0.2, 0.65)
        a = rng.uniform(-np.pi, np.pi)
        target = Pose([r * np.cos(a), r * np.sin(a), 0.0], np.eye(3))
        q = np.zeros(7)
        q[1] = 0.3
        for _ in range(500):
            q = ik_step(chain, q, target, 0.5)
            if np.linalg.norm(pose_error(forward_kinematics(chain, q), target)) < 1e-9:
                break
        assert np.linalg.norm(forward_kinematics(chain, q).position - target.position) < 1e-6
        wrapped = (q[:2] + np.pi) % (2 * np.pi) - np.pi
        sols = two_link_solutions(*target.position[:2], L1, L2)
        err = min(np.linalg.norm((wrapped - s + np.pi) % (2 * np.pi) - np.pi) for s in sols)
        assert err < 1e-5


def test_ik_step_reduces_error(chain):
    rng = np.random.default_rng(11)
    n = 0
    while n < 100:
        q = random_q(chain, rng, 0.4)
        if np.linalg.svd(jacobian(chain, q), compute_uv=False)[-1] < 0.05:
            continue  # keep away from singular postures
        n += 1
        target = forward_kinematics(chain, q + rng.normal(0, 0.1, 7))
        before = np.linalg.norm(pose_error(forward_kinematics(chain, q), target))
        after = np.linalg.norm(pose_error(forward_kinematics(chain, ik_step(chain, q, target, 0.1)), target))
        assert after < before


def test_solve_ik_zero_iterations(chain):
    q = chain.home
    _, status, iters = solve_ik_batch(chain, q[None], *(lambda X: (X.position, X.rotation))(forward_kinematics(chain, q)))
    assert status[0] == SUCCESS and iters[0] == 0
    assert np.array_equal(solve_ik(chain, q, forward_kinematics(chain, q)), q)


def test_solve_ik_one_millimetre(chain):
    q = chain.home
    target = forward_kinematics(chain, q).translated([0.001, 0, 0])
    _, status, iters = solve_ik_batch(chain, q[None], target.position, target.rotation, 100, 1e-4, 0.5)
    assert status[0] == SUCCESS and iters[0] <= 10
    out = solve_ik(chain, q, target, step_scale=0.5)
    assert np.linalg.norm(pose_error(forward_kinematics(chain, out), target)) < 1e-4


def test_solve_ik_out_of_reach(chain):
    # fully stretched upward: the remaining error lies outside the Jacobian's range
    q0 = np.zeros(7)
    target = Pose([0.0, 0.0, 3.0], forward_kinematics(chain, q0).rotation)
    with pytest.raises(MaxItersExceeded) as info:
        solve_ik(chain, q0, target)
    assert info.value.iterate == 100


def test_solve_ik_out_of_reach_from_home_fails(chain):
    with pytest.raises(IKFailure):
        solve_ik(chain, chain.home, Pose([0.0, 0.0, 3.0]), max_iters=300)


def test_solve_ik_rejects_bad_tol(chain):
    with pytest.raises(ValueError):
        solve_ik(chain, chain.home, Pose(), tol=0.0)


def test_solve_ik_replay_passes_checks(chain):
    rng = np.random.default_rng(12)
    done = 0
    for _ in range(30):
        q0 = chain.home + rng.normal(0, 0.2, 7)
        target = forward_kinematics(chain, q0 + rng.normal(0, 0.3, 7))
        try:
            solve_ik(chain, q0, target, max_iters=200)
        except Exception:
            continue
        done += 1
        for q in ik_path(chain, q0, target, max_iters=200):
            assert chain.within_limits(q)
            assert not check_self_collision(chain, None, q)
    assert done > 10


# ---------------------------------------------------------------- collision


def sampled_distance(a0, a1, b0, b1, n=201):
    s = np.linspace(0, 1, n)[:, None]
    A = a0 + s * (a1 - a0)
    B = b0 + s * (b1 - b0)
    return np.min(np.linalg.norm(A[:, None] - B[None], axis=-1))


def oracle_collides(chain, q):
    frames, _ = oracle_frames(chain, q)
    caps = chain.geometry.capsules
    world = [(frames[c.link] @ np.append(c.a, 1))[:3] for c in caps], [(frames[c.link] @ np.append(c.b, 1))[:3] for c in caps]
    hits = []
    for i in range(len(caps)):
        for j in range(i + 1, len(caps)):
            if abs(caps[i].link - caps[j].link) < 2:
                continue
            d = sampled_distance(world[0][i], world[1][i], world[0][j], world[1][j])
            hits.append(((caps[i].link, caps[j].link), d - caps[i].radius - caps[j].radius))
    return hits


def test_home_is_collision_free(chain):
    assert not check_self_collision(chain, None, chain.home)
    assert all(m > 0 for _, m in oracle_collides(chain, chain.home))


def test_folded_elbow_collides(chain):
    assert chain.within_limits(FOLDED)
    assert check_self_collision(chain, None, FOLDED)
    hits = [pair for pair, m in oracle_collides(chain, FOLDED) if m < 0]
    assert hits == [(2, 4)]


def test_collision_agrees_with_sampled_oracle(chain):
    rng = np.random.default_rng(13)
    checked = 0
    for _ in range(120):
        q = rng.uniform(chain.lower, chain.upper)
        margins = [m for _, m in oracle_collides(chain, q)]
        if min(abs(m) for m in margins) < 3e-3:
            continue  # too close to call with a sampled oracle
        assert check_self_collision(chain, None, q) == (min(margins) < 0)
        checked += 1
    assert checked > 90


def test_adjacent_links_exempt(chain):
    fat = CollisionGeometry(tuple(Capsule(i, [0, 0, -0.3], [0, 0, 0.3], 0.5) for i in range(0, 8, 1) if i in (2, 3)))
    rng = np.random.default_rng(14)
    for _ in range(50):
        assert not check_self_collision(chain, fat, rng.uniform(chain.lower, chain.upper))


# ---------------------------------------------------------------- chain files


def test_reference_chain_round_trip(tmp_path, chain):
    path = tmp_path / "chain.txt"
    path.write_text(reference_chain_text())
    loaded = load_chain(path)
    assert np.array_equal(loaded.origins, chain.origins)
    assert np.array_equal(loaded.limits, chain.limits)
    assert len(loaded.geometry.capsules) == 8


@pytest.mark.parametrize(
    "edit, line",
    [
        (lambda t: t.replace("joint3.axis = 0 0 1", "joint3.axis = 0 0 one"), "joint3.axis"),
        (lambda t: t.replace("joint2.limits = -2.094 2.094", "joint2.limits = 2 1"), "joint2.limits"),
        (lambda t: t + "\nbogus.key = 1\n", "bogus.key"),
        (lambda t: t + "\nthis line has no equals sign\n", "this line"),
    ],
)
def test_malformed_chain_reports_line(edit, line):
    text = edit(reference_chain_text())
    lineno = next(i for i, l in enumerate(text.splitlines(), 1) if l.startswith(line))
    with pytest.raises(ChainFileError, match=f":{lineno}:"):
        parse_chain(text, "chain.txt")


def test_missing_joint_is_reported():
    text = "\n".join(l for l in reference_chain_text().splitlines() if not l.startswith("joint5.xyz"))
    with pytest.raises(ChainFileError, match="joint5.xyz"):
        parse_chain(text)


def test_chain_needs_seven_joints():
    with pytest.raises(ValueError):
        KinematicChain(Pose(), np.zeros((6, 3)), np.tile(np.eye(3), (6, 1, 1)), np.tile([0, 0, 1.0], (6, 1)),
                       np.tile([-1, 1.0], (6, 1)), Pose(), Pose(), np.zeros(3), np.zeros(3), np.zeros(6))


def test_joint_rotation_oracle_agrees_with_exp():
    rng = np.random.default_rng(15)
    for _ in range(20):
        v = rng.standard_normal(3)
        assert np.allclose(exp_so3(v), expm(skew(v)), atol=1e-12)
