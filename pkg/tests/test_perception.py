import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from swabservo.errors import DimensionMismatch, IllConditionedRay, MissingDepth
from swabservo.manifold import exp_so3, rotation_angle, rotx
from swabservo.perception import (
    DecodedFacePose,
    OutlierGate,
    SwabPose,
    backproject_nostril,
    decode_face,
    fit_swab,
    morphable_vertices,
    recover_rotation,
    relative_target_stage2,
    relative_target_stage3,
)
from swabservo.scene import CameraModel, FaceObservation, SwabObservation, nominal_swab_camera, observe_swab, synthesize_face

from .helpers import random_rotation

K = CameraModel().K
unit3 = st.tuples(*[st.floats(-1, 1)] * 3).filter(lambda v: 0.1 < np.linalg.norm(v))


def angle_between(a, b):
    a, b = np.asarray(a) / np.linalg.norm(a), np.asarray(b) / np.linalg.norm(b)
    return float(np.arctan2(np.linalg.norm(np.cross(a, b)), np.dot(a, b)))


# ---------------------------------------------------------------- rotation


def test_recover_identity_on_axis():
    P = np.hstack([np.eye(3), np.zeros((3, 1))])
    assert np.allclose(recover_rotation(P, [0, 0, 1.0]), np.eye(3), atol=1e-12)


def test_recover_scaled_rotation():
    R = exp_so3([0.1, -0.3, 0.2])
    P = np.hstack([3 * R, np.array([[0.1], [0.2], [0.5]])])
    assert np.allclose(recover_rotation(P, [0, 0, 0.5]), R, atol=1e-12)


@given(st.floats(0.01, 100), st.integers(0, 10**6))
def test_recover_scale_invariant(scale, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((3, 4))
    p = [rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(0.2, 1.0)]
    assert np.allclose(recover_rotation(scale * A, p), recover_rotation(A, p), atol=1e-9)


# ---------------------------------------------------------------- nostril


def test_backproject_principal_point():
    assert np.allclose(backproject_nostril(K, K[0, 2], K[1, 2], 0.3), [0, 0, 0.3])


def test_backproject_pixel_offset():
    K600 = np.array([[600.0, 0, 320], [0, 600, 240], [0, 0, 1]])
    assert np.allclose(backproject_nostril(K600, 420, 240, 0.3), [0.05, 0, 0.3])


def test_backproject_round_trip():
    rng = np.random.default_rng(0)
    cam = CameraModel()
    for _ in range(100):
        X = np.array([rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), rng.uniform(0.2, 1.0)])
        c, r = cam.project(X)
        assert np.allclose(backproject_nostril(K, c, r, X[2]), X, atol=1e-12)


@pytest.mark.parametrize("depth", [None, float("nan")])
def test_backproject_missing_depth(depth):
    with pytest.raises(MissingDepth):
        backproject_nostril(K, 320, 240, depth)


# ---------------------------------------------------------------- swab


def swab_obs(tip_px, shaft_px, tip, shaft):
    return SwabObservation(np.asarray(tip_px, float), np.asarray(shaft_px, float), np.asarray(tip, float),
                           np.asarray(shaft, float), np.asarray(tip, float), np.asarray(shaft, float))


def test_fit_on_ray_points_unchanged():
    cam = CameraModel()
    tip, shaft = np.array([0, 0.025, 0.2]), np.array([0, 0.025, 0.13])
    fit = fit_swab(swab_obs(cam.project(tip), cam.project(shaft), tip, shaft), K)
    assert np.allclose(fit.tip, tip, atol=1e-12) and np.allclose(fit.shaft, shaft, atol=1e-12)


def test_fit_off_ray_is_perpendicular_foot():
    cam = CameraModel()
    ray_pt = np.array([0.01, 0.02, 0.2])
    tip = ray_pt + np.array([0.003, -0.002, 0.0])
    shaft = np.array([0, 0.025, 0.13])
    fit = fit_swab(swab_obs(cam.project(ray_pt), cam.project(shaft), tip, shaft), K)
    d = ray_pt / np.linalg.norm(ray_pt)
    assert np.allclose(fit.tip, np.dot(tip, d) * d, atol=1e-12)
    # least-squares optimality along the ray
    for s in (0.999, 1.001):
        assert np.linalg.norm(s * fit.tip - tip) > np.linalg.norm(fit.tip - tip)


def test_fit_recovers_perturbed_swab(chain):
    cam = CameraModel()
    swab = nominal_swab_camera(chain)
    for seed in range(1000):
        obs = observe_swab(cam, swab, seed)
        fit = fit_swab(obs, K)
        assert np.linalg.norm(fit.tip - obs.tip_true) < 0.002
        assert np.rad2deg(angle_between(fit.direction, obs.tip_true - obs.shaft_true)) < 1.0


def test_fit_degenerate():
    tip = np.array([0, 0, 0.2])
    with pytest.raises(IllConditionedRay):
        fit_swab(swab_obs([320, 240], [320, 240], tip, tip + [0, 0, -0.05]), K)
    with pytest.raises(IllConditionedRay):
        fit_swab(swab_obs([10, 240], [320, 240], [0.2, 0, 0.01], [0, 0, 0.1]), K)


# ---------------------------------------------------------------- targets


def decoded_at_standoff(pitch=0.2, standoff=0.3):
    return DecodedFacePose(rotx(-pitch), np.array([0, 0, standoff]))


def test_stage2_zero_at_standoff():
    err = relative_target_stage2(decoded_at_standoff())
    assert err.position_error < 1e-12 and err.rotation_error < 1e-12


def test_stage2_too_far():
    err = relative_target_stage2(decoded_at_standoff(standoff=0.4))
    assert np.allclose(err.translation, [0, 0, 0.1], atol=1e-12)
    assert err.rotation_error < 1e-12


@given(st.integers(0, 10**6))
def test_stage2_pose_composition(seed):
    rng = np.random.default_rng(seed)
    dec = DecodedFacePose(random_rotation(rng), rng.uniform(-0.3, 0.3, 3) + [0, 0, 0.5])
    err = relative_target_stage2(dec, 0.3, 0.2)
    # from the commanded camera, the nostril lies on the optical axis at the standoff
    assert np.allclose(err.rotation.T @ (dec.p - err.translation), [0, 0, 0.3], atol=1e-12)
    # and the camera axes carry the pitched face frame
    assert np.allclose(err.rotation.T @ dec.R @ rotx(0.2), np.eye(3), atol=1e-12)


def test_stage3_aligned_is_zero():
    dec = decoded_at_standoff(standoff=0.25)
    n = dec.R @ rotx(0.2)[:, 2]
    swab = SwabPose.from_points(dec.p, dec.p - 0.07 * n)
    err = relative_target_stage3(dec, swab)
    assert err.position_error < 1e-12 and err.rotation_error < 1e-12
    assert np.allclose(err.point, dec.p)


def test_stage3_short_tip():
    dec = decoded_at_standoff(standoff=0.25)
    n = dec.R @ rotx(0.2)[:, 2]
    tip = dec.p - 0.10 * n
    err = relative_target_stage3(dec, SwabPose.from_points(tip, tip - 0.07 * n))
    assert np.allclose(err.translation, 0.10 * n, atol=1e-12)


@given(st.integers(0, 10**6))
def test_stage3_rotation_aligns_swab(seed):
    rng = np.random.default_rng(seed)
    dec = DecodedFacePose(random_rotation(rng), rng.uniform(-0.1, 0.1, 3) + [0, 0, 0.3])
    tip = rng.uniform(-0.05, 0.05, 3) + [0, 0, 0.2]
    d = rng.standard_normal(3)
    swab = SwabPose.from_points(tip, tip - 0.07 * d / np.linalg.norm(d))
    n = dec.R @ rotx(0.2)[:, 2]
    if np.dot(swab.direction, n) < -0.999:
        return
    err = relative_target_stage3(dec, swab)
    assert np.allclose(err.rotation @ swab.direction, n, atol=1e-9)
    assert err.rotation_error <= angle_between(swab.direction, n) + 1e-9


# ---------------------------------------------------------------- morphable model


def test_morphable_basis_columns():
    model, _ = synthesize_face(0)
    assert np.array_equal(morphable_vertices(model, np.zeros(model.n_basis)), model.mean)
    for i in range(model.n_basis):
        e = np.zeros(model.n_basis)
        e[i] = 1.0
        expected = model.mean + model.basis[:, i].reshape(-1, 3)
        assert np.allclose(morphable_vertices(model, e), expected, atol=1e-15)


def test_morphable_subset_bit_exact():
    model, face = synthesize_face(4)
    full = morphable_vertices(model, face.beta)
    rows = [model.nostrils[0], 3, 17]
    assert np.array_equal(morphable_vertices(model, face.beta, rows), full[rows])


def test_morphable_dimension_mismatch():
    model, _ = synthesize_face(0)
    with pytest.raises(DimensionMismatch):
        morphable_vertices(model, np.zeros(model.n_basis + 1))


# ---------------------------------------------------------------- decode and gate


def observation(R, valid=True, depth=0.4):
    P = np.hstack([1500 * R, np.zeros((3, 1))])
    return FaceObservation(P, np.array([320.0, 240.0]), depth, np.array([0, 0, 0.4]), valid, 0.0)


def test_decode_invalid_inputs():
    assert not decode_face(observation(np.eye(3), valid=False), K).valid
    assert not decode_face(observation(np.eye(3), depth=float("nan")), K).valid
    ok = decode_face(observation(np.eye(3)), K)
    assert ok.valid and np.allclose(ok.p, [0, 0, 0.4])


def test_gate_rejects_jump_then_reseeds():
    gate = OutlierGate(angle=0.5, reset_after=5)
    flipped = exp_so3([0, 2.0, 0])
    assert decode_face(observation(np.eye(3)), K, gate).valid
    assert decode_face(observation(exp_so3([0, 0.3, 0])), K, gate).valid
    for _ in range(5):
        d = decode_face(observation(flipped), K, gate)
        assert d.gated and not d.valid
    assert decode_face(observation(flipped), K, gate).valid
    assert rotation_angle(gate.last.T @ flipped) < 1e-9
