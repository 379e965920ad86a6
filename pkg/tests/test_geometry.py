import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from vaguide.geometry import (
    Action6,
    Pose,
    apply_action,
    compose,
    interpolate,
    inverse,
    pose_distance,
    relative_action,
)


def random_pose(rng, pitch_limit_deg=85.0):
    """Oracle-side pose builder: Euler pitch kept away from the gimbal band."""
    pos = rng.uniform(-100.0, 100.0, size=3)
    rx = rng.uniform(-179.0, 179.0)
    ry = rng.uniform(-pitch_limit_deg, pitch_limit_deg)
    rz = rng.uniform(-179.0, 179.0)
    rot = Rotation.from_euler("ZYX", [rz, ry, rx], degrees=True)
    t = np.eye(4)
    t[:3, :3] = rot.as_matrix()
    t[:3, 3] = pos
    return Pose.from_matrix(t), t


def matrix_to_action(t):
    """Oracle: 4x4 relative transform -> [t (mm), intrinsic ZYX Euler (deg)]."""
    rz, ry, rx = Rotation.from_matrix(t[:3, :3]).as_euler("ZYX", degrees=True)
    return np.concatenate([t[:3, 3], [rx, ry, rz]])


def test_compose_identity():
    rng = np.random.default_rng(7)
    p, _ = random_pose(rng)
    assert compose(Pose.identity(), p).allclose(p)
    assert compose(p, Pose.identity()).allclose(p)


def test_compose_inverse_is_identity():
    rng = np.random.default_rng(8)
    for _ in range(50):
        p, _ = random_pose(rng)
        assert compose(p, inverse(p)).allclose(Pose.identity())


def test_compose_pure_translations():
    a = Pose(np.array([1.0, 0.0, 0.0]), np.array([1.0, 0, 0, 0]))
    b = Pose(np.array([0.0, 2.0, 0.0]), np.array([1.0, 0, 0, 0]))
    c = compose(a, b)
    np.testing.assert_allclose(c.position, [1.0, 2.0, 0.0], atol=1e-12)


def test_compose_matches_matrix_oracle():
    rng = np.random.default_rng(9)
    for _ in range(100):
        a, ta = random_pose(rng)
        b, tb = random_pose(rng)
        np.testing.assert_allclose(compose(a, b).matrix(), ta @ tb, atol=1e-9)


def test_compose_associative():
    rng = np.random.default_rng(10)
    for _ in range(100):
        a, _ = random_pose(rng)
        b, _ = random_pose(rng)
        c, _ = random_pose(rng)
        lhs = compose(compose(a, b), c)
        rhs = compose(a, compose(b, c))
        np.testing.assert_allclose(lhs.matrix(), rhs.matrix(), atol=1e-12)


def test_inverse_matches_matrix_oracle():
    rng = np.random.default_rng(11)
    for _ in range(100):
        p, t = random_pose(rng)
        np.testing.assert_allclose(inverse(p).matrix(), np.linalg.inv(t), atol=1e-9)


def test_inverse_pure_translation():
    p = Pose(np.array([5.0, 0.0, 0.0]), np.array([1.0, 0, 0, 0]))
    np.testing.assert_allclose(inverse(p).position, [-5.0, 0.0, 0.0], atol=1e-12)


def test_relative_action_same_pose_exact_zero():
    rng = np.random.default_rng(12)
    p, _ = random_pose(rng)
    a = relative_action(p, p)
    assert np.all(a.to_array() == 0.0)


def test_relative_action_from_identity_is_world_frame():
    pj = Pose(np.array([10.0, 0.0, 0.0]), np.array([1.0, 0, 0, 0]))
    a = relative_action(Pose.identity(), pj)
    np.testing.assert_allclose(a.to_array(), [10, 0, 0, 0, 0, 0], atol=1e-12)


def test_relative_action_matches_matrix_oracle():
    rng = np.random.default_rng(13)
    for _ in range(200):
        pi, ti = random_pose(rng)
        pj, tj = random_pose(rng)
        got = relative_action(pi, pj).to_array()
        want = matrix_to_action(np.linalg.inv(ti) @ tj)
        np.testing.assert_allclose(got, want, atol=1e-8)


def test_apply_action_zero_and_translation_only():
    rng = np.random.default_rng(14)
    p, _ = random_pose(rng)
    assert apply_action(p, Action6.zero()).allclose(p)
    a = Action6(np.array([3.0, -1.0, 2.0]), np.zeros(3))
    q = apply_action(Pose.identity(), a)
    np.testing.assert_allclose(q.position, a.translation, atol=1e-12)


def quat_angle_deg(qa, qb):
    """Rotation angle between unit quaternions, precise near identity."""
    d = min(np.linalg.norm(qa - qb), np.linalg.norm(qa + qb))
    return np.degrees(4.0 * np.arcsin(min(1.0, d / 2.0)))


def test_action_round_trip_1000_random_pairs():
    rng = np.random.default_rng(15)
    n = 0
    while n < 1000:
        pi, _ = random_pose(rng)
        pj, _ = random_pose(rng)
        a = relative_action(pi, pj)
        if abs(a.rotation[1]) >= 85.0:  # stay off the Euler singular band
            continue
        n += 1
        back = apply_action(pi, a)
        assert np.linalg.norm(back.position - pj.position) < 1e-9
        assert quat_angle_deg(back.orientation, pj.orientation) < 1e-9


def test_interpolate_endpoints_and_midpoint():
    rng = np.random.default_rng(16)
    p0, _ = random_pose(rng)
    p1, _ = random_pose(rng)
    assert interpolate(p0, p1, 0.0).allclose(p0)
    assert interpolate(p0, p1, 1.0).allclose(p1)
    a = Pose(np.array([2.0, 0.0, 0.0]), np.array([1.0, 0, 0, 0]))
    b = Pose(np.array([0.0, 4.0, 0.0]), np.array([1.0, 0, 0, 0]))
    mid = interpolate(a, b, 0.5)
    np.testing.assert_allclose(mid.position, [1.0, 2.0, 0.0], atol=1e-12)
    with pytest.raises(ValueError):
        interpolate(p0, p1, 1.5)


def test_pose_distance_basics():
    rng = np.random.default_rng(17)
    p, _ = random_pose(rng)
    assert pose_distance(p, p) == (0.0, 0.0)
    a = Pose(np.zeros(3), np.array([1.0, 0, 0, 0]))
    b = Pose(np.array([3.0, 4.0, 0.0]), np.array([1.0, 0, 0, 0]))
    assert pose_distance(a, b) == pytest.approx((5.0, 0.0))


def test_pose_distance_90deg_rotation():
    # quaternion dot-product oracle: 90 deg about x -> q = (cos45, sin45, 0, 0)
    q = np.array([np.cos(np.pi / 4), np.sin(np.pi / 4), 0.0, 0.0])
    a = Pose(np.zeros(3), np.array([1.0, 0, 0, 0]))
    b = Pose(np.zeros(3), q)
    trans, rot = pose_distance(a, b)
    assert trans == 0.0
    assert rot == pytest.approx(90.0, abs=1e-9)


def test_pose_distance_symmetric_and_triangle():
    rng = np.random.default_rng(18)
    for _ in range(100):
        a, _ = random_pose(rng)
        b, _ = random_pose(rng)
        c, _ = random_pose(rng)
        dab = pose_distance(a, b)
        dba = pose_distance(b, a)
        assert dab == dba
        dac = pose_distance(a, c)
        dcb = pose_distance(c, b)
        assert dab[0] <= dac[0] + dcb[0] + 1e-9
        assert dab[1] <= dac[1] + dcb[1] + 1e-9


def test_quaternion_canonical_sign_and_norm():
    p = Pose(np.zeros(3), np.array([-0.5, 0.5, 0.5, 0.5]))
    assert p.orientation[0] >= 0.0
    assert abs(np.linalg.norm(p.orientation) - 1.0) < 1e-9


def test_action_rotation_wrapped():
    a = Action6(np.zeros(3), np.array([190.0, -181.0, 360.0]))
    np.testing.assert_allclose(a.rotation, [-170.0, 179.0, 0.0], atol=1e-12)
