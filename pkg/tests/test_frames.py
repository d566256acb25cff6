import numpy as np
import pytest

from canyon_rtk.errors import CoincidentPoints
from canyon_rtk.frames import (GeodeticOrigin, RigidTransform, ecef_to_enu, elevation_azimuth,
                               enu_rotation, enu_to_ecef, los_unit_vector, quat_to_rot,
                               right_jacobian, right_jacobian_inv, rot_to_quat, so3_exp, so3_log)

EQUATOR = GeodeticOrigin(0.0, 0.0, 0.0)


def test_equator_origin_is_on_x_axis():
    np.testing.assert_allclose(EQUATOR.origin_ecef, [6378137.0, 0.0, 0.0], atol=1e-9)


@pytest.mark.parametrize("enu, ecef", [
    ([0, 0, 0], [6378137.0, 0, 0]),
    ([0, 0, 100], [6378237.0, 0, 0]),
    ([100, 0, 0], [6378137.0, 100, 0]),
    ([0, 100, 0], [6378137.0, 0, 100]),
])
def test_enu_to_ecef_axes_at_equator(enu, ecef):
    np.testing.assert_allclose(enu_to_ecef(enu, EQUATOR), ecef, atol=1e-9)
    np.testing.assert_allclose(ecef_to_enu(ecef, EQUATOR), enu, atol=1e-9)


def test_rotation_orthonormal_for_random_origins():
    rng = np.random.default_rng(1)
    for lat, lon in zip(rng.uniform(-np.pi / 2, np.pi / 2, 50), rng.uniform(-np.pi, np.pi, 50)):
        R = enu_rotation(lat, lon)
        np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0)


def test_round_trip_within_100_km():
    origin = GeodeticOrigin.from_degrees(22.3, 114.17, 12.0)
    rng = np.random.default_rng(2)
    p = rng.uniform(-1e5, 1e5, (200, 3))
    np.testing.assert_allclose(ecef_to_enu(enu_to_ecef(p, origin), origin), p, atol=1e-9)
    np.testing.assert_allclose(ecef_to_enu(origin.origin_ecef, origin), 0.0, atol=1e-9)


def test_origin_range_checked():
    with pytest.raises(ValueError):
        GeodeticOrigin(2.0, 0.0)


def test_los_unit_vector():
    np.testing.assert_allclose(los_unit_vector([0, 0, 0], [0, 0, 2.02e7]), [0, 0, 1])
    np.testing.assert_allclose(los_unit_vector([1e7, 0, 0], [2e7, 0, 0]), [1, 0, 0])
    rng = np.random.default_rng(3)
    for _ in range(20):
        a, b = rng.normal(size=(2, 3)) * 1e6
        assert np.linalg.norm(los_unit_vector(a, b)) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(CoincidentPoints):
        los_unit_vector([1, 2, 3], [1, 2, 3])


def test_elevation_azimuth_cases():
    el, _ = elevation_azimuth([0, 0, 0], [0, 0, 5])
    assert el == pytest.approx(np.pi / 2)
    assert elevation_azimuth([0, 0, 0], [1, 0, 0]) == pytest.approx((0.0, np.pi / 2))
    assert elevation_azimuth([0, 0, 0], [0, 1, 1]) == pytest.approx((np.pi / 4, 0.0))
    _, az = elevation_azimuth([0, 0, 0], [-1, 0, 0])
    assert az == pytest.approx(3 * np.pi / 2)
    with pytest.raises(CoincidentPoints):
        elevation_azimuth([1, 1, 1], [1, 1, 1])


def test_elevation_azimuth_scale_invariant():
    rng = np.random.default_rng(4)
    for _ in range(20):
        d = rng.normal(size=3)
        s = rng.uniform(0.1, 1e4)
        assert elevation_azimuth([0, 0, 0], d) == pytest.approx(elevation_azimuth([0, 0, 0], s * d))


def test_so3_exp_log_round_trip():
    rng = np.random.default_rng(5)
    for _ in range(50):
        phi = rng.normal(size=3)
        phi *= rng.uniform(0, 3.0) / np.linalg.norm(phi)
        np.testing.assert_allclose(so3_log(so3_exp(phi)), phi, atol=1e-10)
    np.testing.assert_allclose(so3_log(np.eye(3)), 0.0)


def test_right_jacobian_inverse_and_definition():
    rng = np.random.default_rng(6)
    for _ in range(20):
        phi = rng.normal(size=3) * 0.7
        np.testing.assert_allclose(right_jacobian(phi) @ right_jacobian_inv(phi), np.eye(3),
                                   atol=1e-10)
        d = rng.normal(size=3) * 1e-6
        lhs = so3_exp(phi + d)
        rhs = so3_exp(phi) @ so3_exp(right_jacobian(phi) @ d)
        np.testing.assert_allclose(lhs, rhs, atol=1e-11)


def test_quaternion_round_trip():
    rng = np.random.default_rng(7)
    for _ in range(50):
        R = so3_exp(rng.normal(size=3))
        q = rot_to_quat(R)
        assert q[3] >= 0 and np.linalg.norm(q) == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(quat_to_rot(q), R, atol=1e-12)


def test_rigid_transform_algebra():
    rng = np.random.default_rng(8)
    a = RigidTransform(so3_exp(rng.normal(size=3)), rng.normal(size=3))
    b = RigidTransform(so3_exp(rng.normal(size=3)), rng.normal(size=3))
    pts = rng.normal(size=(5, 3))
    np.testing.assert_allclose(a.compose(b).apply(pts), a.apply(b.apply(pts)), atol=1e-12)
    np.testing.assert_allclose(a.inverse().apply(a.apply(pts)), pts, atol=1e-12)
    with pytest.raises(ValueError):
        RigidTransform(np.array([0.0, 0.0, 0.0, 2.0]), np.zeros(3))
