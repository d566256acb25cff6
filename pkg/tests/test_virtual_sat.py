import numpy as np
import pytest

from canyon_rtk.errors import DegeneratePlane, NoRealSatellites
from canyon_rtk.fgo.factors import VsFactor
from canyon_rtk.fgo.graph import numeric_jacobians
from canyon_rtk.fgo.states import NavState
from canyon_rtk.frames import RigidTransform, so3_exp
from canyon_rtk.virtual_sat import (PlanarLandmark, PlaneParams, associate_batch,
                                    associate_planes, extract_planar_features, planar_mask,
                                    point_to_plane_residual, select_vs, vs_sigma, vs_weight)

UNIT = PlanarLandmark([0, 0, 0], [1, 0, 0], [0, 1, 0])


def _plane_cloud(rng, n=2000, noise=0.01):
    xy = rng.uniform(-5, 5, size=(n, 2))
    return np.c_[xy, rng.normal(0, noise, n)]


def _random_rigid(rng):
    return RigidTransform(so3_exp(rng.normal(size=3)), rng.normal(scale=10, size=3))


def test_unit_plane_distance():
    I = RigidTransform.identity()
    assert point_to_plane_residual([0, 0, 1], UNIT, I) == pytest.approx(1.0)
    assert point_to_plane_residual([0.3, -2, 0], UNIT, I) == pytest.approx(0.0, abs=1e-12)


def test_pose_and_extrinsic_applied():
    pose = RigidTransform(np.eye(3), [0, 0, 2.0])
    ext = RigidTransform(np.eye(3), [0, 0, 0.5])
    assert point_to_plane_residual([0, 0, 0], UNIT, pose, ext) == pytest.approx(2.5)


def test_rigid_invariance():
    rng = np.random.default_rng(0)
    I = RigidTransform.identity()
    for _ in range(50):
        a, b, c, p = rng.normal(size=(4, 3))
        d0 = point_to_plane_residual(p, PlanarLandmark(a, b, c), I)
        T = _random_rigid(rng)
        d1 = point_to_plane_residual(T.apply(p), PlanarLandmark(*T.apply(np.stack([a, b, c]))), I)
        assert d1 == pytest.approx(d0, rel=1e-9, abs=1e-9)


def test_zero_iff_on_plane():
    rng = np.random.default_rng(1)
    I = RigidTransform.identity()
    for _ in range(20):
        a, b, c = rng.normal(size=(3, 3))
        s, t = rng.normal(size=2)
        on = a + s * (b - a) + t * (c - a)
        lm = PlanarLandmark(a, b, c)
        assert point_to_plane_residual(on, lm, I) < 1e-9
        assert point_to_plane_residual(on + 1e-3 * lm.normal, lm, I) == pytest.approx(1e-3)


def test_degenerate_landmark():
    with pytest.raises(DegeneratePlane):
        PlanarLandmark([0, 0, 0], [1, 1, 1], [2, 2, 2])


def test_plane_features_qualify():
    rng = np.random.default_rng(2)
    pts = _plane_cloud(rng)
    mask = planar_mask(pts)
    interior = np.all(np.abs(pts[:, :2]) < 4.0, axis=1)
    assert mask[interior].mean() >= 0.9


def test_blob_features_rejected():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(2000, 3))
    assert planar_mask(pts).mean() <= 0.05


def test_too_few_points():
    assert extract_planar_features(np.zeros((5, 3)) + np.arange(5)[:, None]).shape == (0, 3)


def test_associate_near_plane():
    rng = np.random.default_rng(4)
    cloud = _plane_cloud(rng, noise=0.002)
    lm = associate_planes([0.2, -0.4, 0.02], cloud)
    assert lm is not None
    assert abs(lm.normal[2]) > 0.999
    d = point_to_plane_residual([0.2, -0.4, 0.02], lm, RigidTransform.identity())
    assert d == pytest.approx(0.02, abs=0.005)


def test_associate_outside_gate():
    rng = np.random.default_rng(5)
    assert associate_planes([0, 0, 5.0], _plane_cloud(rng)) is None


def test_associate_skips_collinear_pairs():
    # the nearest neighbours lie on a line; the best triangle uses the off-line points
    line = np.c_[np.linspace(-0.3, 0.3, 7), np.zeros(7), np.zeros(7)]
    off = np.array([[0.0, 0.4, 0.0], [0.1, -0.45, 0.0], [-0.2, 0.5, 0.0]])
    anchors, ok = associate_batch([[0.0, 0.0, 0.01]], np.r_[line, off], PlaneParams(assoc_neigh=10))
    assert ok[0]
    lm = PlanarLandmark(*anchors[0])
    assert abs(lm.normal[2]) == pytest.approx(1.0)


def test_select_vs_counts_and_determinism():
    assert len(select_vs(500, 200, 3)) == 200
    assert len(set(select_vs(500, 200, 3))) == 200
    np.testing.assert_array_equal(select_vs(list(range(150)), 200, 3), np.arange(150))
    np.testing.assert_array_equal(select_vs(500, 200, 9), select_vs(500, 200, 9))


def test_select_vs_uniform():
    counts = np.zeros(10)
    for seed in range(10_000):
        counts[select_vs(10, 5, seed)] += 1
    sigma = np.sqrt(10_000 * 0.25)
    assert np.all(np.abs(counts - 5000) <= 3 * sigma)


def test_vs_weight():
    assert vs_weight(200, 10) == 20
    assert vs_weight(7, 7) == 1
    with pytest.raises(NoRealSatellites):
        vs_weight(200, 0)
    assert vs_sigma(0.1, 200, 0) == pytest.approx(0.1)


def test_aggregate_information_scales_with_real_count():
    for n_v in (50, 200, 400):
        for n_real in (1, 5, 12):
            total = n_v / vs_sigma(0.1, n_v, n_real) ** 2
            # unit information per row is 1/0.1^2
            assert total == pytest.approx(n_real * 100.0)


def test_vs_factor_jacobian():
    rng = np.random.default_rng(6)
    ext = RigidTransform(so3_exp([0.01, -0.02, 0.5]), [0.1, 0.0, 0.3])
    for _ in range(100):
        pts = rng.normal(scale=5, size=(4, 3))
        anchors = rng.normal(scale=5, size=(4, 3, 3))
        f = VsFactor("x", pts, anchors, 0.1, ext)
        x = NavState(rng.normal(scale=20, size=3), so3_exp(rng.normal(size=3)))
        values = {"x": x}
        _, (J,) = f.linearize(values)
        (Jn,) = numeric_jacobians(f, values, h=1e-4)
        assert np.linalg.norm(J - Jn) <= 1e-6 * max(np.linalg.norm(Jn), 1.0)


def test_vs_factor_matches_residual():
    rng = np.random.default_rng(7)
    ext = RigidTransform(so3_exp([0, 0, 0.3]), [0.2, 0.1, 0.4])
    lm = PlanarLandmark(*rng.normal(size=(3, 3)))
    p = rng.normal(size=3)
    x = NavState(rng.normal(size=3), so3_exp(rng.normal(size=3)))
    f = VsFactor("x", p[None], lm.anchors[None], 0.1, ext)
    r = f.error({"x": x})[0]
    d = point_to_plane_residual(p, lm, RigidTransform(x.rotation, x.position), ext)
    assert abs(r) * 0.1 == pytest.approx(d, rel=1e-9)
