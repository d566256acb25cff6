import numpy as np
import pytest

from canyon_rtk.errors import EmptyBatch
from canyon_rtk.fgo.graph import numeric_jacobians
from canyon_rtk.fgo.factors import ImuFactor
from canyon_rtk.fgo.states import NavState
from canyon_rtk.frames import so3_exp, so3_log, yaw_rotation
from canyon_rtk.imu_preint import (GRAVITY, ImuSample, PreintegratedDelta, integrate, predict,
                                   residual)

from scenes import fine_step_preintegration, imu_signals


def _samples(hz=1000, duration=1.0):
    t = np.arange(0.0, duration + 1e-12, 1.0 / hz)
    w, a = imu_signals(t)
    return t, w, a


def test_constant_acceleration():
    t = np.linspace(0, 1, 11)
    d = integrate((t, np.zeros((11, 3)), np.tile([1.0, 0, 0], (11, 1))))
    np.testing.assert_allclose(d.delta_v, [1, 0, 0], atol=1e-12)
    np.testing.assert_allclose(d.delta_p, [0.5, 0, 0], atol=1e-12)
    np.testing.assert_allclose(d.delta_R, np.eye(3), atol=1e-12)
    assert d.duration == pytest.approx(1.0)


def test_pure_yaw():
    samples = [ImuSample(k * 0.01, [0, 0, np.pi / 2], [0, 0, 0]) for k in range(101)]
    d = integrate(samples)
    np.testing.assert_allclose(d.delta_R, yaw_rotation(np.pi / 2), atol=1e-12)
    assert np.linalg.norm(d.delta_q) == pytest.approx(1.0)


def test_empty_batch():
    with pytest.raises(EmptyBatch):
        integrate([])


def test_zero_duration_rejected():
    with pytest.raises(ValueError):
        PreintegratedDelta(np.zeros(3), np.zeros(3), np.eye(3), np.eye(15), np.eye(15),
                           np.zeros(3), np.zeros(3), 0.0)


def test_single_sample_held_over_interval():
    d = integrate(([0.3], [[0, 0, 0]], [[2.0, 0, 0]]), t_start=0.0, t_end=0.5)
    np.testing.assert_allclose(d.delta_v, [1.0, 0, 0], atol=1e-12)


def test_matches_fine_step_reintegration():
    t, w, a = _samples()
    d = integrate((t, w, a))
    p, v, R = fine_step_preintegration(t, w, a)
    assert np.abs(d.delta_p - p).max() < 1e-6
    assert np.abs(d.delta_v - v).max() < 1e-6
    assert np.abs(so3_log(d.delta_R.T @ R)).max() < 1e-6


def test_residual_zero_for_integrated_states():
    t, w, a = _samples(hz=200, duration=2.0)
    d = integrate((t, w, a))
    x_i = NavState([1, 2, 3], so3_exp([0.1, -0.2, 0.7]), velocity=[3, 0.5, 0])
    x_j = predict(x_i, d)
    assert np.abs(residual(d, x_i, x_j)).max() < 1e-8


def test_position_perturbation_first_order():
    t, w, a = _samples(hz=200)
    d = integrate((t, w, a))
    x_i = NavState(np.zeros(3), so3_exp([0.3, 0.1, -1.0]), velocity=[1, 0, 0])
    x_j = predict(x_i, d)
    moved = NavState(x_j.position + [1, 0, 0], x_j.rotation, x_j.velocity)
    dr = residual(d, x_i, moved) - residual(d, x_i, x_j)
    np.testing.assert_allclose(dr[:3], x_i.rotation.T @ [1, 0, 0], atol=1e-12)


def _random_state(rng):
    return NavState(rng.normal(scale=5, size=3), so3_exp(rng.normal(size=3)),
                    rng.normal(size=3), rng.normal(scale=0.05, size=3),
                    rng.normal(scale=0.01, size=3))


def test_residual_jacobians():
    rng = np.random.default_rng(0)
    t, w, a = _samples(hz=100)
    d = integrate((t, w, a), bias_acc=[0.01, 0, -0.02], bias_gyro=[0.001, 0.002, 0])
    for _ in range(20):
        f = ImuFactor("i", "j", d)
        x_i = _random_state(rng)
        x_j = predict(x_i, d).retract(rng.normal(scale=0.1, size=15))
        values = {"i": x_i, "j": x_j}
        _, Js = f.linearize(values)
        for J, Jn in zip(Js, numeric_jacobians(f, values, h=1e-4)):
            assert np.linalg.norm(J - Jn) <= 1e-5 * np.linalg.norm(Jn)


def test_first_order_bias_correction():
    t, w, a = _samples(hz=200)
    d0 = integrate((t, w, a))
    rng = np.random.default_rng(1)
    for scale in (1e-3, 1e-4):
        dba, dbw = (rng.normal(size=3) for _ in range(2))
        dba *= scale / np.linalg.norm(dba)
        dbw *= scale / np.linalg.norm(dbw)
        d1 = integrate((t, w, a), bias_acc=dba, bias_gyro=dbw)
        dp, dv, dR = d0.corrected(dba, dbw)
        err = max(np.abs(dp - d1.delta_p).max(), np.abs(dv - d1.delta_v).max(),
                  np.abs(so3_log(dR.T @ d1.delta_R)).max())
        assert err < 10 * scale ** 2


def test_covariance_grows_with_duration():
    t, w, a = _samples(hz=100, duration=3.0)
    traces = [np.trace(integrate((t[:n], w[:n], a[:n])).covariance) for n in (20, 50, 100, 200, 301)]
    assert all(b > a for a, b in zip(traces, traces[1:]))
    C = integrate((t, w, a)).covariance
    np.testing.assert_allclose(C, C.T)
    assert np.linalg.eigvalsh(C).min() > 0


def test_gravity_default():
    np.testing.assert_allclose(GRAVITY, [0, 0, -9.81])
