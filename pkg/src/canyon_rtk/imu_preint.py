"""On-manifold IMU preintegration between consecutive keyframes.

Deltas are expressed in the body frame of the first keyframe with gravity
excluded; gravity enters in :func:`residual` and :func:`predict`. The
integrator holds the inputs piecewise linear between samples: rotation
uses the midpoint rate, velocity the trapezoid rule and position the exact
double integral of a linear acceleration profile. Covariance and bias
Jacobians come from the exact first-order linearisation of that discrete
map, so the bias correction is accurate to second order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyBatch
from .fgo.states import BA, BW, NAV_DIM, P, TH, V, NavState
from .frames import right_jacobian, right_jacobian_inv, rot_to_quat, skew, so3_exp, so3_log

GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass
class ImuSample:
    timestamp: float
    angular_velocity: np.ndarray
    linear_acceleration: np.ndarray


@dataclass(frozen=True)
class ImuNoise:
    """Continuous-time noise densities."""

    accel_noise: float = 2e-3  # m/s^2/sqrt(Hz)
    gyro_noise: float = 2e-4  # rad/s/sqrt(Hz)
    accel_bias_rw: float = 5e-4  # m/s^3/sqrt(Hz)
    gyro_bias_rw: float = 2e-5  # rad/s^2/sqrt(Hz)


@dataclass
class PreintegratedDelta:
    delta_p: np.ndarray
    delta_v: np.ndarray
    delta_R: np.ndarray
    covariance: np.ndarray
    jacobian: np.ndarray
    bias_acc_lin: np.ndarray
    bias_gyro_lin: np.ndarray
    duration: float

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("preintegration duration must be positive")
        C = self.covariance
        self.covariance = 0.5 * (C + C.T)

    @property
    def delta_q(self):
        return rot_to_quat(self.delta_R)

    @property
    def sqrt_information(self):
        if not hasattr(self, "_sqrt_info"):
            info = np.linalg.inv(self.covariance)
            info = 0.5 * (info + info.T)
            self._sqrt_info = np.linalg.cholesky(info).T
        return self._sqrt_info

    def corrected(self, bias_acc, bias_gyro):
        """First-order bias-corrected ``(dp, dv, dR)``."""
        dba = np.asarray(bias_acc) - self.bias_acc_lin
        dbw = np.asarray(bias_gyro) - self.bias_gyro_lin
        J = self.jacobian
        dp = self.delta_p + J[P, BA] @ dba + J[P, BW] @ dbw
        dv = self.delta_v + J[V, BA] @ dba + J[V, BW] @ dbw
        dR = self.delta_R @ so3_exp(J[TH, BW] @ dbw)
        return dp, dv, dR


def _as_arrays(samples):
    if isinstance(samples, tuple) and len(samples) == 3:
        t, w, a = (np.asarray(x, dtype=float) for x in samples)
        return t.ravel(), w.reshape(-1, 3), a.reshape(-1, 3)
    samples = list(samples)
    if not samples:
        return np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3))
    t = np.array([s.timestamp for s in samples], dtype=float)
    w = np.array([s.angular_velocity for s in samples], dtype=float)
    a = np.array([s.linear_acceleration for s in samples], dtype=float)
    return t, w, a


def slice_samples(times, gyro, accel, t0, t1):
    """Samples covering exactly ``[t0, t1]``; boundaries linearly interpolated."""
    times = np.asarray(times, dtype=float)
    inside = (times > t0) & (times < t1)
    tt = np.concatenate([[t0], times[inside], [t1]])
    ww = np.column_stack([np.interp(tt, times, gyro[:, i]) for i in range(3)])
    aa = np.column_stack([np.interp(tt, times, accel[:, i]) for i in range(3)])
    return tt, ww, aa


def integrate(samples, bias_acc=None, bias_gyro=None, noise: ImuNoise = ImuNoise(),
              t_start=None, t_end=None):
    """Preintegrate a batch of IMU samples.

    ``samples`` is a sequence of :class:`ImuSample` or a ``(t, gyro, accel)``
    tuple of arrays. When ``t_start``/``t_end`` are given the batch is
    resampled onto that interval (a single sample is then held constant).
    """
    t, w, a = _as_arrays(samples)
    if t.size == 0:
        raise EmptyBatch("no IMU samples to integrate")
    if np.any(np.diff(t) <= 0):
        raise ValueError("IMU timestamps must be strictly increasing")
    if t_start is not None or t_end is not None:
        t0 = t[0] if t_start is None else float(t_start)
        t1 = t[-1] if t_end is None else float(t_end)
        if t.size == 1:
            t = np.array([t0, t1])
            w = np.repeat(w, 2, axis=0)
            a = np.repeat(a, 2, axis=0)
        else:
            t, w, a = slice_samples(t, w, a, t0, t1)
    ba = np.zeros(3) if bias_acc is None else np.asarray(bias_acc, dtype=float)
    bw = np.zeros(3) if bias_gyro is None else np.asarray(bias_gyro, dtype=float)

    alpha = np.zeros(3)
    beta = np.zeros(3)
    gamma = np.eye(3)
    cov = np.zeros((NAV_DIM, NAV_DIM))
    jac = np.eye(NAV_DIM)
    I3 = np.eye(3)
    qa, qg = noise.accel_noise ** 2, noise.gyro_noise ** 2
    qba, qbw = noise.accel_bias_rw ** 2, noise.gyro_bias_rw ** 2

    for i in range(t.size - 1):
        dt = t[i + 1] - t[i]
        wm = 0.5 * (w[i] + w[i + 1]) - bw
        dR = so3_exp(wm * dt)
        Jr = right_jacobian(wm * dt)
        g_new = gamma @ dR
        f0 = a[i] - ba
        f1 = a[i + 1] - ba
        A0 = gamma @ f0
        A1 = g_new @ f1

        A0_th = -gamma @ skew(f0)
        A1_th = -g_new @ skew(f1) @ dR.T
        A1_bw = g_new @ skew(f1) @ Jr * dt
        c_a, c_b = dt * dt / 3.0, dt * dt / 6.0

        F = np.eye(NAV_DIM)
        F[P, TH] = c_a * A0_th + c_b * A1_th
        F[P, V] = dt * I3
        F[P, BA] = -(c_a * gamma + c_b * g_new)
        F[P, BW] = c_b * A1_bw
        F[TH, TH] = dR.T
        F[TH, BW] = -Jr * dt
        F[V, TH] = 0.5 * dt * (A0_th + A1_th)
        F[V, BA] = -0.5 * dt * (gamma + g_new)
        F[V, BW] = 0.5 * dt * A1_bw

        # noise inputs: accel at both samples, midpoint gyro, bias random walks
        G = np.zeros((NAV_DIM, 15))
        G[P, 0:3] = -c_a * gamma
        G[V, 0:3] = -0.5 * dt * gamma
        G[P, 3:6] = -c_b * g_new
        G[V, 3:6] = -0.5 * dt * g_new
        G[:, 6:9] = F[:, BW]
        G[BW, 6:9] = 0.0
        G[BA, 9:12] = dt * I3
        G[BW, 12:15] = dt * I3
        Qd = np.diag(np.r_[np.full(6, qa / dt), np.full(3, qg / dt),
                           np.full(3, qba / dt), np.full(3, qbw / dt)])

        alpha = alpha + beta * dt + c_a * A0 + c_b * A1
        beta = beta + 0.5 * dt * (A0 + A1)
        gamma = g_new
        cov = F @ cov @ F.T + G @ Qd @ G.T
        jac = F @ jac

    return PreintegratedDelta(delta_p=alpha, delta_v=beta, delta_R=gamma, covariance=cov,
                              jacobian=jac, bias_acc_lin=ba.copy(), bias_gyro_lin=bw.copy(),
                              duration=float(t[-1] - t[0]))


def predict(state: NavState, delta: PreintegratedDelta, gravity=GRAVITY, timestamp=None,
            keyframe_id=None):
    """Propagate ``state`` through ``delta`` (biases carried over)."""
    T = delta.duration
    dp, dv, dR = delta.corrected(state.bias_acc, state.bias_gyro)
    R = state.rotation
    return NavState(
        position=state.position + state.velocity * T + 0.5 * gravity * T * T + R @ dp,
        rotation=R @ dR,
        velocity=state.velocity + gravity * T + R @ dv,
        bias_acc=state.bias_acc.copy(), bias_gyro=state.bias_gyro.copy(),
        keyframe_id=state.keyframe_id + 1 if keyframe_id is None else keyframe_id,
        timestamp=state.timestamp + T if timestamp is None else timestamp,
    )


def residual(delta: PreintegratedDelta, x_i: NavState, x_j: NavState, gravity=GRAVITY,
             jacobians=False):
    """15-vector ``[r_p, r_theta, r_v, r_ba, r_bw]`` (unwhitened).

    With ``jacobians=True`` also returns ``(J_i, J_j)`` with respect to the
    tangent perturbations of both states.
    """
    T = delta.duration
    g = np.asarray(gravity, dtype=float)
    Ri = x_i.rotation
    J = delta.jacobian
    dbw = x_i.bias_gyro - delta.bias_gyro_lin
    dp, dv, dR = delta.corrected(x_i.bias_acc, x_i.bias_gyro)

    dpos = x_j.position - x_i.position - x_i.velocity * T - 0.5 * g * T * T
    dvel = x_j.velocity - x_i.velocity - g * T
    E = dR.T @ Ri.T @ x_j.rotation
    r = np.empty(NAV_DIM)
    r[P] = Ri.T @ dpos - dp
    r[TH] = so3_log(E)
    r[V] = Ri.T @ dvel - dv
    r[BA] = x_j.bias_acc - x_i.bias_acc
    r[BW] = x_j.bias_gyro - x_i.bias_gyro
    if not jacobians:
        return r

    Jri = right_jacobian_inv(r[TH])
    Ji = np.zeros((NAV_DIM, NAV_DIM))
    Jj = np.zeros((NAV_DIM, NAV_DIM))
    Ji[P, P] = -Ri.T
    Ji[P, TH] = skew(Ri.T @ dpos)
    Ji[P, V] = -Ri.T * T
    Ji[P, BA] = -J[P, BA]
    Ji[P, BW] = -J[P, BW]
    Ji[TH, TH] = -Jri @ x_j.rotation.T @ Ri
    Ji[TH, BW] = -Jri @ E.T @ right_jacobian(J[TH, BW] @ dbw) @ J[TH, BW]
    Ji[V, TH] = skew(Ri.T @ dvel)
    Ji[V, V] = -Ri.T
    Ji[V, BA] = -J[V, BA]
    Ji[V, BW] = -J[V, BW]
    Ji[BA, BA] = -np.eye(3)
    Ji[BW, BW] = -np.eye(3)

    Jj[P, P] = Ri.T
    Jj[TH, TH] = Jri
    Jj[V, V] = Ri.T
    Jj[BA, BA] = np.eye(3)
    Jj[BW, BW] = np.eye(3)
    return r, Ji, Jj
