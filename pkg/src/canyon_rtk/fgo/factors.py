"""Residual families of the tightly coupled objective.

Every factor here returns whitened residuals and whitened Jacobians with
respect to the tangent perturbation of each of its keys (see
:mod:`canyon_rtk.fgo.graph`). GNSS epoch factors attach to the two keyframes
bracketing the epoch and see the antenna position as the convex
interpolation of the two lever-arm-shifted keyframe positions.
"""
from __future__ import annotations

import numpy as np

from .. import imu_preint
from ..frames import GeodeticOrigin, skew
from ..gnss_model import SPEED_OF_LIGHT, DdObservation, SatObs, dd_geometric_range
from .graph import Factor
from .states import NAV_DIM, P, TH, V


class EpochGeometry:
    """Antenna position/velocity at a GNSS epoch as a function of two keyframes."""

    def __init__(self, origin: GeodeticOrigin, w0, w1, lever_arm=(0.0, 0.0, 0.0)):
        self.origin = origin
        self.w0 = float(w0)
        self.w1 = float(w1)
        self.lever_arm = np.asarray(lever_arm, dtype=float).reshape(3)
        self.R = origin.R_enu_to_ecef

    def antenna_enu(self, x0, x1):
        l = self.lever_arm
        return self.w0 * (x0.position + x0.rotation @ l) + self.w1 * (x1.position + x1.rotation @ l)

    def antenna_ecef(self, x0, x1):
        return self.R @ self.antenna_enu(x0, x1) + self.origin.origin_ecef

    def velocity_ecef(self, x0, x1):
        return self.R @ (self.w0 * x0.velocity + self.w1 * x1.velocity)

    def position_jacobians(self, x0, x1):
        """d(antenna ECEF)/d(tangent of x0), d/d(tangent of x1); each 3x15."""
        out = []
        for w, x in ((self.w0, x0), (self.w1, x1)):
            J = np.zeros((3, NAV_DIM))
            J[:, P] = w * self.R
            J[:, TH] = -w * self.R @ x.rotation @ skew(self.lever_arm)
            out.append(J)
        return out

    def velocity_jacobians(self):
        out = []
        for w in (self.w0, self.w1):
            J = np.zeros((3, NAV_DIM))
            J[:, V] = w * self.R
            out.append(J)
        return out


def _dd_range_and_gradient(p_r, p_e, slave, master):
    us = p_r - slave
    uw = p_r - master
    geo = dd_geometric_range(p_r, p_e, slave, master)
    return geo, us / np.linalg.norm(us) - uw / np.linalg.norm(uw)


class ImuFactor(Factor):
    family = "imu"

    def __init__(self, key_i, key_j, delta: imu_preint.PreintegratedDelta, gravity=imu_preint.GRAVITY):
        self.keys = (key_i, key_j)
        self.delta = delta
        self.gravity = np.asarray(gravity, dtype=float)

    @property
    def size(self):
        return NAV_DIM

    def linearize(self, values):
        r, Ji, Jj = imu_preint.residual(self.delta, values[self.keys[0]], values[self.keys[1]],
                                        self.gravity, jacobians=True)
        L = self.delta.sqrt_information
        return L @ r, [L @ Ji, L @ Jj]


class VsFactor(Factor):
    """Batch of point-to-plane virtual-satellite rows for one keyframe.

    ``points`` are scan points in the LiDAR frame (n x 3); ``anchors`` holds
    the three plane anchors per row (n x 3 x 3, ENU). The residual is the
    signed distance; its magnitude is the point-to-plane distance.
    """

    family = "vs"

    def __init__(self, key, points, anchors, sigma, extrinsic):
        self.keys = (key,)
        self.points = np.asarray(points, dtype=float).reshape(-1, 3)
        anchors = np.asarray(anchors, dtype=float).reshape(-1, 3, 3)
        a, b, c = anchors[:, 0], anchors[:, 1], anchors[:, 2]
        n = np.cross(a - b, a - c)
        self.normals = n / np.linalg.norm(n, axis=1, keepdims=True)
        self.anchors = anchors
        self.sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (len(self.points),)).copy()
        # points in the body frame are constant
        self.body_points = self.points @ extrinsic.rotation.T + extrinsic.translation

    @property
    def size(self):
        return len(self.points)

    def linearize(self, values):
        x = values[self.keys[0]]
        q = self.body_points @ x.rotation.T + x.position
        r = np.einsum("ij,ij->i", self.normals, q - self.anchors[:, 0]) / self.sigma
        J = np.zeros((self.size, NAV_DIM))
        J[:, P] = self.normals / self.sigma[:, None]
        nb = self.normals @ x.rotation
        J[:, TH] = -np.cross(nb, self.body_points) / self.sigma[:, None]
        return r, [J]


class DdPseudorangeFactor(Factor):
    family = "dd_pseudorange"

    def __init__(self, key0, key1, dd: DdObservation, geometry: EpochGeometry, base_ecef):
        self.keys = (key0, key1)
        self.dd = dd
        self.geometry = geometry
        self.base_ecef = np.asarray(base_ecef, dtype=float)

    @property
    def size(self):
        return 1

    def linearize(self, values):
        x0, x1 = values[self.keys[0]], values[self.keys[1]]
        p = self.geometry.antenna_ecef(x0, x1)
        geo, g = _dd_range_and_gradient(p, self.base_ecef, self.dd.slave_pos, self.dd.master_pos)
        s = self.dd.sigma_rho
        J0, J1 = self.geometry.position_jacobians(x0, x1)
        return (np.array([(self.dd.dd_pseudorange - geo) / s]),
                [-(g @ J0)[None, :] / s, -(g @ J1)[None, :] / s])


class DdCarrierFactor(Factor):
    family = "dd_carrier"

    def __init__(self, key0, key1, amb_key, dd: DdObservation, geometry: EpochGeometry, base_ecef):
        self.keys = (key0, key1, amb_key)
        self.dd = dd
        self.geometry = geometry
        self.base_ecef = np.asarray(base_ecef, dtype=float)

    @property
    def size(self):
        return 1

    def linearize(self, values):
        x0, x1 = values[self.keys[0]], values[self.keys[1]]
        n = float(np.asarray(values[self.keys[2]]).ravel()[0])
        p = self.geometry.antenna_ecef(x0, x1)
        geo, g = _dd_range_and_gradient(p, self.base_ecef, self.dd.slave_pos, self.dd.master_pos)
        lam, s = self.dd.wavelength, self.dd.sigma_psi
        r = lam * self.dd.dd_carrier - geo - lam * n
        J0, J1 = self.geometry.position_jacobians(x0, x1)
        return (np.array([r / s]),
                [-(g @ J0)[None, :] / s, -(g @ J1)[None, :] / s, np.array([[-lam / s]])])


class ConstantAmbiguityFactor(Factor):
    """``N_t - N_{t-1}`` in cycles."""

    family = "constant_ambiguity"

    def __init__(self, key_prev, key_cur, sigma_cycles):
        self.keys = (key_prev, key_cur)
        self.sigma = float(sigma_cycles)

    @property
    def size(self):
        return 1

    def linearize(self, values):
        a = float(np.asarray(values[self.keys[0]]).ravel()[0])
        b = float(np.asarray(values[self.keys[1]]).ravel()[0])
        s = self.sigma
        return np.array([(b - a) / s]), [np.array([[-1.0 / s]]), np.array([[1.0 / s]])]


class DopplerFactor(Factor):
    """Undifferenced Doppler with a per-epoch receiver clock drift in m/s.

    The lever-arm velocity induced by rotation is neglected.
    """

    family = "doppler"

    def __init__(self, key0, key1, clock_key, obs: SatObs, geometry: EpochGeometry, sigma_hz):
        self.keys = (key0, key1, clock_key)
        self.obs = obs
        self.geometry = geometry
        self.sigma = float(sigma_hz)

    @property
    def size(self):
        return 1

    def linearize(self, values):
        x0, x1 = values[self.keys[0]], values[self.keys[1]]
        cdr = float(np.asarray(values[self.keys[2]]).ravel()[0])
        o = self.obs
        p = self.geometry.antenna_ecef(x0, x1)
        v = self.geometry.velocity_ecef(x0, x1)
        d = o.sat_pos - p
        rho = np.linalg.norm(d)
        e = d / rho
        dv = o.sat_vel - v
        lam, s = o.wavelength, self.sigma
        pred = (e @ dv + cdr - SPEED_OF_LIGHT * o.sat_clock_drift) / lam
        r = (o.doppler - pred) / s
        dr_dp = (dv - e * (e @ dv)) / (rho * lam * s)
        dr_dv = e / (lam * s)
        Jp0, Jp1 = self.geometry.position_jacobians(x0, x1)
        Jv0, Jv1 = self.geometry.velocity_jacobians()
        return (np.array([r]),
                [(dr_dp @ Jp0 + dr_dv @ Jv0)[None, :], (dr_dp @ Jp1 + dr_dv @ Jv1)[None, :],
                 np.array([[-1.0 / (lam * s)]])])
