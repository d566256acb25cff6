"""Coordinate frames and rotation utilities.

Frames used throughout the package:

* ECEF: WGS-84 earth-centred earth-fixed, metres.
* ENU: local east-north-up tangent frame anchored at a :class:`GeodeticOrigin`.
* body: IMU frame of the vehicle; LiDAR and receiver frames hang off it via
  rigid extrinsics.

Quaternions are stored scalar-last, ``[qx, qy, qz, qw]``, which is also the
column order of the trajectory export.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CoincidentPoints

WGS84_A = 6378137.0
WGS84_F = 1.0 / 298.257223563
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)

_MIN_SEPARATION = 1e-6


def geodetic_to_ecef(lat_rad, lon_rad, height_m=0.0):
    slat, clat = np.sin(lat_rad), np.cos(lat_rad)
    slon, clon = np.sin(lon_rad), np.cos(lon_rad)
    n = WGS84_A / np.sqrt(1.0 - WGS84_E2 * slat * slat)
    return np.array([
        (n + height_m) * clat * clon,
        (n + height_m) * clat * slon,
        (n * (1.0 - WGS84_E2) + height_m) * slat,
    ])


def enu_rotation(lat_rad, lon_rad):
    """Rotation taking ENU coordinates to ECEF axes at the given origin.

    Columns are the east, north and up unit vectors expressed in ECEF.
    """
    sp, cp = np.sin(lat_rad), np.cos(lat_rad)
    sl, cl = np.sin(lon_rad), np.cos(lon_rad)
    return np.array([
        [-sl, -sp * cl, cp * cl],
        [cl, -sp * sl, cp * sl],
        [0.0, cp, sp],
    ])


@dataclass(frozen=True)
class GeodeticOrigin:
    """Anchor of the local ENU frame."""

    latitude_rad: float
    longitude_rad: float
    height_m: float = 0.0
    origin_ecef: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if abs(self.latitude_rad) > np.pi / 2 or abs(self.longitude_rad) > np.pi:
            raise ValueError("origin latitude/longitude out of range")
        if self.origin_ecef is None:
            ecef = geodetic_to_ecef(self.latitude_rad, self.longitude_rad, self.height_m)
        else:
            ecef = np.asarray(self.origin_ecef, dtype=float).reshape(3)
        object.__setattr__(self, "origin_ecef", ecef)
        object.__setattr__(self, "_rot", enu_rotation(self.latitude_rad, self.longitude_rad))

    @classmethod
    def from_degrees(cls, lat_deg, lon_deg, height_m=0.0):
        return cls(np.radians(lat_deg), np.radians(lon_deg), height_m)

    @property
    def R_enu_to_ecef(self):
        return self._rot


def enu_to_ecef(p_enu, origin: GeodeticOrigin):
    """Map ENU point(s) (``(3,)`` or ``(n, 3)``) to ECEF."""
    p = np.asarray(p_enu, dtype=float)
    return p @ origin.R_enu_to_ecef.T + origin.origin_ecef


def ecef_to_enu(p_ecef, origin: GeodeticOrigin):
    p = np.asarray(p_ecef, dtype=float)
    return (p - origin.origin_ecef) @ origin.R_enu_to_ecef


def enu_vector_to_ecef(v_enu, origin: GeodeticOrigin):
    return np.asarray(v_enu, dtype=float) @ origin.R_enu_to_ecef.T


def los_unit_vector(p_receiver_ec, p_sat_ec):
    """Unit vector from receiver to satellite."""
    d = np.asarray(p_sat_ec, dtype=float) - np.asarray(p_receiver_ec, dtype=float)
    n = np.linalg.norm(d)
    if n < _MIN_SEPARATION:
        raise CoincidentPoints(f"receiver and satellite {n:.3g} m apart")
    return d / n


def elevation_azimuth(p_receiver_enu, p_sat_enu):
    """Elevation and azimuth (clockwise from north, in [0, 2pi)) of a target."""
    d = np.asarray(p_sat_enu, dtype=float) - np.asarray(p_receiver_enu, dtype=float)
    n = np.linalg.norm(d)
    if n < _MIN_SEPARATION:
        raise CoincidentPoints(f"receiver and target {n:.3g} m apart")
    u = d / n
    el = float(np.arcsin(np.clip(u[2], -1.0, 1.0)))
    az = float(np.arctan2(u[0], u[1])) % (2 * np.pi)
    return el, az


def direction_from_elevation_azimuth(el, az):
    """ENU unit vector for the given elevation/azimuth (radians)."""
    ce = np.cos(el)
    return np.array([ce * np.sin(az), ce * np.cos(az), np.sin(el)])


# --- SO(3) ------------------------------------------------------------------

def skew(v):
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(phi):
    phi = np.asarray(phi, dtype=float)
    th = np.linalg.norm(phi)
    K = skew(phi)
    if th < 1e-7:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + np.sin(th) / th * K + (1 - np.cos(th)) / th**2 * K @ K


def so3_log(R):
    R = np.asarray(R, dtype=float)
    c = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    th = np.arccos(c)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if th < 1e-7:
        return 0.5 * w
    if np.pi - th < 1e-6:
        # near pi: recover the axis from the symmetric part
        M = 0.5 * (R + np.eye(3))
        k = int(np.argmax(np.diag(M)))
        axis = M[:, k] / np.sqrt(max(M[k, k], 1e-300))
        if axis @ w < 0:
            axis = -axis
        return th * axis
    return th / (2.0 * np.sin(th)) * w


def right_jacobian(phi):
    phi = np.asarray(phi, dtype=float)
    th = np.linalg.norm(phi)
    K = skew(phi)
    if th < 1e-5:
        return np.eye(3) - 0.5 * K + K @ K / 6.0
    return (np.eye(3) - (1 - np.cos(th)) / th**2 * K
            + (th - np.sin(th)) / th**3 * K @ K)


def right_jacobian_inv(phi):
    phi = np.asarray(phi, dtype=float)
    th = np.linalg.norm(phi)
    K = skew(phi)
    if th < 1e-5:
        return np.eye(3) + 0.5 * K + K @ K / 12.0
    return (np.eye(3) + 0.5 * K
            + (1.0 / th**2 - (1 + np.cos(th)) / (2 * th * np.sin(th))) * K @ K)


def quat_to_rot(q):
    x, y, z, w = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def rot_to_quat(R):
    """Rotation matrix to scalar-last unit quaternion with qw >= 0."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([(R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s, 0.25 * s])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * np.sqrt(max(1.0 + R[i, i] - R[j, j] - R[k, k], 1e-300))
        q = np.empty(4)
        q[i] = 0.25 * s
        q[j] = (R[j, i] + R[i, j]) / s
        q[k] = (R[k, i] + R[i, k]) / s
        q[3] = (R[k, j] - R[j, k]) / s
    q /= np.linalg.norm(q)
    return -q if q[3] < 0 else q


def yaw_rotation(yaw):
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class RigidTransform:
    """Rigid transform ``x_B = R x_A + t`` (frame A to frame B)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        if R.shape == (4,):
            if abs(np.linalg.norm(R) - 1.0) > 1e-9:
                raise ValueError("quaternion must have unit norm")
            R = quat_to_rot(R)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3))

    @property
    def quaternion(self):
        return rot_to_quat(self.rotation)

    def apply(self, points):
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self * other``: apply ``other`` first."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)
