"""Navigation state and GNSS-epoch interpolation."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import OutOfInterval
from ..frames import quat_to_rot, rot_to_quat, so3_exp, so3_log

# tangent ordering of a NavState: position, attitude, velocity, accel bias, gyro bias
P, TH, V, BA, BW = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12), slice(12, 15)
NAV_DIM = 15


@dataclass
class NavState:
    position: np.ndarray
    rotation: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_acc: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    keyframe_id: int = 0
    timestamp: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        R = np.asarray(self.rotation, dtype=float)
        self.rotation = quat_to_rot(R) if R.shape == (4,) else R.reshape(3, 3)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)
        self.bias_acc = np.asarray(self.bias_acc, dtype=float).reshape(3)
        self.bias_gyro = np.asarray(self.bias_gyro, dtype=float).reshape(3)

    @property
    def quaternion(self):
        return rot_to_quat(self.rotation)

    def copy(self):
        return replace(self, position=self.position.copy(), rotation=self.rotation.copy(),
                       velocity=self.velocity.copy(), bias_acc=self.bias_acc.copy(),
                       bias_gyro=self.bias_gyro.copy())

    def retract(self, delta):
        delta = np.asarray(delta, dtype=float)
        R = self.rotation @ so3_exp(delta[TH])
        # keep the rotation orthonormal against drift from repeated updates
        u, _, vt = np.linalg.svd(R)
        return replace(self, position=self.position + delta[P], rotation=u @ vt,
                       velocity=self.velocity + delta[V], bias_acc=self.bias_acc + delta[BA],
                       bias_gyro=self.bias_gyro + delta[BW])

    def local(self, other: "NavState"):
        """Tangent vector ``d`` such that ``self.retract(d) == other``."""
        d = np.empty(NAV_DIM)
        d[P] = other.position - self.position
        d[TH] = so3_log(self.rotation.T @ other.rotation)
        d[V] = other.velocity - self.velocity
        d[BA] = other.bias_acc - self.bias_acc
        d[BW] = other.bias_gyro - self.bias_gyro
        return d


def interpolation_weights(t_k, t_k1, t):
    """Convex weights ``(w_k, w_k1)`` for an epoch inside ``[t_k, t_k1]``."""
    if not t_k1 > t_k:
        raise OutOfInterval(f"interval [{t_k}, {t_k1}] is empty")
    if t < t_k - 1e-9 or t > t_k1 + 1e-9:
        raise OutOfInterval(f"t={t} outside [{t_k}, {t_k1}]")
    span = t_k1 - t_k
    return (t_k1 - t) / span, (t - t_k) / span


def interpolate_state(x_k: NavState, x_k1: NavState, t):
    """Linearly interpolated position and velocity at ``t``."""
    wk, wk1 = interpolation_weights(x_k.timestamp, x_k1.timestamp, t)
    return (wk * x_k.position + wk1 * x_k1.position,
            wk * x_k.velocity + wk1 * x_k1.velocity)
