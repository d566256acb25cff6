"""Global pose graph over every keyframe.

Relative-pose factors come from the sliding-window estimates of consecutive
keyframes; absolute position factors come from fixed or float GNSS epoch
solutions, attached to the interpolated position between the two keyframes
bracketing the epoch. The corrected poses re-pose the point cloud map.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from ..frames import RigidTransform, right_jacobian_inv, skew, so3_exp, so3_log

FIXED_SIGMA = 0.05


@dataclass
class RelativeFactor:
    i: int
    j: int
    rotation: np.ndarray       # R_i^T R_j
    translation: np.ndarray    # R_i^T (p_j - p_i)
    sqrt_info: np.ndarray      # 6 x 6, [translation, rotation]


@dataclass
class AbsoluteFactor:
    i: int
    j: int
    w_i: float
    w_j: float
    position: np.ndarray
    sqrt_info: np.ndarray      # 3 x 3


def relative_measurement(pose_i: RigidTransform, pose_j: RigidTransform):
    Ri = pose_i.rotation
    return Ri.T @ pose_j.rotation, Ri.T @ (pose_j.translation - pose_i.translation)


def relative_sqrt_info(sigma_t=0.05, sigma_r=np.radians(0.5)):
    return np.diag(np.r_[np.full(3, 1.0 / sigma_t), np.full(3, 1.0 / sigma_r)])


def position_sqrt_info(Q_pp=None, sigma=FIXED_SIGMA):
    """Whitening for an absolute position: isotropic ``sigma`` or ``Q_pp``."""
    if Q_pp is None:
        return np.eye(3) / sigma
    L = np.linalg.cholesky(0.5 * (Q_pp + Q_pp.T))
    return np.linalg.inv(L)


class GlobalPoseGraph:
    """Poses keyed by keyframe id, solved by sparse Gauss-Newton."""

    def __init__(self, max_iterations=10, tol=1e-10, anchor_sigma_rotation=np.radians(0.5)):
        self.poses = {}
        self.anchor_sigma_rotation = float(anchor_sigma_rotation)
        self.anchor = None
        self.relative = {}
        self.absolute = []
        self.max_iterations = max_iterations
        self.tol = tol

    def add_keyframe(self, keyframe_id, pose: RigidTransform):
        self.poses[int(keyframe_id)] = RigidTransform(np.array(pose.rotation, dtype=float),
                                                      np.array(pose.translation, dtype=float))
        if self.anchor is None:
            # positions alone leave the rotation about the track unobservable
            self.anchor = (int(keyframe_id), self.poses[int(keyframe_id)].rotation.copy(),
                           self.poses[int(keyframe_id)].translation.copy())

    def set_relative(self, i, j, pose_i, pose_j, sqrt_info=None):
        R, t = relative_measurement(pose_i, pose_j)
        self.relative[(int(i), int(j))] = RelativeFactor(
            int(i), int(j), R, t, relative_sqrt_info() if sqrt_info is None else sqrt_info)

    def add_absolute(self, i, j, w_i, w_j, position, sqrt_info):
        self.absolute.append(AbsoluteFactor(int(i), int(j), float(w_i), float(w_j),
                                            np.asarray(position, dtype=float), sqrt_info))

    # residuals ---------------------------------------------------------------

    def _rel(self, f: RelativeFactor, poses):
        pi, pj = poses[f.i], poses[f.j]
        Ri = pi.rotation
        u = Ri.T @ (pj.translation - pi.translation)
        E = f.rotation.T @ Ri.T @ pj.rotation
        rt = u - f.translation
        rr = so3_log(E)
        Jri = right_jacobian_inv(rr)
        Ji = np.zeros((6, 6))
        Jj = np.zeros((6, 6))
        Ji[:3, :3] = -Ri.T
        Ji[:3, 3:] = skew(u)
        Jj[:3, :3] = Ri.T
        Ji[3:, 3:] = -Jri @ pj.rotation.T @ Ri
        Jj[3:, 3:] = Jri
        L = f.sqrt_info
        return L @ np.r_[rt, rr], L @ Ji, L @ Jj

    def _abs(self, f: AbsoluteFactor, poses):
        p = f.w_i * poses[f.i].translation + f.w_j * poses[f.j].translation
        L = f.sqrt_info
        Ji = np.zeros((3, 6))
        Jj = np.zeros((3, 6))
        Ji[:, :3] = f.w_i * np.eye(3)
        Jj[:, :3] = f.w_j * np.eye(3)
        return L @ (p - f.position), L @ Ji, L @ Jj

    def _anchor(self, poses):
        k, R, p = self.anchor
        r = so3_log(R.T @ poses[k].rotation)
        J = np.zeros((6, 6))
        res = np.zeros(6)
        res[3:] = r / self.anchor_sigma_rotation
        J[3:, 3:] = right_jacobian_inv(r) / self.anchor_sigma_rotation
        if not self.absolute:
            res[:3] = (poses[k].translation - p) * 1e6
            J[:3, :3] = np.eye(3) * 1e6
        return res, J

    def cost(self, poses=None):
        poses = poses or self.poses
        c = float(np.sum(self._anchor(poses)[0] ** 2)) if self.anchor else 0.0
        for f in self.relative.values():
            c += float(np.sum(self._rel(f, poses)[0] ** 2))
        for f in self.absolute:
            c += float(np.sum(self._abs(f, poses)[0] ** 2))
        return 0.5 * c

    def optimize(self):
        """Gauss-Newton with backtracking; the first pose is anchored without absolutes."""
        ids = sorted(self.poses)
        if len(ids) == 0:
            return {}
        col = {k: 6 * n for n, k in enumerate(ids)}
        n = 6 * len(ids)
        cost = self.cost()
        for _ in range(self.max_iterations):
            rows, cols, vals, rhs = [], [], [], []
            r0 = 0

            def put(J, k, r0):
                o = col[k]
                ii, jj = np.nonzero(J)
                rows.extend((ii + r0).tolist())
                cols.extend((jj + o).tolist())
                vals.extend(J[ii, jj].tolist())

            for f in self.relative.values():
                if f.i not in col or f.j not in col:
                    continue
                r, Ji, Jj = self._rel(f, self.poses)
                put(Ji, f.i, r0)
                put(Jj, f.j, r0)
                rhs.append(r)
                r0 += 6
            for f in self.absolute:
                r, Ji, Jj = self._abs(f, self.poses)
                put(Ji, f.i, r0)
                put(Jj, f.j, r0)
                rhs.append(r)
                r0 += 3
            r, Ja = self._anchor(self.poses)
            put(Ja, self.anchor[0], r0)
            rhs.append(r)
            r0 += 6
            J = sp.csc_matrix((vals, (rows, cols)), shape=(r0, n))
            r = np.concatenate(rhs)
            H = (J.T @ J).tocsc() + sp.identity(n, format="csc") * 1e-12
            step = -splu(H).solve(J.T @ r)
            alpha = 1.0
            while alpha > 1e-4:
                trial = {k: self._retract(self.poses[k], alpha * step[col[k]:col[k] + 6])
                         for k in ids}
                new = self.cost(trial)
                if new <= cost:
                    break
                alpha *= 0.5
            else:
                break
            self.poses = trial
            done = cost - new <= self.tol * max(cost, 1e-300) or np.max(np.abs(alpha * step)) < 1e-12
            cost = new
            if done:
                break
        return dict(self.poses)

    @staticmethod
    def _retract(pose, d):
        return RigidTransform(pose.rotation @ so3_exp(d[3:]), pose.translation + d[:3])


def update_global_graph(graph: GlobalPoseGraph, keyframe_id, pose, absolute=(), relative=()):
    """Add one keyframe with its constraints and return all corrected poses.

    ``absolute`` holds ``(i, j, w_i, w_j, position, sqrt_info)`` tuples and
    ``relative`` holds ``(i, j, pose_i, pose_j)`` tuples.
    """
    if keyframe_id is not None:
        graph.add_keyframe(keyframe_id, pose)
    for i, j, pi, pj in relative:
        graph.set_relative(i, j, pi, pj)
    for a in absolute:
        graph.add_absolute(*a)
    return graph.optimize()
