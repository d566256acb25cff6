"""Planar features, scan-to-map plane association and virtual-satellite factors.

A virtual satellite is a point-to-plane constraint between a keyframe scan
point and a planar patch of the map. Its standard deviation is inflated by
the ratio of virtual to real satellites so that a handful of real
satellites are not drowned out by hundreds of LiDAR rows.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegeneratePlane, NoRealSatellites
from .frames import RigidTransform

MIN_AREA = 1e-6


@dataclass(frozen=True)
class PlaneParams:
    k_neigh: int = 20
    planarity_threshold: float = 0.1
    gate_radius: float = 1.0
    assoc_neigh: int = 10


@dataclass
class PlanarLandmark:
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    keyframe_ids: tuple = ()

    def __post_init__(self):
        self.a, self.b, self.c = (np.asarray(p, dtype=float).reshape(3) for p in (self.a, self.b, self.c))
        if triangle_area(self.a, self.b, self.c) <= MIN_AREA:
            raise DegeneratePlane("plane anchors are collinear")

    @property
    def normal(self):
        n = np.cross(self.a - self.b, self.a - self.c)
        return n / np.linalg.norm(n)

    @property
    def anchors(self):
        return np.stack([self.a, self.b, self.c])


def triangle_area(a, b, c):
    return 0.5 * np.linalg.norm(np.cross(np.asarray(b) - a, np.asarray(c) - a), axis=-1)


def _eig_ratio(neigh):
    """Ascending eigenvalues of neighbourhood covariances (batched)."""
    centred = neigh - neigh.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centred, centred) / neigh.shape[1]
    return np.linalg.eigh(cov)


def planar_mask(points, params: PlaneParams = PlaneParams()):
    """Boolean mask of points whose ``k_neigh`` neighbourhood is planar."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    k = params.k_neigh
    if len(pts) < k:
        return np.zeros(len(pts), dtype=bool)
    _, idx = cKDTree(pts).query(pts, k=k)
    w, _ = _eig_ratio(pts[idx])
    return w[:, 0] < params.planarity_threshold * w[:, 1]


def extract_planar_features(points, params: PlaneParams = PlaneParams()):
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    return pts[planar_mask(pts, params)]


def associate_batch(query_enu, map_points, params: PlaneParams = PlaneParams(), tree=None):
    """Associate many ENU points with map plane patches at once.

    Returns ``(anchors, ok)`` where ``anchors`` is ``n x 3 x 3``. For each
    query the patch is its ``assoc_neigh`` nearest map points inside the
    gate; it is accepted when its eigen-analysis is planar. The anchors are
    the nearest neighbour plus the pair spanning the largest triangle with
    it, projected onto the fitted plane.
    """
    q = np.asarray(query_enu, dtype=float).reshape(-1, 3)
    m = np.asarray(map_points, dtype=float).reshape(-1, 3)
    n, k = len(q), params.assoc_neigh
    anchors = np.zeros((n, 3, 3))
    ok = np.zeros(n, dtype=bool)
    if n == 0 or len(m) < max(k, 3):
        return anchors, ok
    tree = tree if tree is not None else cKDTree(m)
    dist, idx = tree.query(q, k=k, distance_upper_bound=params.gate_radius)
    full = np.all(np.isfinite(dist), axis=1)
    if not np.any(full):
        return anchors, ok
    rows = np.flatnonzero(full)
    neigh = m[idx[rows]]
    w, V = _eig_ratio(neigh)
    planar = w[:, 0] < params.planarity_threshold * w[:, 1]
    rows, neigh, V = rows[planar], neigh[planar], V[planar]
    if rows.size == 0:
        return anchors, ok
    normal = V[:, :, 0]
    centroid = neigh.mean(axis=1)
    proj = neigh - np.einsum("nkj,nj->nk", neigh - centroid[:, None, :], normal)[:, :, None] * normal[:, None, :]
    a = proj[:, 0]
    # best (b, c) pair among the remaining neighbours by triangle area
    ii, jj = np.triu_indices(k - 1, 1)
    B = proj[:, 1:][:, ii]
    C = proj[:, 1:][:, jj]
    areas = triangle_area(a[:, None, :], B, C)
    best = np.argmax(areas, axis=1)
    r = np.arange(len(rows))
    b, c = B[r, best], C[r, best]
    good = areas[r, best] > MIN_AREA
    anchors[rows[good], 0] = a[good]
    anchors[rows[good], 1] = b[good]
    anchors[rows[good], 2] = c[good]
    ok[rows[good]] = True
    return anchors, ok


def associate_planes(point_enu, map_points, params: PlaneParams = PlaneParams(), tree=None):
    """Planar landmark for one ENU feature point, or ``None``."""
    anchors, ok = associate_batch(np.reshape(point_enu, (1, 3)), map_points, params, tree)
    if not ok[0]:
        return None
    return PlanarLandmark(*anchors[0])


def signed_plane_distance(point_enu, a, b, c):
    """Scalar triple product over the parallelogram area."""
    n = np.cross(np.asarray(a) - b, np.asarray(a) - c)
    norm = np.linalg.norm(n, axis=-1)
    if np.any(norm <= 2 * MIN_AREA):
        raise DegeneratePlane("plane anchors are collinear")
    return np.sum((np.asarray(point_enu) - a) * n, axis=-1) / norm


def point_to_plane_residual(point_l, landmark: PlanarLandmark, pose: RigidTransform,
                            extrinsic: RigidTransform = None):
    """Distance from the scan point, mapped to ENU, to the landmark plane."""
    extrinsic = extrinsic or RigidTransform.identity()
    p_enu = pose.apply(extrinsic.apply(np.asarray(point_l, dtype=float)))
    return float(abs(signed_plane_distance(p_enu, landmark.a, landmark.b, landmark.c)))


def select_vs(candidates, max_count=200, rng_seed=0):
    """Seeded uniform subset; returns the chosen indices in ascending order."""
    n = candidates if isinstance(candidates, (int, np.integer)) else len(candidates)
    if n <= max_count:
        return np.arange(n)
    rng = np.random.default_rng(rng_seed)
    return np.sort(rng.choice(n, size=max_count, replace=False))


def vs_weight(n_virtual, n_real):
    """Ratio of virtual to real satellites."""
    if n_real < 1:
        raise NoRealSatellites("no real satellites to weight against")
    if n_virtual < 1:
        raise ValueError("n_virtual must be at least 1")
    return n_virtual / n_real


def vs_sigma(sigma_l, n_virtual, n_real, sweep_weight=1.0):
    """Per-row VS standard deviation after ratio inflation.

    The variance is multiplied by ``vs_weight``; ``sweep_weight`` scales the
    resulting information. Without real satellites the rows keep ``sigma_l``.
    """
    try:
        w = vs_weight(n_virtual, n_real)
    except NoRealSatellites:
        w = 1.0
    return sigma_l * np.sqrt(w) / np.sqrt(sweep_weight)
