"""Sliding-window point cloud map and LOS/NLOS classification.

The map keeps each keyframe's points in the sensor frame alongside their
ENU image, so the whole window can be re-posed after a global correction.
A satellite is declared NLOS when a fixed-step walk along its line of sight
meets enough map points within the search radius.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import AllExcluded, InvalidElevation, MissingPose
from .frames import GeodeticOrigin, RigidTransform, ecef_to_enu, elevation_azimuth
from .gnss_model import EpochObs


@dataclass(frozen=True)
class NlosSearchParams:
    step: float = 2.0
    radius: float = 1.0
    neighbor_threshold: int = 5
    max_search_range: float = 250.0
    elevation_mask: float = np.radians(10.0)

    def __post_init__(self):
        if not (self.step > 0 and self.radius > 0):
            raise ValueError("step and radius must be positive")
        if self.neighbor_threshold < 1:
            raise ValueError("neighbor_threshold must be at least 1")


@dataclass
class VisibilityLabel:
    prn: object
    label: str
    blocking_distance: float = None

    @property
    def is_nlos(self):
        return self.label == "NLOS"


@dataclass
class _Keyframe:
    sensor_points: np.ndarray
    pose: RigidTransform
    extrinsic: RigidTransform
    enu_points: np.ndarray


class PointCloudMap:
    """Points of the last ``window`` keyframes in ENU with a radius-query index.

    The index is a k-d tree rebuilt lazily after any mutation, which gives
    exact radius-query semantics.
    """

    def __init__(self, window=60):
        if window < 1:
            raise ValueError("window must be at least 1")
        self.window = int(window)
        self._frames: "OrderedDict[int, _Keyframe]" = OrderedDict()
        self._points = None
        self._tree = None

    def __len__(self):
        return int(sum(len(f.enu_points) for f in self._frames.values()))

    @property
    def keyframe_ids(self):
        return list(self._frames)

    def _invalidate(self):
        self._points = None
        self._tree = None

    def accumulate(self, keyframe_id, sensor_points, pose: RigidTransform,
                   extrinsic: RigidTransform = None):
        """Insert one keyframe and evict the oldest ones beyond the window."""
        extrinsic = extrinsic or RigidTransform.identity()
        pts = np.asarray(sensor_points, dtype=float).reshape(-1, 3)
        enu = pose.compose(extrinsic).apply(pts)
        self._frames[keyframe_id] = _Keyframe(pts, pose, extrinsic, enu)
        self._frames.move_to_end(keyframe_id)
        self.evict()
        self._invalidate()
        return self

    def evict(self):
        while len(self._frames) > self.window:
            self._frames.popitem(last=False)
            self._invalidate()

    def set_window(self, window):
        self.window = max(1, int(window))
        self.evict()

    def pose(self, keyframe_id):
        return self._frames[keyframe_id].pose

    def keyframe_points(self, keyframe_id):
        return self._frames[keyframe_id].enu_points

    def repose(self, corrected_poses):
        """Re-transform every keyframe from its sensor-frame points.

        Returns a new map; ``corrected_poses`` must cover every keyframe in
        the window.
        """
        missing = [k for k in self._frames if k not in corrected_poses]
        if missing:
            raise MissingPose(f"no corrected pose for keyframes {missing}")
        out = PointCloudMap(self.window)
        for k, f in self._frames.items():
            pose = corrected_poses[k]
            if (np.array_equal(pose.rotation, f.pose.rotation)
                    and np.array_equal(pose.translation, f.pose.translation)):
                enu = f.enu_points
            else:
                enu = pose.compose(f.extrinsic).apply(f.sensor_points)
            out._frames[k] = _Keyframe(f.sensor_points, pose, f.extrinsic, enu)
        return out

    @property
    def points(self):
        if self._points is None:
            if self._frames:
                self._points = np.concatenate([f.enu_points for f in self._frames.values()])
            else:
                self._points = np.zeros((0, 3))
        return self._points

    @property
    def tree(self):
        if self._tree is None:
            self._tree = cKDTree(self.points) if len(self.points) else None
        return self._tree

    def count_within(self, centres, radius):
        centres = np.atleast_2d(np.asarray(centres, dtype=float))
        if self.tree is None:
            return np.zeros(len(centres), dtype=int)
        return np.asarray(self.tree.query_ball_point(centres, radius, return_length=True))


def accumulate_map(pcm: PointCloudMap, keyframe_id, keyframe_points, pose, extrinsic=None):
    return pcm.accumulate(keyframe_id, keyframe_points, pose, extrinsic)


def repose_map(pcm: PointCloudMap, corrected_poses):
    return pcm.repose(corrected_poses)


def classify_visibility(pcm: PointCloudMap, receiver_enu, direction_enu,
                        params: NlosSearchParams = NlosSearchParams(), prn=None):
    """Walk along the line of sight in steps of ``params.step``.

    The walk starts one step away from the receiver; the first step whose
    ball of radius ``params.radius`` holds at least ``neighbor_threshold``
    map points marks the satellite NLOS at that distance.
    """
    d = np.asarray(direction_enu, dtype=float)
    d = d / np.linalg.norm(d)
    if np.arcsin(np.clip(d[2], -1.0, 1.0)) < params.elevation_mask:
        raise InvalidElevation("satellite below the elevation mask")
    n = int(np.floor(params.max_search_range / params.step + 1e-9))
    dist = params.step * np.arange(1, n + 1)
    centres = np.asarray(receiver_enu, dtype=float) + dist[:, None] * d
    counts = pcm.count_within(centres, params.radius)
    hit = np.flatnonzero(counts >= params.neighbor_threshold)
    if hit.size:
        return VisibilityLabel(prn, "NLOS", float(dist[hit[0]]))
    return VisibilityLabel(prn, "LOS", None)


def classify_epoch(pcm: PointCloudMap, receiver_enu, epoch: EpochObs, origin: GeodeticOrigin,
                   params: NlosSearchParams = NlosSearchParams()):
    """Labels for every rover satellite above the mask, keyed by ``(constellation, prn)``."""
    labels = {}
    for o in epoch.rover_obs:
        sat_enu = ecef_to_enu(o.sat_pos, origin)
        el, _ = elevation_azimuth(receiver_enu, sat_enu)
        if el < params.elevation_mask:
            continue
        labels[o.key] = classify_visibility(pcm, receiver_enu, sat_enu - receiver_enu, params, o.key)
    return labels


@dataclass
class ExclusionReport:
    excluded: list = field(default_factory=list)  # (constellation, prn, blocking distance)

    def __len__(self):
        return len(self.excluded)


def exclude_nlos(epoch: EpochObs, labels):
    """Drop NLOS-labelled rover satellites.

    Raises :class:`AllExcluded` when no constellation keeps two satellites.
    """
    report = ExclusionReport()
    kept = []
    for o in epoch.rover_obs:
        lab = labels.get(o.key)
        if lab is not None and lab.is_nlos:
            report.excluded.append((o.constellation, o.prn, lab.blocking_distance))
        else:
            kept.append(o)
    per_const = {}
    for o in kept:
        per_const[o.constellation] = per_const.get(o.constellation, 0) + 1
    if not any(n >= 2 for n in per_const.values()):
        raise AllExcluded("fewer than two satellites survive in every constellation", report)
    out = EpochObs(time=epoch.time, rover_obs=kept, base_obs=list(epoch.base_obs),
                   base_pos=epoch.base_pos)
    return out, report


def derive_window_length(positions, span=250.0, cap=60):
    """Smallest keyframe count whose chord to the newest keyframe exceeds ``span``."""
    pts = np.asarray(positions, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return int(cap)
    chords = np.linalg.norm(pts - pts[-1], axis=1)[::-1]
    over = np.flatnonzero(chords > span)
    if over.size == 0:
        return int(cap)
    return int(min(over[0] + 1, cap))
