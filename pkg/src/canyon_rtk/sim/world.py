"""Box-world geometry: face sampling and exact ray casting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateBox


@dataclass(frozen=True)
class Box:
    """Axis-aligned box in ENU, ``lo`` and ``hi`` corners in metres."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(3)
        hi = np.asarray(self.hi, dtype=float).reshape(3)
        if not np.all(np.isfinite(lo)) or not np.all(np.isfinite(hi)) or np.any(hi - lo <= 0):
            raise DegenerateBox(f"box {lo.tolist()} .. {hi.tolist()} has no volume")
        object.__setattr__(self, "lo", tuple(lo.tolist()))
        object.__setattr__(self, "hi", tuple(hi.tolist()))

    @classmethod
    def from_list(cls, v):
        return cls(tuple(v[:3]), tuple(v[3:6]))

    def to_list(self):
        return list(self.lo) + list(self.hi)

    def face_points(self, spacing=0.2, include_bottom=True):
        """Regular grid samples of every face, edges included."""
        lo, hi = np.array(self.lo), np.array(self.hi)
        out = []
        for axis in range(3):
            u, v = [a for a in range(3) if a != axis]
            nu = int(round((hi[u] - lo[u]) / spacing)) + 1
            nv = int(round((hi[v] - lo[v]) / spacing)) + 1
            gu, gv = np.meshgrid(np.linspace(lo[u], hi[u], nu), np.linspace(lo[v], hi[v], nv),
                                 indexing="ij")
            for side in (lo[axis], hi[axis]):
                if axis == 2 and side == lo[2] and not include_bottom:
                    continue
                pts = np.empty((gu.size, 3))
                pts[:, axis] = side
                pts[:, u] = gu.ravel()
                pts[:, v] = gv.ravel()
                out.append(pts)
        return np.concatenate(out)


def ray_box_distances(origins, dirs, boxes):
    """Entry distance of each ray into each box (``inf`` on a miss).

    ``origins`` and ``dirs`` are ``n x 3``; returns ``n x len(boxes)``. Rays
    starting inside a box report distance 0.
    """
    o = np.atleast_2d(np.asarray(origins, dtype=float))
    d = np.atleast_2d(np.asarray(dirs, dtype=float))
    if not boxes:
        return np.full((len(o), 0), np.inf)
    lo = np.array([b.lo for b in boxes])[None, :, :]
    hi = np.array([b.hi for b in boxes])[None, :, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d[:, None, :]
        t1 = (lo - o[:, None, :]) * inv
        t2 = (hi - o[:, None, :]) * inv
    # a zero direction component never crosses that slab: inside => (-inf, inf), outside => empty
    par = d[:, None, :] == 0.0
    inside = (o[:, None, :] >= lo) & (o[:, None, :] <= hi)
    tmin = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    tmax = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    t_enter = tmin.max(axis=2)
    t_exit = tmax.min(axis=2)
    hit = (t_exit >= np.maximum(t_enter, 0.0))
    return np.where(hit, np.maximum(t_enter, 0.0), np.inf)


class World:
    """Boxes plus an optional ground plane at ``z = 0``."""

    def __init__(self, boxes=(), ground=True):
        self.boxes = [b if isinstance(b, Box) else Box.from_list(b) for b in boxes]
        self.ground = bool(ground)

    def sample_points(self, spacing=0.2, include_bottom=False):
        if not self.boxes:
            return np.zeros((0, 3))
        return np.concatenate([b.face_points(spacing, include_bottom) for b in self.boxes])

    def first_hit(self, origins, dirs, max_range=np.inf, with_ground=None):
        """Distance to the first surface along each ray (``inf`` if none within range)."""
        o = np.atleast_2d(np.asarray(origins, dtype=float))
        d = np.atleast_2d(np.asarray(dirs, dtype=float))
        d = d / np.linalg.norm(d, axis=1, keepdims=True)
        if len(o) == 1 and len(d) > 1:
            o = np.repeat(o, len(d), axis=0)
        boxes = self.boxes
        if np.isfinite(max_range) and np.all(o == o[0]):
            # cull boxes entirely beyond range of a shared ray origin
            lo = np.array([b.lo for b in boxes]).reshape(-1, 3)
            hi = np.array([b.hi for b in boxes]).reshape(-1, 3)
            gap = np.linalg.norm(np.maximum(0.0, np.maximum(lo - o[0], o[0] - hi)), axis=1)
            boxes = [b for b, g in zip(boxes, gap) if g <= max_range]
        dist = ray_box_distances(o, d, boxes)
        best = dist.min(axis=1) if dist.shape[1] else np.full(len(o), np.inf)
        ground = self.ground if with_ground is None else with_ground
        if ground:
            with np.errstate(divide="ignore", invalid="ignore"):
                tg = np.where(d[:, 2] < 0, -o[:, 2] / d[:, 2], np.inf)
            tg = np.where(tg >= 0, tg, np.inf)
            best = np.minimum(best, tg)
        return np.where(best <= max_range, best, np.inf)

    def blocking_distance(self, origin, direction, max_range=np.inf):
        """Occlusion oracle for one ray; ``None`` when the ray is clear."""
        t = float(self.first_hit(origin, direction, max_range, with_ground=False)[0])
        return None if not np.isfinite(t) else t

    def is_visible(self, origin, direction, max_range=np.inf):
        return self.blocking_distance(origin, direction, max_range) is None


def generate_world(boxes, spacing=0.2, ground=True):
    """Sampled building faces and the analytic oracle for a list of boxes."""
    world = World(boxes, ground)
    return world.sample_points(spacing), world
