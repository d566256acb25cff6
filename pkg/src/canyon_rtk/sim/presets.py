"""Ready-made scenarios."""
from __future__ import annotations

import numpy as np

from .scenario import (GnssConfig, ImuConfig, LidarConfig, SatelliteSpec, Scenario,
                       TrajectoryConfig)

# (constellation, prn, azimuth, elevation)
_SKY = [
    ("GPS", 2, 20.0, 76.0), ("GPS", 5, 355.0, 62.0), ("GPS", 9, 175.0, 58.0),
    ("GPS", 12, 250.0, 82.0), ("GPS", 15, 80.0, 35.0), ("GPS", 18, 285.0, 24.0),
    ("GPS", 21, 115.0, 44.0), ("GPS", 24, 235.0, 30.0),
    ("BeiDou", 1, 130.0, 46.0), ("BeiDou", 3, 195.0, 64.0), ("BeiDou", 6, 95.0, 72.0),
    ("BeiDou", 8, 8.0, 84.0), ("BeiDou", 11, 60.0, 30.0), ("BeiDou", 13, 300.0, 27.0),
    ("BeiDou", 14, 160.0, 69.0), ("BeiDou", 16, 262.0, 40.0),
]


def sky(drift=True):
    out = []
    for k, (c, prn, az, el) in enumerate(_SKY):
        rate = 0.004 * (1 if k % 2 else -1) if drift else 0.0
        out.append(SatelliteSpec(c, prn, az, el, azimuth_rate_deg_s=rate))
    return out


def _street_blocks(side, y0, y1, seed):
    """Alternating buildings along one side of a north-running street."""
    rng = np.random.default_rng(seed)
    boxes = []
    y = y0
    while y < y1:
        length = float(rng.uniform(25.0, 40.0))
        face = float(rng.uniform(11.0, 15.0))
        depth = float(rng.uniform(15.0, 25.0))
        height = float(rng.uniform(30.0, 60.0))
        if side > 0:
            boxes.append([face, y, 0.0, face + depth, y + length, height])
        else:
            boxes.append([-face - depth, y, 0.0, -face, y + length, height])
        y += length + float(rng.uniform(6.0, 12.0))
    return boxes


def canyon_buildings(street_start=-60.0):
    """Street running north from ``street_start``; a positive value leaves an open approach."""
    y0 = float(street_start)
    boxes = _street_blocks(+1, y0, 260.0, 11) + _street_blocks(-1, y0 + 5.0, 260.0, 12)
    # kiosks and shelters on the pavements give surfaces facing along the street
    for k, y in enumerate(np.arange(y0 - 15.0, 240.0, 22.0)):
        x = 8.0 if k % 2 else -9.0
        boxes.append([x, float(y), 0.0, x + 1.5, float(y) + 3.0, 3.0])
    # building closing the street
    boxes.append([-40.0, 275.0, 0.0, 40.0, 300.0, 45.0])
    return boxes


def canyon_waypoints(duration=60.0, speed=3.0):
    t = np.arange(0.0, duration + 5.0 + 1e-9, 5.0)
    north = speed * t
    east = 1.2 * np.sin(2 * np.pi * t / 40.0)
    return [[float(a), float(b), float(c)] for a, b, c in zip(t, east, north)]


def canyon(seed=7, duration=60.0, **overrides):
    """Dense urban street: walls on both sides, few high-elevation LOS satellites."""
    sc = dict(
        name="canyon", seed=seed, duration=duration,
        trajectory=TrajectoryConfig(waypoints=canyon_waypoints(duration), height=1.5),
        buildings=canyon_buildings(), satellites=sky(),
        gnss=GnssConfig(), imu=ImuConfig(), lidar=LidarConfig(),
    )
    sc.update(overrides)
    return Scenario(**sc)


def open_sky(seed=3, duration=20.0, **overrides):
    """No obstructions; every satellite is LOS."""
    sc = dict(
        name="open_sky", seed=seed, duration=duration, ground=True,
        trajectory=TrajectoryConfig(waypoints=canyon_waypoints(duration), height=1.5),
        buildings=[], satellites=sky(),
    )
    sc.update(overrides)
    return Scenario(**sc)
