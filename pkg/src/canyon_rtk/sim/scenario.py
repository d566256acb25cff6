"""Scenario configuration and the ground-truth trajectory."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml
from scipy.interpolate import CubicSpline

from ..frames import GeodeticOrigin, RigidTransform, yaw_rotation


def _build(cls, data, where):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ValueError(f"{where}: expected a mapping")
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"{where}: unknown keys {sorted(unknown)}")
    return cls(**data)


@dataclass
class SatelliteSpec:
    constellation: str
    prn: int
    azimuth_deg: float
    elevation_deg: float
    azimuth_rate_deg_s: float = 0.0
    elevation_rate_deg_s: float = 0.0


@dataclass
class GnssConfig:
    rate_hz: float = 1.0
    time_offset: float = 0.2
    sigma_base: float = 0.3
    snr_reference: float = 50.0
    snr_los_min: float = 35.0
    snr_los_max: float = 50.0
    snr_nlos_drop: float = 8.0
    doppler_sigma_hz: float = 0.1
    nlos_bias_min: float = 5.0
    nlos_bias_max: float = 50.0
    sat_range: float = 2.02e7
    rover_clock_bias: float = 1e-4
    rover_clock_drift: float = 1e-8
    base_clock_bias: float = -2e-4
    base_clock_drift: float = -5e-9
    iono_zenith: float = 3.0
    tropo_zenith: float = 2.3


@dataclass
class ImuConfig:
    rate_hz: float = 100.0
    accel_noise: float = 2e-3
    gyro_noise: float = 2e-4
    accel_bias_rw: float = 5e-4
    gyro_bias_rw: float = 2e-5
    accel_bias: list = field(default_factory=lambda: [0.02, -0.015, 0.01])
    gyro_bias: list = field(default_factory=lambda: [1e-4, -2e-4, 5e-5])
    gravity: float = 9.81


@dataclass
class LidarConfig:
    rate_hz: float = 2.0
    channels: int = 32
    elevation_min_deg: float = -25.0
    elevation_max_deg: float = 35.0
    azimuth_step_deg: float = 2.0
    max_range: float = 80.0
    range_sigma: float = 0.02


@dataclass
class TrajectoryConfig:
    waypoints: list = field(default_factory=lambda: [[0.0, 0.0, 0.0], [10.0, 0.0, 30.0]])
    height: float = 1.5
    static_yaw_deg: float = 90.0


@dataclass
class SlipEvent:
    time: float
    satellite: str
    cycles: int


@dataclass
class NlosEvent:
    satellite: str
    start: float
    end: float
    bias: float


@dataclass
class Scenario:
    name: str = "scenario"
    seed: int = 0
    duration: float = 10.0
    origin: list = field(default_factory=lambda: [22.3, 114.18, 0.0])
    base_enu: list = field(default_factory=lambda: [-40.0, -80.0, 25.0])
    lever_arm: list = field(default_factory=lambda: [0.0, 0.0, 0.3])
    lidar_translation: list = field(default_factory=lambda: [0.0, 0.0, 0.2])
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    buildings: list = field(default_factory=list)
    ground: bool = True
    face_spacing: float = 0.2
    satellites: list = field(default_factory=list)
    gnss: GnssConfig = field(default_factory=GnssConfig)
    imu: ImuConfig = field(default_factory=ImuConfig)
    lidar: LidarConfig = field(default_factory=LidarConfig)
    cycle_slips: list = field(default_factory=list)
    nlos_events: list = field(default_factory=list)
    noise_free: bool = False

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        wp = np.asarray(self.trajectory.waypoints, dtype=float)
        if wp.ndim != 2 or wp.shape[1] != 3 or np.any(np.diff(wp[:, 0]) <= 0):
            raise ValueError("trajectory waypoints must be [t, east, north] rows with increasing t")
        labels = {_label(s) for s in self.satellites}
        for ev in list(self.cycle_slips) + list(self.nlos_events):
            if ev.satellite not in labels:
                raise ValueError(f"event references unknown satellite {ev.satellite}")

    @property
    def geodetic_origin(self):
        return GeodeticOrigin.from_degrees(*self.origin)

    @property
    def lidar_extrinsic(self):
        return RigidTransform(np.eye(3), np.asarray(self.lidar_translation, dtype=float))

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        try:
            d["trajectory"] = _build(TrajectoryConfig, d.get("trajectory"), "trajectory")
            d["gnss"] = _build(GnssConfig, d.get("gnss"), "gnss")
            d["imu"] = _build(ImuConfig, d.get("imu"), "imu")
            d["lidar"] = _build(LidarConfig, d.get("lidar"), "lidar")
            d["satellites"] = [_build(SatelliteSpec, s, "satellites") for s in d.get("satellites", [])]
            d["cycle_slips"] = [_build(SlipEvent, s, "cycle_slips") for s in d.get("cycle_slips", [])]
            d["nlos_events"] = [_build(NlosEvent, s, "nlos_events") for s in d.get("nlos_events", [])]
            names = {f.name for f in fields(cls)}
            unknown = set(d) - names
            if unknown:
                raise ValueError(f"unknown scenario keys {sorted(unknown)}")
            return cls(**d)
        except TypeError as exc:
            raise ValueError(str(exc)) from exc

    def to_dict(self):
        return asdict(self)

    def dump(self, path):
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)


def _label(spec: SatelliteSpec):
    from ..gnss_model import sat_label
    return sat_label(spec.constellation, spec.prn)


def load_scenario(path):
    with open(path) as fh:
        return Scenario.from_dict(yaml.safe_load(fh))


class Trajectory:
    """Cubic-spline path at constant height; heading follows the velocity."""

    def __init__(self, config: TrajectoryConfig):
        wp = np.asarray(config.waypoints, dtype=float)
        self.t0, self.t1 = wp[0, 0], wp[-1, 0]
        self.height = float(config.height)
        self.static_yaw = np.radians(config.static_yaw_deg)
        self._sx = CubicSpline(wp[:, 0], wp[:, 1])
        self._sy = CubicSpline(wp[:, 0], wp[:, 2])

    def _eval(self, t, nu):
        t = np.asarray(t, dtype=float)
        return self._sx(t, nu), self._sy(t, nu)

    def position(self, t):
        x, y = self._eval(t, 0)
        return np.stack([x, y, np.full_like(np.asarray(x, dtype=float), self.height)], axis=-1)

    def velocity(self, t):
        x, y = self._eval(t, 1)
        return np.stack([x, y, np.zeros_like(np.asarray(x, dtype=float))], axis=-1)

    def acceleration(self, t):
        x, y = self._eval(t, 2)
        return np.stack([x, y, np.zeros_like(np.asarray(x, dtype=float))], axis=-1)

    def yaw(self, t):
        vx, vy = self._eval(t, 1)
        moving = np.hypot(vx, vy) > 1e-9
        return np.where(moving, np.arctan2(vy, vx), self.static_yaw)

    def yaw_rate(self, t):
        vx, vy = self._eval(t, 1)
        ax, ay = self._eval(t, 2)
        s2 = vx * vx + vy * vy
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(s2 > 1e-18, (vx * ay - vy * ax) / s2, 0.0)

    def rotation(self, t):
        return yaw_rotation(float(self.yaw(t)))

    def pose(self, t):
        """Body-to-ENU transform at time ``t``."""
        return RigidTransform(self.rotation(t), self.position(t))
