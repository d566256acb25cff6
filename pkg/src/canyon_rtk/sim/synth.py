"""Measurement synthesis for a :class:`Scenario`.

Every stream draws from its own child of the scenario seed, so changing one
stream's configuration leaves the others untouched, and regenerating a
dataset from the same scenario reproduces it byte for byte.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from .. import io
from ..frames import (direction_from_elevation_azimuth, ecef_to_enu, elevation_azimuth,
                      enu_to_ecef, enu_vector_to_ecef, rot_to_quat)
from ..gnss_model import (BDS_B1I_WAVELENGTH, GPS_L1_WAVELENGTH, SPEED_OF_LIGHT, EpochObs,
                          NoiseModel, SatObs, measurement_sigma, sat_label)
from .scenario import Scenario, Trajectory
from .world import World

WAVELENGTHS = {"GPS": GPS_L1_WAVELENGTH, "BeiDou": BDS_B1I_WAVELENGTH}
STREAMS = ("gnss", "imu", "lidar", "constants")


def stream_rngs(seed):
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(c) for name, c in zip(STREAMS, children)}


def scenario_world(scenario: Scenario):
    return World(scenario.buildings, scenario.ground)


def gnss_epoch_times(scenario: Scenario):
    g = scenario.gnss
    n = int(np.floor((scenario.duration - g.time_offset) * g.rate_hz + 1e-9)) + 1
    return g.time_offset + np.arange(max(n, 0)) / g.rate_hz


def imu_times(scenario: Scenario):
    n = int(np.floor(scenario.duration * scenario.imu.rate_hz + 1e-9)) + 1
    return np.arange(n) / scenario.imu.rate_hz


def lidar_times(scenario: Scenario):
    n = int(np.floor(scenario.duration * scenario.lidar.rate_hz + 1e-9)) + 1
    return np.arange(n) / scenario.lidar.rate_hz


def satellite_state(spec, t, sat_range, origin):
    """ECEF position and velocity of a satellite moving on a sphere about the origin."""
    el = np.radians(spec.elevation_deg + spec.elevation_rate_deg_s * t)
    az = np.radians(spec.azimuth_deg + spec.azimuth_rate_deg_s * t)
    d = direction_from_elevation_azimuth(el, az)
    d_el = np.array([-np.sin(el) * np.sin(az), -np.sin(el) * np.cos(az), np.cos(el)])
    d_az = np.array([np.cos(el) * np.cos(az), -np.cos(el) * np.sin(az), 0.0])
    v_enu = sat_range * (d_el * np.radians(spec.elevation_rate_deg_s)
                         + d_az * np.radians(spec.azimuth_rate_deg_s))
    return enu_to_ecef(sat_range * d, origin), enu_vector_to_ecef(v_enu, origin)


@dataclass
class GnssTruth:
    """Per-epoch hidden quantities written to the event log."""

    rows: list = field(default_factory=list)


def synthesize_gnss(scenario: Scenario, rng=None, world=None):
    """Rover and base observations for every epoch, plus the event log rows."""
    rngs = stream_rngs(scenario.seed)
    rng = rng or rngs["gnss"]
    const_rng = rngs["constants"]
    world = world or scenario_world(scenario)
    g = scenario.gnss
    origin = scenario.geodetic_origin
    traj = Trajectory(scenario.trajectory)
    lever = np.asarray(scenario.lever_arm, dtype=float)
    base_enu = np.asarray(scenario.base_enu, dtype=float)
    base_ecef = enu_to_ecef(base_enu, origin)
    model = NoiseModel(sigma_base=g.sigma_base, snr_reference=g.snr_reference)
    quiet = scenario.noise_free

    sats = list(scenario.satellites)
    labels = [sat_label(s.constellation, s.prn) for s in sats]
    n = len(sats)
    sat_clk = const_rng.uniform(-1e-4, 1e-4, n)
    sat_clkdrift = const_rng.uniform(-1e-11, 1e-11, n)
    frac_sat = const_rng.uniform(0, 1, n)
    frac_rover, frac_base = const_rng.uniform(0, 1, 2)
    n_base = const_rng.integers(-1000, 1000, n)
    n_rover = const_rng.integers(-1000, 1000, n)
    iono_phase = const_rng.uniform(0, 2 * np.pi, n)

    slip_offset = np.zeros(n, dtype=np.int64)
    was_nlos = np.zeros(n, dtype=bool)
    nlos_bias = np.zeros(n)
    epochs, truth = [], GnssTruth()

    for t in gnss_epoch_times(scenario):
        R = traj.rotation(t)
        ant_enu = traj.position(t) + R @ lever
        ant_ecef = enu_to_ecef(ant_enu, origin)
        ant_vel = enu_vector_to_ecef(traj.velocity(t), origin)
        clk_r = g.rover_clock_bias + g.rover_clock_drift * t
        clk_e = g.base_clock_bias + g.base_clock_drift * t
        rover, base = [], []
        for i, s in enumerate(sats):
            lam = WAVELENGTHS[s.constellation]
            sp, sv = satellite_state(s, t, g.sat_range, origin)
            sat_enu = ecef_to_enu(sp, origin)
            el_o = np.radians(s.elevation_deg + s.elevation_rate_deg_s * t)
            iono = g.iono_zenith / np.sin(el_o) * (1.0 + 0.1 * np.sin(0.01 * t + iono_phase[i]))
            tropo = g.tropo_zenith / np.sin(el_o)

            blocked = not world.is_visible(ant_enu, sat_enu - ant_enu)
            forced = [ev for ev in scenario.nlos_events
                      if ev.satellite == labels[i] and ev.start <= t <= ev.end]
            nlos = blocked or bool(forced)
            if nlos and not was_nlos[i]:
                nlos_bias[i] = rng.uniform(g.nlos_bias_min, g.nlos_bias_max)
            if not nlos and was_nlos[i]:
                # lock re-acquired with a fresh integer
                n_rover[i] = rng.integers(-1000, 1000)
            bias = (forced[0].bias if forced else nlos_bias[i]) if nlos else 0.0
            slip_now = 0
            for ev in scenario.cycle_slips:
                if ev.satellite == labels[i] and abs(ev.time - t) < 0.5 / g.rate_hz:
                    slip_now += int(ev.cycles)
            slip_offset[i] += slip_now
            was_nlos[i] = nlos

            for receiver in ("rover", "base"):
                if receiver == "rover":
                    pos, vel, clk, drift = ant_ecef, ant_vel, clk_r, g.rover_clock_drift
                    at_enu = ant_enu
                    amb = n_rover[i] + slip_offset[i] + frac_rover
                else:
                    pos, vel, clk, drift = base_ecef, np.zeros(3), clk_e, g.base_clock_drift
                    at_enu = base_enu
                    amb = n_base[i] + frac_base
                el, _ = elevation_azimuth(at_enu, sat_enu)
                snr = g.snr_los_min + (g.snr_los_max - g.snr_los_min) * np.sin(el)
                if receiver == "rover" and nlos:
                    snr -= g.snr_nlos_drop
                sigma = measurement_sigma(max(el, 1e-3), snr, model)
                e = (sp - pos) / np.linalg.norm(sp - pos)
                rng_m = float(np.linalg.norm(sp - pos))
                clock_m = SPEED_OF_LIGHT * (clk - sat_clk[i])
                if quiet:
                    n_rho = n_psi = n_d = 0.0
                else:
                    n_rho = rng.normal(0.0, sigma)
                    n_psi = rng.normal(0.0, sigma / model.carrier_ratio)
                    n_d = rng.normal(0.0, g.doppler_sigma_hz)
                rho = rng_m + clock_m + iono + tropo + n_rho
                psi = (rng_m + clock_m - iono + tropo + n_psi) / lam + amb + frac_sat[i]
                dop = (e @ (sv - vel) + SPEED_OF_LIGHT * (drift - sat_clkdrift[i])) / lam + n_d
                if receiver == "rover" and nlos:
                    rho += bias
                    psi = float("nan")
                obs = SatObs(prn=s.prn, constellation=s.constellation, time=float(t),
                             pseudorange=float(rho), carrier_phase=float(psi), doppler=float(dop),
                             snr=float(snr), wavelength=lam, sat_pos=sp, sat_vel=sv,
                             sat_clock_bias=float(sat_clk[i]), sat_clock_drift=float(sat_clkdrift[i]))
                (rover if receiver == "rover" else base).append(obs)
            truth.rows.append([float(t), s.constellation, s.prn, "NLOS" if nlos else "LOS",
                               int(n_rover[i] + slip_offset[i]), int(n_base[i]), slip_now,
                               float(bias)])
        epochs.append(EpochObs(float(t), rover, base, base_ecef))
    return epochs, truth


EVENT_FIELDS = ["epoch_time", "constellation", "prn", "visibility", "rover_ambiguity",
                "base_ambiguity", "slip_cycles", "nlos_bias_m"]


def synthesize_imu(scenario: Scenario, rng=None):
    """``(t, gyro, accel)`` in the body frame with constant-plus-random-walk biases."""
    rng = rng or stream_rngs(scenario.seed)["imu"]
    c = scenario.imu
    traj = Trajectory(scenario.trajectory)
    t = imu_times(scenario)
    dt = 1.0 / c.rate_hz
    gravity = np.array([0.0, 0.0, -c.gravity])
    yaw = traj.yaw(t)
    acc_enu = traj.acceleration(t) - gravity
    cy, sy = np.cos(yaw), np.sin(yaw)
    # R^T a for a yaw-only attitude
    accel = np.stack([cy * acc_enu[:, 0] + sy * acc_enu[:, 1],
                      -sy * acc_enu[:, 0] + cy * acc_enu[:, 1], acc_enu[:, 2]], axis=1)
    gyro = np.zeros((len(t), 3))
    gyro[:, 2] = traj.yaw_rate(t)
    if not scenario.noise_free:
        ba = np.asarray(c.accel_bias, dtype=float) + np.cumsum(
            rng.normal(0.0, c.accel_bias_rw * np.sqrt(dt), (len(t), 3)), axis=0)
        bw = np.asarray(c.gyro_bias, dtype=float) + np.cumsum(
            rng.normal(0.0, c.gyro_bias_rw * np.sqrt(dt), (len(t), 3)), axis=0)
        accel = accel + ba + rng.normal(0.0, c.accel_noise / np.sqrt(dt), (len(t), 3))
        gyro = gyro + bw + rng.normal(0.0, c.gyro_noise / np.sqrt(dt), (len(t), 3))
    return t, gyro, accel


def lidar_directions(config):
    el = np.radians(np.linspace(config.elevation_min_deg, config.elevation_max_deg, config.channels))
    az = np.radians(np.arange(0.0, 360.0, config.azimuth_step_deg))
    E, A = np.meshgrid(el, az, indexing="ij")
    return np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1).reshape(-1, 3)


def synthesize_lidar_frame(scenario: Scenario, t, rng, world=None, directions=None):
    """Sensor-frame returns of one scan at time ``t``."""
    world = world or scenario_world(scenario)
    cfg = scenario.lidar
    dirs = lidar_directions(cfg) if directions is None else directions
    sensor = Trajectory(scenario.trajectory).pose(t).compose(scenario.lidar_extrinsic)
    dist = world.first_hit(sensor.translation, dirs @ sensor.rotation.T, cfg.max_range)
    hit = np.isfinite(dist)
    r = dist[hit]
    if not scenario.noise_free:
        r = r + rng.normal(0.0, cfg.range_sigma, r.size)
    return dirs[hit] * r[:, None]


def synthesize_lidar(scenario: Scenario, rng=None, world=None):
    rng = rng or stream_rngs(scenario.seed)["lidar"]
    world = world or scenario_world(scenario)
    dirs = lidar_directions(scenario.lidar)
    times = lidar_times(scenario)
    return times, [synthesize_lidar_frame(scenario, t, rng, world, dirs) for t in times]


def truth_states(scenario: Scenario, times):
    traj = Trajectory(scenario.trajectory)
    p = traj.position(times)
    v = traj.velocity(times)
    q = np.array([rot_to_quat(traj.rotation(t)) for t in times])
    return p, q, v


def generate_dataset(scenario: Scenario, outdir):
    """Write the full dataset directory; returns the list of files written."""
    os.makedirs(os.path.join(outdir, "lidar"), exist_ok=True)
    rngs = stream_rngs(scenario.seed)
    world = scenario_world(scenario)
    origin = scenario.geodetic_origin

    epochs, truth = synthesize_gnss(scenario, rngs["gnss"], world)
    t_imu, gyro, accel = synthesize_imu(scenario, rngs["imu"])
    t_lidar, frames = synthesize_lidar(scenario, rngs["lidar"], world)

    written = []

    def path(*p):
        full = os.path.join(outdir, *p)
        written.append(full)
        return full

    scenario.dump(path("scenario.yaml"))
    traj = Trajectory(scenario.trajectory)
    meta = {
        "origin": [float(v) for v in scenario.origin],
        "base_ecef": [float(v) for v in enu_to_ecef(np.asarray(scenario.base_enu, float), origin)],
        "lever_arm": [float(v) for v in scenario.lever_arm],
        "lidar_translation": [float(v) for v in scenario.lidar_translation],
        "gravity": float(scenario.imu.gravity),
        "imu_noise": {k: float(getattr(scenario.imu, k)) for k in
                      ("accel_noise", "gyro_noise", "accel_bias_rw", "gyro_bias_rw")},
        "noise_model": {"sigma_base": float(scenario.gnss.sigma_base),
                        "snr_reference": float(scenario.gnss.snr_reference)},
        "initial_state": {
            "timestamp": 0.0,
            "position": [float(v) for v in traj.position(0.0)],
            "velocity": [float(v) for v in traj.velocity(0.0)],
            "yaw": float(traj.yaw(0.0)),
        },
    }
    with open(path("dataset.yaml"), "w") as fh:
        yaml.safe_dump(meta, fh, sort_keys=False)
    io.write_gnss(path("gnss.csv"), epochs)
    io.write_imu(path("imu.csv"), t_imu, gyro, accel)
    p, q, v = truth_states(scenario, t_imu)
    io.write_truth(path("truth.csv"), t_imu, p, q, v)
    io.write_rows(path("events.csv"), EVENT_FIELDS, truth.rows)
    rows = []
    for i, (t, pts) in enumerate(zip(t_lidar, frames)):
        name = f"lidar/frame_{i:06d}.txt"
        io.write_points(path(name), pts)
        rows.append([i, float(t), name])
    io.write_rows(path("lidar_index.csv"), ["frame", "timestamp", "file"], rows)
    return written
