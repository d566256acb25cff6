"""Text file formats for datasets, solutions and reports.

Tables are comma-separated with one header row. Floats are written with
``repr`` so that regenerating a file from the same numbers is
byte-identical. Point clouds are whitespace separated ``x y z`` rows.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import DatasetError
from .frames import GeodeticOrigin
from .gnss_model import EpochObs, SatObs

GNSS_FIELDS = ["epoch_time", "receiver_id", "constellation", "prn", "pseudorange_m",
               "carrier_cycles", "doppler_hz", "snr_dbhz", "wavelength_m", "sat_x", "sat_y",
               "sat_z", "sat_vx", "sat_vy", "sat_vz", "sat_clk_s", "sat_clkdrift"]
IMU_FIELDS = ["timestamp", "wx", "wy", "wz", "ax", "ay", "az"]
TRAJECTORY_FIELDS = ["timestamp", "x", "y", "z", "qx", "qy", "qz", "qw"]
TRUTH_FIELDS = TRAJECTORY_FIELDS + ["vx", "vy", "vz"]


def fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def read_rows(path):
    """``(header, rows)`` with rows as lists of strings; line numbers are 1-based."""
    if not os.path.exists(path):
        raise DatasetError("file not found", path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError("empty file", path, 1)
        rows = [(i + 2, r) for i, r in enumerate(reader) if r]
    return header, rows


def _floats(path, lineno, values):
    try:
        return [float(v) for v in values]
    except ValueError as exc:
        raise DatasetError(f"malformed number ({exc})", path, lineno) from None


def read_table(path, expected_header):
    """Numeric table as an ``n x k`` array; header must match exactly."""
    header, rows = read_rows(path)
    if header != list(expected_header):
        raise DatasetError(f"unexpected header {header}", path, 1)
    k = len(header)
    out = np.empty((len(rows), k))
    for i, (lineno, r) in enumerate(rows):
        if len(r) != k:
            raise DatasetError(f"expected {k} fields, got {len(r)}", path, lineno)
        out[i] = _floats(path, lineno, r)
    return out


# GNSS observations ---------------------------------------------------------

def gnss_rows(epochs):
    for ep in epochs:
        for receiver, obs_list in (("rover", ep.rover_obs), ("base", ep.base_obs)):
            for o in obs_list:
                yield [ep.time, receiver, o.constellation, o.prn, o.pseudorange, o.carrier_phase,
                       o.doppler, o.snr, o.wavelength, *o.sat_pos, *o.sat_vel, o.sat_clock_bias,
                       o.sat_clock_drift]


def write_gnss(path, epochs):
    write_rows(path, GNSS_FIELDS, gnss_rows(epochs))


def read_gnss(path, base_pos):
    header, rows = read_rows(path)
    if header != GNSS_FIELDS:
        raise DatasetError(f"unexpected header {header}", path, 1)
    epochs = {}
    for lineno, r in rows:
        if len(r) != len(GNSS_FIELDS):
            raise DatasetError(f"expected {len(GNSS_FIELDS)} fields, got {len(r)}", path, lineno)
        t = _floats(path, lineno, [r[0]])[0]
        receiver, const = r[1], r[2]
        if receiver not in ("rover", "base"):
            raise DatasetError(f"unknown receiver_id {receiver!r}", path, lineno)
        if const not in ("GPS", "BeiDou"):
            raise DatasetError(f"unknown constellation {const!r}", path, lineno)
        try:
            prn = int(r[3])
        except ValueError:
            raise DatasetError(f"malformed prn {r[3]!r}", path, lineno) from None
        v = _floats(path, lineno, r[4:])
        try:
            obs = SatObs(prn=prn, constellation=const, time=t, pseudorange=v[0],
                         carrier_phase=v[1], doppler=v[2], snr=v[3], wavelength=v[4],
                         sat_pos=v[5:8], sat_vel=v[8:11], sat_clock_bias=v[11],
                         sat_clock_drift=v[12])
        except ValueError as exc:
            raise DatasetError(str(exc), path, lineno) from None
        ep = epochs.setdefault(t, EpochObs(t, [], [], base_pos))
        (ep.rover_obs if receiver == "rover" else ep.base_obs).append(obs)
    return [epochs[t] for t in sorted(epochs)]


# IMU, trajectories ----------------------------------------------------------

def write_imu(path, t, gyro, accel):
    write_rows(path, IMU_FIELDS, ([ti, *w, *a] for ti, w, a in zip(t, gyro, accel)))


def read_imu(path):
    arr = read_table(path, IMU_FIELDS)
    if len(arr) and np.any(np.diff(arr[:, 0]) <= 0):
        bad = int(np.flatnonzero(np.diff(arr[:, 0]) <= 0)[0]) + 3
        raise DatasetError("timestamps not strictly increasing", path, bad)
    return arr[:, 0], arr[:, 1:4], arr[:, 4:7]


def write_trajectory(path, t, positions, quats):
    write_rows(path, TRAJECTORY_FIELDS, ([ti, *p, *q] for ti, p, q in zip(t, positions, quats)))


def read_trajectory(path):
    arr = read_table(path, TRAJECTORY_FIELDS)
    return arr[:, 0], arr[:, 1:4], arr[:, 4:8]


def write_truth(path, t, positions, quats, velocities):
    write_rows(path, TRUTH_FIELDS,
               ([ti, *p, *q, *v] for ti, p, q, v in zip(t, positions, quats, velocities)))


def read_truth(path):
    arr = read_table(path, TRUTH_FIELDS)
    return arr[:, 0], arr[:, 1:4], arr[:, 4:8], arr[:, 8:11]


# point clouds, matrices -----------------------------------------------------

def write_points(path, points):
    rows = np.asarray(points, dtype=float).reshape(-1, 3).tolist()
    with open(path, "w") as fh:
        fh.write("".join(f"{x!r} {y!r} {z!r}\n" for x, y, z in rows))


def read_points(path):
    if not os.path.exists(path):
        raise DatasetError("file not found", path)
    try:
        return np.loadtxt(path, dtype=float, ndmin=2).reshape(-1, 3)
    except ValueError:
        pass  # locate the offending line below
    pts = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 3:
                raise DatasetError("expected 'x y z'", path, lineno)
            pts.append(_floats(path, lineno, parts))
    return np.array(pts, dtype=float).reshape(-1, 3)


def write_matrix(path, M):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    with open(path, "w") as fh:
        for row in M:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_matrix(path):
    if not os.path.exists(path):
        raise DatasetError("file not found", path)
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                rows.append(_floats(path, lineno, line.split()))
    if len({len(r) for r in rows}) > 1:
        raise DatasetError("ragged matrix", path)
    return np.array(rows, dtype=float)


# dataset bundle -------------------------------------------------------------

@dataclass
class Dataset:
    root: str
    meta: dict
    origin: GeodeticOrigin
    base_pos: np.ndarray
    epochs: list
    imu: tuple
    lidar_times: np.ndarray
    lidar_files: list
    truth: tuple = None
    events: list = field(default_factory=list)

    def lidar_points(self, i):
        return read_points(os.path.join(self.root, self.lidar_files[i]))


def load_dataset(root, with_truth=True):
    """Parse a dataset directory written by the simulator."""
    meta_path = os.path.join(root, "dataset.yaml")
    if not os.path.exists(meta_path):
        raise DatasetError("file not found", meta_path)
    try:
        with open(meta_path) as fh:
            meta = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise DatasetError(f"invalid YAML ({exc})", meta_path) from None
    try:
        origin = GeodeticOrigin.from_degrees(*meta["origin"])
        base_pos = np.asarray(meta["base_ecef"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"missing or invalid field ({exc})", meta_path) from None
    epochs = read_gnss(os.path.join(root, "gnss.csv"), base_pos)
    imu = read_imu(os.path.join(root, "imu.csv"))
    idx_path = os.path.join(root, "lidar_index.csv")
    header, rows = read_rows(idx_path)
    if header != ["frame", "timestamp", "file"]:
        raise DatasetError(f"unexpected header {header}", idx_path, 1)
    lidar_times = np.array([_floats(idx_path, n, [r[1]])[0] for n, r in rows])
    lidar_files = [r[2] for _, r in rows]
    truth = None
    events = []
    if with_truth:
        tpath = os.path.join(root, "truth.csv")
        if os.path.exists(tpath):
            truth = read_truth(tpath)
        epath = os.path.join(root, "events.csv")
        if os.path.exists(epath):
            events = read_rows(epath)
    return Dataset(root=root, meta=meta, origin=origin, base_pos=base_pos, epochs=epochs, imu=imu,
                   lidar_times=lidar_times, lidar_files=lidar_files, truth=truth, events=events)
