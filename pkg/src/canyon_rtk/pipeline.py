"""Keyframe-driven processing loop for the three positioning modes.

``rtk_only``
    epoch-wise DD least squares plus integer search, no IMU or LiDAR.
``fgo_vs``
    sliding-window fusion of IMU, virtual satellites and GNSS.
``fgo_vs_nlos``
    as ``fgo_vs`` with map-based NLOS exclusion before the GNSS factors.

For the fusion modes each keyframe goes through IMU propagation, NLOS
exclusion, cycle-slip screening, window optimisation, ambiguity resolution,
the global pose-graph update and finally a re-pose of the point cloud map.
"""
from __future__ import annotations

import logging
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml

from . import ambiguity, imu_preint
from .cycle_slip import AmbiguityTrack, detect_cycle_slips, estimate_dd_ambiguity_float
from .errors import (AllExcluded, DatasetError, InsufficientSatellites, InvalidElevation, IoError,
                     NoOverlap, NotPositiveDefinite, SingularInformation)
from .fgo import pose_graph
from .fgo.factors import EpochGeometry, ImuFactor, VsFactor
from .fgo.graph import PriorFactor, covariance
from .fgo.states import NavState, interpolation_weights
from .fgo.window import (EpochInput, KeyframeInput, SlidingWindow, ambiguity_key,
                         blocks_from_covariance, epoch_position, epoch_selector, epoch_rotation, q_nn_from_information,
                         state_key)
from .frames import (GeodeticOrigin, RigidTransform, ecef_to_enu, elevation_azimuth, enu_to_ecef,
                     rot_to_quat, yaw_rotation)
from .gnss_model import (SPEED_OF_LIGHT, EpochObs, NoiseModel, form_double_differences,
                         measurement_sigma, satellite_elevation, select_masters)
from .io import TRAJECTORY_FIELDS, Dataset, load_dataset, write_rows, write_trajectory
from .pcm_nlos import (NlosSearchParams, PointCloudMap, classify_epoch, derive_window_length,
                       exclude_nlos)
from .metrics import compute_metrics, emit_reports
from .rtk_baseline import mask_elevation, solve_epoch
from .virtual_sat import PlaneParams, associate_batch, extract_planar_features, select_vs, vs_sigma

log = logging.getLogger(__name__)

MODES = ("rtk_only", "fgo_vs", "fgo_vs_nlos")


@dataclass
class RunConfig:
    dataset: str
    output: str = None
    mode: str = "fgo_vs_nlos"
    seed: int = 0
    window_size: int = 10
    keyframe_distance: float = 1.0
    keyframe_interval: float = 1.0
    ratio_threshold: float = 3.0
    slip_threshold: float = 0.5
    elevation_mask_deg: float = 10.0
    max_iterations: int = 50
    rel_tol: float = 1e-6
    # virtual satellites
    vs_max_count: int = 200
    vs_sigma: float = 0.1
    vs_weight: float = 1.0
    k_neigh: int = 20
    planarity_threshold: float = 0.1
    gate_radius: float = 1.0
    assoc_neigh: int = 10
    # NLOS search
    nlos_step: float = 2.0
    nlos_radius: float = 1.0
    nlos_neighbor_threshold: int = 5
    nlos_max_range: float = 250.0
    map_span: float = 250.0
    map_max_keyframes: int = 60
    # initial state uncertainty
    init_sigma_position: float = 0.05
    init_sigma_attitude_deg: float = 0.5
    init_sigma_velocity: float = 0.05
    init_sigma_bias_acc: float = 0.05
    init_sigma_bias_gyro: float = 1e-3
    # global pose graph
    relative_sigma_translation: float = 0.05
    relative_sigma_rotation_deg: float = 0.5
    fixed_sigma: float = pose_graph.FIXED_SIGMA
    adop_weights: list = field(default_factory=list)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.window_size < 2:
            raise ValueError("window_size must be at least 2")
        self.adop_weights = [float(w) for w in self.adop_weights]
        if any(w < 0 for w in self.adop_weights):
            raise ValueError("VS weights must be non-negative")

    @classmethod
    def from_dict(cls, d, base_dir=None):
        d = dict(d or {})
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown run config keys {sorted(unknown)}")
        if "dataset" not in d:
            raise ValueError("run config needs a 'dataset' entry")
        for k in ("dataset", "output"):
            if d.get(k) and base_dir and not os.path.isabs(d[k]):
                d[k] = os.path.normpath(os.path.join(base_dir, d[k]))
        return cls(**d)

    def to_dict(self):
        return asdict(self)

    @property
    def plane_params(self):
        return PlaneParams(self.k_neigh, self.planarity_threshold, self.gate_radius,
                           self.assoc_neigh)

    @property
    def nlos_params(self):
        return NlosSearchParams(self.nlos_step, self.nlos_radius, self.nlos_neighbor_threshold,
                                self.nlos_max_range, np.radians(self.elevation_mask_deg))


def load_run_config(path):
    if not os.path.exists(path):
        raise DatasetError("file not found", path)
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise DatasetError(f"invalid YAML ({exc})", path) from None
    try:
        return RunConfig.from_dict(data, os.path.dirname(os.path.abspath(path)))
    except (TypeError, ValueError) as exc:
        raise DatasetError(str(exc), path) from None


@dataclass
class EpochRecord:
    time: float
    status: str = "none"
    position: np.ndarray = None
    quaternion: np.ndarray = None
    adop: float = float("nan")
    ratio: float = float("nan")
    n_dd: int = 0
    n_excluded: int = 0
    n_vs: int = 0


@dataclass
class RunResult:
    mode: str
    epochs: list = field(default_factory=list)
    keyframes: list = field(default_factory=list)    # (id, t, position, quaternion)
    slips: list = field(default_factory=list)        # SlipReport
    skyplot: list = field(default_factory=list)      # (t, label, az deg, el deg, LOS/NLOS/-)
    adop_sweep: list = field(default_factory=list)   # (t, weight, adop)
    fixes: list = field(default_factory=list)        # (t, position)
    factor_families: set = field(default_factory=set)

    @property
    def solved(self):
        return [e for e in self.epochs if e.status != "none"]


def initial_nav_state(meta):
    try:
        init = meta["initial_state"]
        return NavState(position=init["position"], rotation=yaw_rotation(float(init["yaw"])),
                        velocity=init.get("velocity", [0.0, 0.0, 0.0]),
                        timestamp=float(init.get("timestamp", 0.0)), keyframe_id=0)
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"dataset.yaml lacks a usable initial_state ({exc})") from None


def noise_model_from(meta):
    nm = meta.get("noise_model") or {}
    return NoiseModel(sigma_base=float(nm.get("sigma_base", 0.3)),
                      snr_reference=float(nm.get("snr_reference", 50.0)))


def _skyplot_rows(epoch: EpochObs, receiver_enu, origin, labels):
    rows = []
    for o in sorted(epoch.rover_obs, key=lambda o: o.key):
        el, az = elevation_azimuth(receiver_enu, ecef_to_enu(o.sat_pos, origin))
        lab = labels.get(o.key)
        rows.append((epoch.time, o.label, float(np.degrees(az)), float(np.degrees(el)),
                     lab.label if lab is not None else "-"))
    return rows


# --------------------------------------------------------------------------
# rtk_only


def run_rtk_only(config: RunConfig, ds: Dataset) -> RunResult:
    # the epoch-wise solver uses DD code and carrier rows only
    out = RunResult("rtk_only", factor_families={"dd_pseudorange", "dd_carrier"})
    origin = ds.origin
    noise = noise_model_from(ds.meta)
    lever = np.asarray(ds.meta.get("lever_arm", [0.0, 0.0, 0.0]), dtype=float)
    guess = ecef_to_enu(ds.base_pos, origin)
    for ep in ds.epochs:
        sol = solve_epoch(ep, origin, guess, noise, np.radians(config.elevation_mask_deg),
                          config.ratio_threshold)
        rec = EpochRecord(ep.time, sol.status, n_dd=sol.n_dd, adop=sol.adop, ratio=sol.ratio)
        out.skyplot.extend(_skyplot_rows(ep, guess, origin, {}))
        if sol.status != "none":
            # no attitude here: the lever arm is removed assuming a level vehicle
            rec.position = sol.position - lever
            rec.quaternion = np.array([0.0, 0.0, 0.0, 1.0])
            guess = sol.position
            if sol.status == "fixed":
                out.fixes.append((ep.time, rec.position))
        out.epochs.append(rec)
    return out


# --------------------------------------------------------------------------
# fusion modes


class FusionRunner:
    """State of one fusion run; call :meth:`run` once."""

    def __init__(self, config: RunConfig, ds: Dataset):
        self.cfg = config
        self.ds = ds
        self.origin: GeodeticOrigin = ds.origin
        self.base_ecef = np.asarray(ds.base_pos, dtype=float)
        meta = ds.meta
        self.noise = noise_model_from(meta)
        self.lever = np.asarray(meta.get("lever_arm", [0.0, 0.0, 0.0]), dtype=float)
        self.extrinsic = RigidTransform(np.eye(3), np.asarray(meta.get("lidar_translation",
                                                                       [0.0, 0.0, 0.0]), float))
        self.gravity = np.array([0.0, 0.0, -float(meta.get("gravity", 9.81))])
        self.imu_noise = imu_preint.ImuNoise(**(meta.get("imu_noise") or {}))
        self.use_nlos = config.mode == "fgo_vs_nlos"
        self.mask = np.radians(config.elevation_mask_deg)
        self.window = SlidingWindow(config.window_size, self.base_ecef, config.max_iterations,
                                    config.rel_tol, config.adop_weights)
        self.global_graph = pose_graph.GlobalPoseGraph()
        self.rel_info = pose_graph.relative_sqrt_info(
            config.relative_sigma_translation, np.radians(config.relative_sigma_rotation_deg))
        self.pcm = PointCloudMap(config.map_max_keyframes)
        self.track = AmbiguityTrack()
        self.last_amb = {}
        self.n_real = 0
        self.result = RunResult(config.mode)
        self.records = {}

    # -- helpers -----------------------------------------------------------

    def _initial_prior(self, state):
        c = self.cfg
        s = np.r_[np.full(3, c.init_sigma_position), np.full(3, np.radians(c.init_sigma_attitude_deg)),
                  np.full(3, c.init_sigma_velocity), np.full(3, c.init_sigma_bias_acc),
                  np.full(3, c.init_sigma_bias_gyro)]
        return PriorFactor(state_key(state.keyframe_id), state, np.diag(1.0 / s))

    def _vs_factor(self, kf_id, scan, pred: NavState):
        if len(self.pcm) == 0 or len(scan) == 0:
            return None
        feats = extract_planar_features(scan, self.cfg.plane_params)
        if len(feats) == 0:
            return None
        pose = RigidTransform(pred.rotation, pred.position).compose(self.extrinsic)
        anchors, ok = associate_batch(pose.apply(feats), self.pcm.points, self.cfg.plane_params,
                                      self.pcm.tree)
        cand = np.flatnonzero(ok)
        if cand.size == 0:
            return None
        pick = cand[select_vs(cand.size, self.cfg.vs_max_count, [self.cfg.seed, kf_id])]
        sigma = vs_sigma(self.cfg.vs_sigma, len(pick), self.n_real, self.cfg.vs_weight)
        return VsFactor(state_key(kf_id), feats[pick], anchors[pick], sigma, self.extrinsic)

    def _epoch_input(self, index, ep: EpochObs, k0: NavState, k1: NavState):
        """GNSS preprocessing of one epoch against predicted keyframe states."""
        w0, w1 = interpolation_weights(k0.timestamp, k1.timestamp, ep.time)
        geom = EpochGeometry(self.origin, w0, w1, self.lever)
        ant = geom.antenna_enu(k0, k1)
        ant_ecef = enu_to_ecef(ant, self.origin)
        vel = w0 * k0.velocity + w1 * k1.velocity
        rec = EpochRecord(ep.time)
        inp = EpochInput(index, ep.time, k0.keyframe_id, k1.keyframe_id, geom)

        obs = mask_elevation(ep, ant, self.origin, self.mask)
        labels = {}
        if self.use_nlos and len(self.pcm):
            try:
                labels = classify_epoch(self.pcm, ant, obs, self.origin, self.cfg.nlos_params)
            except InvalidElevation:
                labels = {}
            try:
                obs, report = exclude_nlos(obs, labels)
            except AllExcluded as exc:
                report = exc.report
                obs = EpochObs(obs.time, [], list(obs.base_obs), obs.base_pos)
            rec.n_excluded = len(report)
        self.result.skyplot.extend(_skyplot_rows(ep, ant, self.origin, labels))

        try:
            masters = select_masters(obs, ant, self.origin)
        except InsufficientSatellites:
            masters = {}
        dds = form_double_differences(obs, masters, self.origin, ant, self.noise).observations
        matched = obs.matched()
        self.n_real = len(matched)
        inp.pseudorange = list(dds)
        current = {dd.key: estimate_dd_ambiguity_float(dd, ant_ecef, self.base_ecef)
                   for dd in dds if dd.has_phase}
        reports, self.track = detect_cycle_slips(self.track, current, ep.time,
                                                 self.cfg.slip_threshold, masters)
        self.result.slips.extend(reports)
        initial = {}
        for dd in dds:
            if not dd.has_phase:
                continue
            key = ambiguity_key(index, dd.constellation, dd.slave_prn)
            inp.carrier.append((dd, key))
            prev = self.last_amb.get(dd.key)
            sigma_n = dd.sigma_psi / dd.wavelength
            if dd.key in self.track.continued and prev is not None and prev in self.window.values:
                inp.links.append((prev, key, sigma_n))
                initial[key] = self.window.values[prev]
            else:
                initial[key] = current[dd.key]
        self.last_amb = {k: key for k, key in
                         ((dd.key, ambiguity_key(index, dd.constellation, dd.slave_prn))
                          for dd in dds if dd.has_phase)}
        # undifferenced Doppler with one shared clock drift (m/s)
        drifts = []
        for key in sorted(matched):
            o = matched[key][0]
            if not np.isfinite(o.doppler):
                continue
            el = satellite_elevation(o.sat_pos, ant, self.origin)
            inp.doppler.append(o)
            inp.doppler_sigma.append(measurement_sigma(max(el, 1e-3), o.snr, self.noise))
            d = o.sat_pos - ant_ecef
            e = d / np.linalg.norm(d)
            v_ecef = self.origin.R_enu_to_ecef @ vel
            drifts.append(o.wavelength * o.doppler - e @ (o.sat_vel - v_ecef)
                          + SPEED_OF_LIGHT * o.sat_clock_drift)
        if drifts:
            initial[inp.clock_key] = float(np.median(drifts))
        rec.n_dd = len(dds)
        return inp, initial, rec

    def _resolve(self, graph, values, inputs):
        """Float solution, AR and the absolute constraints of new epochs."""
        absolutes = []
        need = [e for e in inputs if e.has_gnss]
        if not need:
            for e in inputs:
                self._finish_record(e, values, None)
            return absolutes
        Sigma, ordering = covariance(graph, values)
        sweep = None
        if self.cfg.adop_weights:
            sweep = {w: self.window.weighted_information(w, ordering) for w in self.cfg.adop_weights}
        for e in inputs:
            if not e.has_gnss:
                self._finish_record(e, values, None)
                continue
            A = epoch_selector(values, ordering, e)
            m = len(e.ambiguity_keys)
            Q_nn, Q_pp, Q_np = blocks_from_covariance(Sigma, A, m)
            p = epoch_position(values, e)
            rec = self.records[e.index]
            fixed = None
            if m:
                a = np.array([float(values[k][0]) for k in e.ambiguity_keys])
                try:
                    rec.adop = ambiguity.adop(Q_nn)
                    fixed = ambiguity.resolve(a, p, Q_nn, Q_np.T, self.cfg.ratio_threshold)
                    rec.ratio = fixed.ratio
                except (NotPositiveDefinite, np.linalg.LinAlgError):
                    fixed = None
                if sweep is not None:
                    for w in self.cfg.adop_weights:
                        try:
                            q = q_nn_from_information(sweep[w], ordering, values, e)
                            self.result.adop_sweep.append((e.time, w, ambiguity.adop(q)))
                        except (SingularInformation, NotPositiveDefinite):
                            self.result.adop_sweep.append((e.time, w, float("nan")))
            if fixed is not None and fixed.accepted:
                rec.status = "fixed"
                rec.position = fixed.position
                self.result.fixes.append((e.time, fixed.position))
                info = pose_graph.position_sqrt_info(None, self.cfg.fixed_sigma)
            else:
                rec.status = "float"
                rec.position = p
                try:
                    info = pose_graph.position_sqrt_info(Q_pp)
                except np.linalg.LinAlgError:
                    info = None
            rec.quaternion = rot_to_quat(epoch_rotation(values, e))
            if info is not None:
                absolutes.append((e.k0, e.k1, e.geometry.w0, e.geometry.w1, rec.position, info))
        return absolutes

    def _finish_record(self, e, values, _):
        rec = self.records[e.index]
        rec.status = "float"
        rec.position = epoch_position(values, e)
        rec.quaternion = rot_to_quat(epoch_rotation(values, e))

    # -- main loop -----------------------------------------------------------

    def run(self) -> RunResult:
        ds, cfg = self.ds, self.cfg
        t_imu, gyro, accel = ds.imu
        state = initial_nav_state(ds.meta)
        frames = [i for i, t in enumerate(ds.lidar_times) if t >= state.timestamp - 1e-9]
        if not frames:
            raise DatasetError("no LiDAR frame at or after the initial state", ds.root)
        epochs = list(ds.epochs)
        self.records = {i: EpochRecord(ep.time) for i, ep in enumerate(epochs)}
        ei = 0
        while ei < len(epochs) and epochs[ei].time <= state.timestamp:
            ei += 1

        # first keyframe at the initial state
        f0 = frames[0]
        state = NavState(state.position, state.rotation, state.velocity,
                         keyframe_id=0, timestamp=float(ds.lidar_times[f0]))
        self.window.add_keyframe(KeyframeInput(0, state.timestamp), state)
        self.window.initial_factors = [self._initial_prior(state)]
        pose0 = RigidTransform(state.rotation, state.position)
        self.global_graph.add_keyframe(0, pose0)
        self.pcm.accumulate(0, ds.lidar_points(f0), pose0, self.extrinsic)
        self.result.keyframes.append((0, state.timestamp, state.position.copy(),
                                      rot_to_quat(state.rotation)))
        last = state
        kf_id = 0
        for fi in frames[1:]:
            t = float(ds.lidar_times[fi])
            delta = imu_preint.integrate((t_imu, gyro, accel), last.bias_acc, last.bias_gyro,
                                         self.imu_noise, t_start=last.timestamp, t_end=t)
            pred = imu_preint.predict(last, delta, self.gravity, timestamp=t,
                                      keyframe_id=kf_id + 1)
            moved = np.linalg.norm(pred.position - last.position)
            if moved < cfg.keyframe_distance and t - last.timestamp < cfg.keyframe_interval - 1e-9:
                continue
            kf_id += 1
            new_inputs = []
            while ei < len(epochs) and epochs[ei].time <= t + 1e-9:
                inp, init, rec = self._epoch_input(ei, epochs[ei], last, pred)
                self.records[ei] = rec
                new_inputs.append((inp, init))
                ei += 1
            scan = ds.lidar_points(fi)
            vs = self._vs_factor(kf_id, scan, pred)
            kf = KeyframeInput(kf_id, t, ImuFactor(state_key(kf_id - 1), state_key(kf_id), delta,
                                                   self.gravity), vs)
            self.window.add_keyframe(kf, pred)
            for inp, init in new_inputs:
                self.window.add_epoch(inp, init)
                self.records[inp.index].n_vs = 0 if vs is None else vs.size
            self.window.slide()
            graph, res = self.window.optimize()
            self.result.factor_families.update(graph.factor_counts())
            values = self.window.values
            absolutes = self._resolve(graph, values, [i for i, _ in new_inputs])

            # global pose graph and map
            ids = self.window.keyframe_ids
            poses = {k: RigidTransform(values[state_key(k)].rotation, values[state_key(k)].position)
                     for k in ids}
            relative = [(a, b, poses[a], poses[b]) for a, b in zip(ids[:-1], ids[1:])]
            self.global_graph.add_keyframe(kf_id, poses[kf_id])
            for a, b, pa, pb in relative:
                self.global_graph.set_relative(a, b, pa, pb, self.rel_info)
            corrected = pose_graph.update_global_graph(self.global_graph, None, None, absolutes)
            self.pcm = self.pcm.repose({k: corrected[k] for k in self.pcm.keyframe_ids})
            self.pcm.accumulate(kf_id, scan, corrected[kf_id], self.extrinsic)
            order = sorted(corrected)
            self.pcm.set_window(derive_window_length(
                [corrected[k].translation for k in order], cfg.map_span, cfg.map_max_keyframes))

            last = values[state_key(kf_id)]
            self.result.keyframes.append((kf_id, t, last.position.copy(),
                                          rot_to_quat(last.rotation)))
        self.result.epochs = [self.records[i] for i in range(len(epochs))]
        return self.result


def run_pipeline(config: RunConfig, dataset: Dataset = None) -> RunResult:
    """Run one configured mode over a dataset directory."""
    ds = dataset if dataset is not None else load_dataset(config.dataset, with_truth=False)
    if config.mode == "rtk_only":
        return run_rtk_only(config, ds)
    return FusionRunner(config, ds).run()


STATUS_FIELDS = ["timestamp", "status", "adop", "ratio", "n_dd", "n_excluded", "n_vs"]


def run_metrics(result: RunResult, truth):
    """Metrics of ``result`` against ``truth`` (``(t, p, ...)``), or ``None``."""
    if truth is None or not result.epochs:
        return None
    est = [e.position if e.position is not None else np.full(3, np.nan) for e in result.epochs]
    try:
        return compute_metrics([e.time for e in result.epochs], est, truth[0], truth[1],
                               [e.status for e in result.epochs])
    except NoOverlap:
        return None


def write_run_outputs(result: RunResult, outdir, truth=None, baseline=None):
    """Trajectory, status, keyframe and slip tables plus the report files."""
    try:
        os.makedirs(outdir, exist_ok=True)
        solved = result.solved
        write_trajectory(os.path.join(outdir, "trajectory.csv"), [e.time for e in solved],
                         [e.position for e in solved],
                         [e.quaternion if e.quaternion is not None else [0.0, 0.0, 0.0, 1.0]
                          for e in solved])
        write_rows(os.path.join(outdir, "status.csv"), STATUS_FIELDS,
                   ([e.time, e.status, e.adop, e.ratio, e.n_dd, e.n_excluded, e.n_vs]
                    for e in result.epochs))
        write_rows(os.path.join(outdir, "keyframes.csv"), ["keyframe_id"] + TRAJECTORY_FIELDS,
                   ([k, t, *p, *q] for k, t, p, q in result.keyframes))
        write_rows(os.path.join(outdir, "slips.csv"),
                   ["timestamp", "constellation", "prn", "td_value", "threshold", "method"],
                   ([s.epoch, s.constellation, s.prn, s.td_value, s.threshold, s.method]
                    for s in result.slips))
    except OSError as exc:
        raise IoError(f"cannot write outputs to {outdir}: {exc}") from exc
    report = run_metrics(result, truth)
    emit_reports(outdir, report, result.skyplot, result.adop_sweep, result.fixes, baseline)
    return report
