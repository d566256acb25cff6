"""Shared synthetic scenes and oracles for the tests."""
import numpy as np

from canyon_rtk.frames import direction_from_elevation_azimuth
from canyon_rtk.pcm_nlos import NlosSearchParams, PointCloudMap, classify_visibility
from canyon_rtk.frames import RigidTransform
from canyon_rtk.sim.world import World

# a short street: two building rows and a low kiosk
STREET_BOXES = [
    [12.0, -40.0, 0.0, 30.0, -5.0, 35.0],
    [12.0, 3.0, 0.0, 28.0, 40.0, 50.0],
    [-30.0, -40.0, 0.0, -11.0, 10.0, 45.0],
    [-28.0, 16.0, 0.0, -12.0, 40.0, 30.0],
    [6.0, 12.0, 0.0, 7.5, 15.0, 3.0],
]


def box_map(boxes=STREET_BOXES, spacing=0.2):
    world = World(boxes, ground=False)
    pcm = PointCloudMap(1)
    pcm.accumulate(0, world.sample_points(spacing), RigidTransform.identity())
    return pcm, world


def random_rays(n, rng, min_el_deg=10.0):
    origins = np.column_stack([rng.uniform(-6, 6, n), rng.uniform(-30, 30, n),
                               rng.uniform(1.0, 2.5, n)])
    el = np.radians(rng.uniform(min_el_deg, 90.0, n))
    az = rng.uniform(0, 2 * np.pi, n)
    dirs = np.array([direction_from_elevation_azimuth(e, a) for e, a in zip(el, az)])
    return origins, dirs


def oracle_agreement(pcm, world, origins, dirs, params=NlosSearchParams()):
    agree = 0
    for o, d in zip(origins, dirs):
        lab = classify_visibility(pcm, o, d, params)
        truth_nlos = not world.is_visible(o, d, params.max_search_range)
        agree += lab.is_nlos == truth_nlos
    return agree / len(origins)


# --------------------------------------------------------------------------
# dataset oracles

def truth_antenna_enu(ds, t):
    """Antenna position from the truth trajectory at the sample nearest ``t``."""
    from canyon_rtk.frames import quat_to_rot
    tt, tp, tq = ds.truth[0], ds.truth[1], ds.truth[2]
    i = int(np.argmin(np.abs(tt - t)))
    assert abs(tt[i] - t) < 1e-6, "truth is not sampled at the epoch time"
    lever = np.asarray(ds.meta.get("lever_arm", [0, 0, 0]), float)
    return tp[i] + quat_to_rot(tq[i]) @ lever


def truth_events(ds):
    """``{(time, constellation, prn): (rover N, base N, visibility)}`` from the event log."""
    header, rows = ds.events
    col = {h: i for i, h in enumerate(header)}
    out = {}
    for _, r in rows:
        key = (round(float(r[col["epoch_time"]]), 6), r[col["constellation"]],
               int(r[col["prn"]]))
        out[key] = (int(r[col["rover_ambiguity"]]), int(r[col["base_ambiguity"]]),
                    r[col["visibility"]])
    return out


def dd_truth_ambiguity(events, t, const, slave, master):
    rs, bs, _ = events[(round(t, 6), const, slave)]
    rm, bm, _ = events[(round(t, 6), const, master)]
    return (rs - bs) - (rm - bm)


def slip_detection_stats(ds, rng, max_error=0.02, threshold=0.5):
    """Recall and false-positive rate of TD slip detection on a dataset.

    The predicted position is the true antenna position plus a random error
    of at most ``max_error`` metres. A DD pair truly slipped when its true
    integer changed since the previous epoch.
    """
    from canyon_rtk.cycle_slip import (AmbiguityTrack, detect_cycle_slips,
                                       estimate_dd_ambiguity_float)
    from canyon_rtk.frames import enu_to_ecef
    from canyon_rtk.gnss_model import form_double_differences, select_masters
    events = truth_events(ds)
    track = AmbiguityTrack()
    prev_truth = {}
    tp = fp = fn = tn = 0
    for ep in ds.epochs:
        p = truth_antenna_enu(ds, ep.time)
        masters = select_masters(ep, p, ds.origin)
        dds = form_double_differences(ep, masters, ds.origin, p).observations
        err = rng.normal(size=3)
        err *= rng.uniform(0, max_error) / np.linalg.norm(err)
        p_pred = enu_to_ecef(p + err, ds.origin)
        current, truth = {}, {}
        for dd in dds:
            current[dd.key] = estimate_dd_ambiguity_float(dd, p_pred, ep.base_pos)
            truth[dd.key] = (dd.master_prn, dd_truth_ambiguity(events, ep.time, dd.constellation,
                                                              dd.slave_prn, dd.master_prn))
        reports, track = detect_cycle_slips(track, current, ep.time, threshold, masters)
        flagged = {(r.constellation, r.prn) for r in reports}
        for key, (m, n) in truth.items():
            if key not in prev_truth or prev_truth[key][0] != m:
                continue  # new track: nothing to compare against
            slipped = n != prev_truth[key][1]
            if slipped:
                tp += key in flagged
                fn += key not in flagged
            else:
                fp += key in flagged
                tn += key not in flagged
        prev_truth = truth
    recall = tp / max(tp + fn, 1)
    fp_rate = fp / max(fp + tn, 1)
    return recall, fp_rate, tp + fn


def imu_signals(t):
    """Smooth body rates and specific force (gravity included) for preintegration checks."""
    t = np.asarray(t, dtype=float)
    w = np.c_[0.3 * np.sin(1.1 * t), 0.2 * np.cos(0.7 * t), 0.5 * np.sin(0.5 * t) + 0.1]
    a = np.c_[1.0 * np.cos(0.9 * t), 0.5 * np.sin(1.3 * t), 9.81 + 0.2 * np.sin(2 * t)]
    return w, a


def fine_step_preintegration(t, w, a, bias_acc=np.zeros(3), bias_gyro=np.zeros(3), sub=200):
    """Naive re-integration with ``sub`` substeps per sample interval.

    Samples are linearly interpolated inside each interval, the same signal
    model the midpoint integrator assumes.
    """
    from canyon_rtk.frames import so3_exp
    R, v, p = np.eye(3), np.zeros(3), np.zeros(3)
    w = np.asarray(w) - bias_gyro
    a = np.asarray(a) - bias_acc
    for i in range(len(t) - 1):
        h = (t[i + 1] - t[i]) / sub
        for k in range(sub):
            s0, s1, sm = k / sub, (k + 1) / sub, (k + 0.5) / sub
            R1 = R @ so3_exp((w[i] + (w[i + 1] - w[i]) * sm) * h)
            f0 = R @ (a[i] + (a[i + 1] - a[i]) * s0)
            f1 = R1 @ (a[i] + (a[i + 1] - a[i]) * s1)
            p = p + v * h + h * h * (f0 / 3 + f1 / 6)
            v = v + 0.5 * h * (f0 + f1)
            R = R1
    return p, v, R


def tiny_window(rng, n_sats=4, n_vs=200, lever_arm=(0.0, 0.0, 0.4)):
    """Two keyframes, one GNSS epoch between them and random measurements.

    Returns ``(keyframes, epochs, values, base_ecef)`` ready for ``build_graph``.
    """
    from canyon_rtk.fgo.factors import EpochGeometry, ImuFactor, VsFactor
    from canyon_rtk.fgo.states import NavState
    from canyon_rtk.fgo.window import (EpochInput, KeyframeInput, ambiguity_key, clock_key,
                                       state_key)
    from canyon_rtk.frames import GeodeticOrigin, RigidTransform, enu_to_ecef, so3_exp
    from canyon_rtk.gnss_model import DdObservation, SatObs
    from canyon_rtk.imu_preint import integrate

    origin = GeodeticOrigin.from_degrees(22.3, 114.2, 10.0)
    base = enu_to_ecef(np.array([30.0, -20.0, 2.0]), origin)
    R = origin.R_enu_to_ecef

    def sat(el, az):
        d = np.array([np.cos(el) * np.sin(az), np.cos(el) * np.cos(az), np.sin(el)])
        return origin.origin_ecef + R @ d * 2.2e7

    x0 = NavState(rng.normal(scale=5, size=3), so3_exp(rng.normal(size=3)), rng.normal(size=3),
                  rng.normal(scale=0.05, size=3), rng.normal(scale=0.01, size=3), 0, 0.0)
    t = np.linspace(0, 1, 21)
    delta = integrate((t, rng.normal(scale=0.2, size=(21, 3)),
                       rng.normal(size=(21, 3)) + [0, 0, 9.81]))
    x1 = NavState(x0.position + rng.normal(size=3), x0.rotation @ so3_exp(rng.normal(scale=0.1, size=3)),
                  rng.normal(size=3), rng.normal(scale=0.05, size=3), rng.normal(scale=0.01, size=3),
                  1, 1.0)
    ext = RigidTransform(so3_exp([0.0, 0.0, 0.3]), [0.1, 0.0, 0.2])
    vs = VsFactor(state_key(1), rng.normal(scale=5, size=(n_vs, 3)),
                  rng.normal(scale=5, size=(n_vs, 3, 3)), 0.1, ext)
    kfs = [KeyframeInput(0, 0.0), KeyframeInput(1, 1.0, ImuFactor(state_key(0), state_key(1), delta), vs)]

    w1 = float(rng.uniform(0.1, 0.9))
    geom = EpochGeometry(origin, 1 - w1, w1, lever_arm)
    master = sat(np.radians(80), 0.3)
    ep = EpochInput(index=0, time=w1, k0=0, k1=1, geometry=geom)
    values = {state_key(0): x0, state_key(1): x1, clock_key(0): np.array([rng.normal()])}
    prns = list(range(2, 2 + n_sats))
    for k, prn in enumerate(prns):
        s = sat(np.radians(rng.uniform(20, 70)), rng.uniform(0, 2 * np.pi))
        dd = DdObservation("GPS", prn, 1, rng.normal(scale=5), rng.normal(scale=5), 0.19, 0.3,
                           0.003, s, master)
        ep.pseudorange.append(dd)
        key = ambiguity_key(0, "GPS", prn)
        ep.carrier.append((dd, key))
        values[key] = np.array([rng.normal(scale=3)])
    for prn, pos in [(1, master)] + [(p, dd.slave_pos) for p, (dd, _) in zip(prns, ep.carrier)]:
        ep.doppler.append(SatObs(prn, "GPS", w1, 2.2e7, np.nan, rng.normal(scale=100), 45.0, 0.19,
                                 pos, rng.normal(scale=3000, size=3), 0.0, 1e-10))
        ep.doppler_sigma.append(0.1)
    return kfs, [ep], values, base


def brute_force_ils(a, Q, n_candidates=2):
    """Exhaustive integer least squares over a box certain to hold the best candidates.

    The quadratic form of any ``n_candidates`` distinct integer vectors bounds
    the ``n_candidates``-th best value chi2; every vector within that bound
    satisfies ``|a_i - z_i| <= sqrt(chi2 * Q_ii)``.
    """
    import itertools
    a = np.asarray(a, dtype=float)
    m = a.size
    Qi = np.linalg.inv(Q)
    base = np.rint(a)
    seeds = [base] + [base + s * np.eye(m)[i] for i in range(m) for s in (-1, 1)]
    q = sorted(float((a - z) @ Qi @ (a - z)) for z in seeds)
    chi2 = q[n_candidates - 1] * (1 + 1e-9)
    half = np.sqrt(chi2 * np.diag(Q))
    ranges = [np.arange(np.ceil(ai - h), np.floor(ai + h) + 1) for ai, h in zip(a, half)]
    Z = np.array(list(itertools.product(*ranges)), dtype=float).reshape(-1, m)
    d = a - Z
    vals = np.einsum("ij,jk,ik->i", d, Qi, d)
    order = np.argsort(vals, kind="stable")[:n_candidates]
    return Z[order].astype(np.int64), vals[order]


def random_pd(rng, m, low=0.005, high=1.0):
    V, _ = np.linalg.qr(rng.normal(size=(m, m)))
    return (V * np.exp(rng.uniform(np.log(low), np.log(high), m))) @ V.T


def dd_float_problem(rng, n_dd=6, sigma_rho=0.3, sigma_psi=0.005, wavelength=0.19):
    """Single-epoch linearised DD model with known integers.

    Returns ``(a_float, p_float, Q_nn, Q_pn, a_true)`` with the position error
    relative to the truth (truth is the origin).
    """
    el = rng.uniform(np.radians(20), np.radians(85), n_dd + 1)
    az = rng.uniform(0, 2 * np.pi, n_dd + 1)
    u = np.c_[np.cos(el) * np.sin(az), np.cos(el) * np.cos(az), np.sin(el)]
    G = -(u[1:] - u[0])
    a_true = rng.integers(-20, 20, n_dd).astype(float)
    # DD noise correlation through the common master
    C = np.eye(n_dd) + np.ones((n_dd, n_dd))
    A = np.block([[G, np.zeros((n_dd, n_dd))], [G, wavelength * np.eye(n_dd)]])
    W = np.linalg.inv(np.block([[sigma_rho ** 2 * C, np.zeros((n_dd, n_dd))],
                                [np.zeros((n_dd, n_dd)), sigma_psi ** 2 * C]]))
    y_true = A @ np.r_[np.zeros(3), a_true]
    Lc = np.linalg.cholesky(np.linalg.inv(W))
    y = y_true + Lc @ rng.normal(size=2 * n_dd)
    N = A.T @ W @ A
    Qx = np.linalg.inv(N)
    Qx = 0.5 * (Qx + Qx.T)
    x = Qx @ A.T @ W @ y
    return x[3:], x[:3], Qx[3:, 3:], Qx[:3, 3:], a_true
