"""Epoch-wise double-difference RTK without inertial or LiDAR information.

Each epoch is solved on its own: a code-only fix seeds the float
ambiguities, a joint weighted least squares over position and ambiguities
gives the float solution and its covariance, and the integer search with
ratio validation gives the fixed solution.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ambiguity
from .errors import InsufficientSatellites, NotPositiveDefinite
from .frames import GeodeticOrigin, enu_to_ecef
from .gnss_model import (EpochObs, NoiseModel, dd_geometric_range, form_double_differences,
                         satellite_elevation, select_masters)


@dataclass
class EpochSolution:
    time: float
    status: str                  # "fixed", "float" or "none"
    position: np.ndarray = None  # antenna ENU
    ratio: float = float("nan")
    adop: float = float("nan")
    n_dd: int = 0
    Q_pp: np.ndarray = None


def mask_elevation(epoch: EpochObs, receiver_enu, origin, mask):
    kept = [o for o in epoch.rover_obs
            if satellite_elevation(o.sat_pos, receiver_enu, origin) >= mask]
    return EpochObs(epoch.time, kept, list(epoch.base_obs), epoch.base_pos)


def _design(dds, p_ecef, base_ecef, R_enu):
    """DD ranges and their gradient with respect to the ENU antenna position."""
    geo = np.array([dd_geometric_range(p_ecef, base_ecef, d.slave_pos, d.master_pos) for d in dds])
    G = np.array([(p_ecef - d.slave_pos) / np.linalg.norm(p_ecef - d.slave_pos)
                  - (p_ecef - d.master_pos) / np.linalg.norm(p_ecef - d.master_pos) for d in dds])
    return geo, G @ R_enu


def solve_epoch(epoch: EpochObs, origin: GeodeticOrigin, guess_enu, noise=NoiseModel(),
                elevation_mask=np.radians(10.0), ratio_threshold=3.0, iterations=8):
    """Float and fixed solution of one epoch; status ``none`` when unsolvable."""
    guess = np.asarray(guess_enu, dtype=float)
    ep = mask_elevation(epoch, guess, origin, elevation_mask)
    try:
        masters = select_masters(ep, guess, origin)
    except InsufficientSatellites:
        masters = {}
    dds = form_double_differences(ep, masters, origin, guess, noise).observations
    if len(dds) < 4:
        return EpochSolution(epoch.time, "none", n_dd=len(dds))
    R = origin.R_enu_to_ecef
    base = np.asarray(epoch.base_pos, dtype=float)
    rho = np.array([d.dd_pseudorange for d in dds])
    w_rho = np.array([1.0 / d.sigma_rho for d in dds])

    p = guess.copy()
    for _ in range(iterations):
        geo, G = _design(dds, enu_to_ecef(p, origin), base, R)
        A = G * w_rho[:, None]
        dp = np.linalg.lstsq(A, (rho - geo) * w_rho, rcond=None)[0]
        p = p + dp
        if np.linalg.norm(dp) < 1e-6:
            break

    ph = [i for i, d in enumerate(dds) if d.has_phase]
    m = len(ph)
    geo, _ = _design(dds, enu_to_ecef(p, origin), base, R)
    lam = np.array([dds[i].wavelength for i in ph])
    psi = np.array([dds[i].dd_carrier for i in ph])
    n = psi - geo[ph] / lam
    w_psi = np.array([1.0 / dds[i].sigma_psi for i in ph])
    for _ in range(iterations):
        geo, G = _design(dds, enu_to_ecef(p, origin), base, R)
        J = np.zeros((len(dds) + m, 3 + m))
        r = np.zeros(len(dds) + m)
        J[:len(dds), :3] = G * w_rho[:, None]
        r[:len(dds)] = (rho - geo) * w_rho
        for row, i in enumerate(ph):
            J[len(dds) + row, :3] = G[i] * w_psi[row]
            J[len(dds) + row, 3 + row] = lam[row] * w_psi[row]
            r[len(dds) + row] = (lam[row] * psi[row] - geo[i] - lam[row] * n[row]) * w_psi[row]
        dx = np.linalg.lstsq(J, r, rcond=None)[0]
        p = p + dx[:3]
        n = n + dx[3:]
        if np.linalg.norm(dx) < 1e-8:
            break
    H = J.T @ J
    try:
        Q = np.linalg.inv(H)
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        return EpochSolution(epoch.time, "none", n_dd=len(dds))
    Q = 0.5 * (Q + Q.T)
    Q_pp = Q[:3, :3]
    sol = EpochSolution(epoch.time, "float", position=p, n_dd=len(dds), Q_pp=Q_pp)
    if m == 0:
        return sol
    Q_nn, Q_pn = Q[3:, 3:], Q[:3, 3:]
    try:
        sol.adop = ambiguity.adop(Q_nn)
        fixed = ambiguity.resolve(n, p, Q_nn, Q_pn, ratio_threshold)
    except (NotPositiveDefinite, np.linalg.LinAlgError):
        return sol
    sol.ratio = fixed.ratio
    if fixed.accepted:
        sol.status = "fixed"
        sol.position = fixed.position
    return sol
