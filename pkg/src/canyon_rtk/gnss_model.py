"""GNSS observation records, stochastic model and double differencing."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientSatellites, InvalidElevation
from .frames import GeodeticOrigin, ecef_to_enu, elevation_azimuth

SPEED_OF_LIGHT = 299792458.0
GPS_L1_WAVELENGTH = SPEED_OF_LIGHT / 1575.42e6
BDS_B1I_WAVELENGTH = SPEED_OF_LIGHT / 1561.098e6

CONSTELLATION_PREFIX = {"GPS": "G", "BeiDou": "C"}
PREFIX_CONSTELLATION = {v: k for k, v in CONSTELLATION_PREFIX.items()}


def sat_label(constellation, prn):
    return f"{CONSTELLATION_PREFIX[constellation]}{int(prn):02d}"


def parse_sat_label(label):
    return PREFIX_CONSTELLATION[label[0]], int(label[1:])


@dataclass
class SatObs:
    """One satellite's measurements at one receiver and epoch.

    ``carrier_phase`` is NaN when the receiver has no phase lock.
    """

    prn: int
    constellation: str
    time: float
    pseudorange: float
    carrier_phase: float
    doppler: float
    snr: float
    wavelength: float
    sat_pos: np.ndarray
    sat_vel: np.ndarray
    sat_clock_bias: float = 0.0
    sat_clock_drift: float = 0.0

    def __post_init__(self):
        self.sat_pos = np.asarray(self.sat_pos, dtype=float).reshape(3)
        self.sat_vel = np.asarray(self.sat_vel, dtype=float).reshape(3)
        if not self.pseudorange > 0:
            raise ValueError(f"pseudorange must be positive, got {self.pseudorange}")
        if not self.wavelength > 0:
            raise ValueError("wavelength must be positive")
        if self.snr < 0:
            raise ValueError("snr must be non-negative")
        if not np.all(np.isfinite(self.sat_pos)):
            raise ValueError("satellite position must be finite")

    @property
    def key(self):
        return (self.constellation, self.prn)

    @property
    def label(self):
        return sat_label(self.constellation, self.prn)

    @property
    def has_phase(self):
        return bool(np.isfinite(self.carrier_phase))


@dataclass
class EpochObs:
    time: float
    rover_obs: list
    base_obs: list
    base_pos: np.ndarray

    def __post_init__(self):
        self.base_pos = np.asarray(self.base_pos, dtype=float).reshape(3)

    def rover_by_key(self):
        return {o.key: o for o in self.rover_obs}

    def base_by_key(self):
        return {o.key: o for o in self.base_obs}

    def matched(self):
        """``{(constellation, prn): (rover, base)}`` for satellites seen by both."""
        base = self.base_by_key()
        return {o.key: (o, base[o.key]) for o in self.rover_obs if o.key in base}

    def constellations(self):
        return sorted({o.constellation for o in self.rover_obs})


@dataclass
class DdObservation:
    constellation: str
    slave_prn: int
    master_prn: int
    dd_pseudorange: float
    dd_carrier: float
    wavelength: float
    sigma_rho: float
    sigma_psi: float
    slave_pos: np.ndarray
    master_pos: np.ndarray

    def __post_init__(self):
        if self.slave_prn == self.master_prn:
            raise ValueError("slave and master must differ")

    @property
    def key(self):
        return (self.constellation, self.slave_prn)

    @property
    def has_phase(self):
        return bool(np.isfinite(self.dd_carrier))


@dataclass(frozen=True)
class NoiseModel:
    """Elevation/SNR pseudorange noise model.

    ``sigma = sigma_base / sin(el) * 10**((snr_reference - snr) / 20)``,
    clipped to ``[sigma_base, max_ratio * sigma_base]``.
    """

    sigma_base: float = 0.3
    snr_reference: float = 50.0
    max_ratio: float = 100.0
    carrier_ratio: float = 100.0

    def __post_init__(self):
        if not self.sigma_base > 0:
            raise ValueError("sigma_base must be positive")


def measurement_sigma(elevation_rad, snr_dbhz, model: NoiseModel = NoiseModel()):
    """Pseudorange standard deviation (m) for one undifferenced observation."""
    if elevation_rad <= 0:
        raise InvalidElevation(f"elevation must be positive, got {elevation_rad}")
    s = (model.sigma_base / np.sin(min(elevation_rad, np.pi / 2))
         * 10.0 ** ((model.snr_reference - snr_dbhz) / 20.0))
    return float(np.clip(s, model.sigma_base, model.max_ratio * model.sigma_base))


def carrier_sigma(sigma_rho, model: NoiseModel = NoiseModel()):
    return sigma_rho / model.carrier_ratio


def satellite_elevation(sat_pos_ecef, receiver_enu, origin: GeodeticOrigin):
    return elevation_azimuth(receiver_enu, ecef_to_enu(sat_pos_ecef, origin))[0]


def select_master_satellite(elevations):
    """Highest-elevation prn; ties go to the lower prn.

    ``elevations`` maps prn to elevation (radians) for one constellation.
    """
    if len(elevations) < 2:
        raise InsufficientSatellites(f"{len(elevations)} matched satellite(s), need 2")
    return min(elevations, key=lambda prn: (-elevations[prn], prn))


def select_masters(epoch: EpochObs, receiver_enu, origin: GeodeticOrigin):
    """Master prn per constellation; constellations with < 2 matches are skipped."""
    per_const = {}
    for (const, prn), (rov, _) in epoch.matched().items():
        per_const.setdefault(const, {})[prn] = satellite_elevation(rov.sat_pos, receiver_enu, origin)
    masters = {}
    for const, els in sorted(per_const.items()):
        if len(els) >= 2:
            masters[const] = select_master_satellite(els)
    return masters


@dataclass
class DdFormation:
    observations: list = field(default_factory=list)
    dropped: int = 0


def form_double_differences(epoch: EpochObs, masters, origin: GeodeticOrigin,
                            receiver_enu=None, noise: NoiseModel = NoiseModel()):
    """Between-receiver, between-satellite differences against each master.

    Satellites not matched at rover and base are dropped and counted.
    The DD sigma combines the four undifferenced sigmas.
    """
    matched = epoch.matched()
    base_enu = ecef_to_enu(epoch.base_pos, origin)
    if receiver_enu is None:
        receiver_enu = base_enu
    out = DdFormation()
    out.dropped = len(epoch.rover_obs) - len(matched)

    def sig(obs, at_enu):
        el = satellite_elevation(obs.sat_pos, at_enu, origin)
        return measurement_sigma(max(el, 1e-3), obs.snr, noise)

    for const, w in sorted(masters.items()):
        if (const, w) not in matched:
            continue
        rw, ew = matched[(const, w)]
        sd_rho_w = rw.pseudorange - ew.pseudorange
        sd_psi_w = rw.carrier_phase - ew.carrier_phase
        var_w = sig(rw, receiver_enu) ** 2 + sig(ew, base_enu) ** 2
        for (c, prn), (rs, es) in sorted(matched.items()):
            if c != const or prn == w:
                continue
            sigma = float(np.sqrt(var_w + sig(rs, receiver_enu) ** 2 + sig(es, base_enu) ** 2))
            out.observations.append(DdObservation(
                constellation=const, slave_prn=prn, master_prn=w,
                dd_pseudorange=(rs.pseudorange - es.pseudorange) - sd_rho_w,
                dd_carrier=(rs.carrier_phase - es.carrier_phase) - sd_psi_w,
                wavelength=rs.wavelength, sigma_rho=sigma,
                sigma_psi=carrier_sigma(sigma, noise),
                slave_pos=rs.sat_pos, master_pos=rw.sat_pos,
            ))
    return out


def dd_geometric_range(p_r, p_e, slave_pos, master_pos):
    """``(r_r^s - r_e^s) - (r_r^w - r_e^w)``; broadcasts over leading axes."""
    p_r = np.asarray(p_r, dtype=float)
    p_e = np.asarray(p_e, dtype=float)
    return (range_difference(p_r, p_e, slave_pos)
            - range_difference(p_r, p_e, master_pos))


def range_difference(p_a, p_b, sat_pos):
    """``|p_a - sat| - |p_b - sat|`` without cancellation between two ~2e7 m ranges."""
    a = p_a - sat_pos
    b = p_b - sat_pos
    num = np.sum((p_a - p_b) * (a + b), axis=-1)
    return num / (np.linalg.norm(a, axis=-1) + np.linalg.norm(b, axis=-1))


def dd_pseudorange_residual(dd: DdObservation, p_r_ecef, p_e_ecef):
    return float(dd.dd_pseudorange - dd_geometric_range(p_r_ecef, p_e_ecef, dd.slave_pos, dd.master_pos))


def dd_carrierphase_residual(dd: DdObservation, p_r_ecef, p_e_ecef, n_dd):
    """Carrier DD residual in metres; the ambiguity enters scaled by the wavelength."""
    geo = dd_geometric_range(p_r_ecef, p_e_ecef, dd.slave_pos, dd.master_pos)
    return float(dd.wavelength * dd.dd_carrier - geo - dd.wavelength * n_dd)


def predicted_doppler(obs: SatObs, p_r_ecef, v_r_ecef, receiver_clock_drift):
    """Doppler (Hz) predicted from receiver state; drift in s/s."""
    d = obs.sat_pos - np.asarray(p_r_ecef, dtype=float)
    e = d / np.linalg.norm(d)
    rate = e @ (obs.sat_vel - np.asarray(v_r_ecef, dtype=float))
    return float((rate + SPEED_OF_LIGHT * (receiver_clock_drift - obs.sat_clock_drift)) / obs.wavelength)


def doppler_residual(obs: SatObs, p_r_ecef, v_r_ecef, receiver_clock_drift):
    return float(obs.doppler - predicted_doppler(obs, p_r_ecef, v_r_ecef, receiver_clock_drift))
