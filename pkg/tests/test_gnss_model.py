import numpy as np
import pytest

from canyon_rtk.errors import InsufficientSatellites, InvalidElevation
from canyon_rtk.frames import GeodeticOrigin, direction_from_elevation_azimuth, enu_to_ecef
from canyon_rtk.gnss_model import (GPS_L1_WAVELENGTH, SPEED_OF_LIGHT, DdObservation, EpochObs,
                                   NoiseModel, SatObs, dd_carrierphase_residual,
                                   dd_geometric_range, dd_pseudorange_residual, doppler_residual,
                                   form_double_differences, measurement_sigma, predicted_doppler,
                                   range_difference, select_master_satellite, select_masters)

ORIGIN = GeodeticOrigin.from_degrees(22.3, 114.17)
LAM = 0.19029


def sat(prn, pr, cp=10.0, pos=(0, 0, 2.02e7), const="GPS", snr=50.0, vel=(0, 0, 0), doppler=0.0):
    return SatObs(prn, const, 0.0, pr, cp, doppler, snr, LAM, np.array(pos, float),
                  np.array(vel, float))


def sky_sat(el_deg, az_deg, r=2.02e7):
    d = direction_from_elevation_azimuth(np.radians(el_deg), np.radians(az_deg))
    return enu_to_ecef(d * r, ORIGIN)


def make_epoch(rover_pr, base_pr, rover_cp=None, base_cp=None):
    """Four GPS satellites; G05 is highest so it becomes master."""
    els = {5: 80.0, 7: 50.0, 9: 35.0, 12: 60.0}
    pos = {prn: sky_sat(el, 40.0 * prn) for prn, el in els.items()}
    rover_cp = rover_cp or {p: 0.0 for p in els}
    base_cp = base_cp or {p: 0.0 for p in els}
    rov = [sat(p, rover_pr[p], rover_cp[p], pos[p]) for p in els]
    base = [sat(p, base_pr[p], base_cp[p], pos[p]) for p in els]
    return EpochObs(0.0, rov, base, ORIGIN.origin_ecef)


def test_master_is_highest_elevation_lower_prn_on_tie():
    assert select_master_satellite({5: np.radians(80), 12: np.radians(30)}) == 5
    assert select_master_satellite({9: np.radians(60), 7: np.radians(60)}) == 7
    with pytest.raises(InsufficientSatellites):
        select_master_satellite({3: 1.0})


def test_dd_arithmetic():
    rpr = {5: 101.0, 7: 203.0, 9: 300.0, 12: 400.0}
    bpr = {5: 100.0, 7: 200.0, 9: 300.0, 12: 400.0}
    ep = make_epoch(rpr, bpr)
    masters = select_masters(ep, np.zeros(3), ORIGIN)
    assert masters == {"GPS": 5}
    dds = {d.slave_prn: d for d in form_double_differences(ep, masters, ORIGIN).observations}
    assert sorted(dds) == [7, 9, 12]
    assert dds[7].dd_pseudorange == pytest.approx(2.0)
    assert dds[9].dd_pseudorange == pytest.approx(-1.0)
    for d in dds.values():
        assert d.sigma_psi == pytest.approx(d.sigma_rho / 100.0)


def test_identical_receivers_give_zero_dd():
    pr = {5: 2.1e7, 7: 2.2e7, 9: 2.3e7, 12: 2.15e7}
    cp = {5: 1e8, 7: 1.1e8, 9: 1.2e8, 12: 1.05e8}
    ep = make_epoch(pr, pr, cp, cp)
    for d in form_double_differences(ep, {"GPS": 5}, ORIGIN).observations:
        assert d.dd_pseudorange == 0.0 and d.dd_carrier == 0.0


def test_dd_invariant_to_receiver_and_satellite_constants():
    rng = np.random.default_rng(0)
    pr_r = {p: float(v) for p, v in zip((5, 7, 9, 12), rng.uniform(2e7, 2.5e7, 4))}
    pr_b = {p: float(v) for p, v in zip((5, 7, 9, 12), rng.uniform(2e7, 2.5e7, 4))}
    ref = form_double_differences(make_epoch(pr_r, pr_b), {"GPS": 5}, ORIGIN).observations
    for _ in range(10):
        clock_r, clock_b = rng.normal(scale=1e4, size=2)
        per_sat = {p: rng.normal(scale=50.0) for p in pr_r}
        r2 = {p: v + clock_r + per_sat[p] for p, v in pr_r.items()}
        b2 = {p: v + clock_b + per_sat[p] for p, v in pr_b.items()}
        out = form_double_differences(make_epoch(r2, b2), {"GPS": 5}, ORIGIN).observations
        for a, b in zip(ref, out):
            assert b.dd_pseudorange == pytest.approx(a.dd_pseudorange, abs=1e-6)


def test_unmatched_satellites_dropped_and_counted():
    ep = make_epoch({5: 1.0, 7: 1.0, 9: 1.0, 12: 1.0}, {5: 1.0, 7: 1.0, 9: 1.0, 12: 1.0})
    ep.base_obs = [o for o in ep.base_obs if o.prn != 9]
    out = form_double_differences(ep, {"GPS": 5}, ORIGIN)
    assert out.dropped == 1
    assert [d.slave_prn for d in out.observations] == [7, 12]


def test_dd_is_intra_constellation():
    ep = make_epoch({5: 1.0, 7: 1.0, 9: 1.0, 12: 1.0}, {5: 1.0, 7: 1.0, 9: 1.0, 12: 1.0})
    for k, el in ((1, 70.0), (3, 40.0)):
        p = sky_sat(el, 100.0 + k)
        ep.rover_obs.append(sat(k, 1.0, pos=p, const="BeiDou"))
        ep.base_obs.append(sat(k, 1.0, pos=p, const="BeiDou"))
    masters = select_masters(ep, np.zeros(3), ORIGIN)
    assert masters == {"BeiDou": 1, "GPS": 5}
    for d in form_double_differences(ep, masters, ORIGIN).observations:
        assert d.master_prn == masters[d.constellation]


def _dd(rho=0.0, psi=0.0, slave=(0, 0, 2.02e7), master=(2.02e7, 0, 0)):
    return DdObservation("GPS", 2, 1, rho, psi, LAM, 1.0, 0.01, np.array(slave, float),
                         np.array(master, float))


def test_pseudorange_residual_cases():
    p_e = np.array([0.0, 0.0, 0.0])
    p_r = np.array([3.0, 4.0, 5.0])
    geo = dd_geometric_range(p_r, p_e, np.array([0, 0, 2.02e7]), np.array([2.02e7, 0, 0]))
    assert dd_pseudorange_residual(_dd(rho=geo + 5.0), p_r, p_e) == pytest.approx(5.0, abs=1e-9)
    # moving 1 m toward the slave (master orthogonal) shortens the slave range by ~1 m
    res = dd_pseudorange_residual(_dd(rho=geo), p_r + np.array([0, 0, 1.0]), p_e)
    assert res == pytest.approx(1.0, abs=1e-6)


def test_carrier_residual_affine_in_ambiguity():
    p_e, p_r = np.zeros(3), np.array([10.0, -2.0, 1.0])
    dd = _dd(psi=123.4)
    r0 = dd_carrierphase_residual(dd, p_r, p_e, 0.0)
    for n in (-3, 1, 7.5):
        assert dd_carrierphase_residual(dd, p_r, p_e, n) == pytest.approx(r0 - LAM * n, abs=1e-9)
    assert dd_carrierphase_residual(_dd(), p_e, p_e, 0.0) == 0.0


def test_range_difference_matches_direct_difference():
    rng = np.random.default_rng(1)
    for _ in range(20):
        s = rng.normal(size=3) * 2e7
        a, b = rng.normal(size=(2, 3)) * 1e3
        direct = np.linalg.norm(a - s) - np.linalg.norm(b - s)
        assert range_difference(a, b, s) == pytest.approx(direct, abs=1e-6)


def test_doppler_prediction_values():
    obs = sat(1, 2e7, pos=(0, 0, 2.02e7), vel=(0, 0, 100.0))
    assert predicted_doppler(obs, np.zeros(3), np.zeros(3), 0.0) == pytest.approx(525.5, abs=0.1)
    static = sat(1, 2e7, pos=(0, 0, 2.02e7))
    assert doppler_residual(static, np.zeros(3), np.zeros(3), 0.0) == 0.0
    extra = predicted_doppler(static, np.zeros(3), np.zeros(3), 1e-9)
    assert extra == pytest.approx(SPEED_OF_LIGHT * 1e-9 / LAM, rel=1e-12)
    assert extra == pytest.approx(1.575, abs=1e-3)


@pytest.mark.parametrize("el, snr, factor", [(90, 50, 1.0), (30, 50, 2.0), (90, 30, 10.0)])
def test_measurement_sigma_cases(el, snr, factor):
    m = NoiseModel(sigma_base=0.4)
    assert measurement_sigma(np.radians(el), snr, m) == pytest.approx(0.4 * factor)


def test_measurement_sigma_clip_and_monotone():
    m = NoiseModel(sigma_base=0.3)
    assert measurement_sigma(np.radians(90), 70, m) == pytest.approx(0.3)
    assert measurement_sigma(np.radians(1), 0, m) == pytest.approx(30.0)
    els = np.radians(np.linspace(1, 90, 40))
    s = [measurement_sigma(e, 45, m) for e in els]
    assert all(a >= b for a, b in zip(s, s[1:]))
    s = [measurement_sigma(0.5, snr, m) for snr in range(20, 60)]
    assert all(a >= b for a, b in zip(s, s[1:]))
    with pytest.raises(InvalidElevation):
        measurement_sigma(0.0, 40, m)


def test_satobs_validation():
    with pytest.raises(ValueError):
        sat(1, -5.0)
    assert not SatObs(1, "GPS", 0, 1.0, np.nan, 0, 40, GPS_L1_WAVELENGTH, np.ones(3),
                      np.zeros(3)).has_phase
