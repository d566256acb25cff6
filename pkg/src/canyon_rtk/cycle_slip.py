"""Triple-difference cycle-slip detection and the constant-ambiguity residual.

The float DD ambiguity of each satellite is re-estimated every epoch from a
position predicted by LiDAR/IMU propagation. Its change between epochs is
the triple difference; a change beyond the threshold flags a slip and resets
the satellite's track so no constant-ambiguity factor links across it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gnss_model import DdObservation, dd_geometric_range

DEFAULT_THRESHOLD = 0.5


def estimate_dd_ambiguity_float(dd: DdObservation, predicted_p_r_ecef, p_e_ecef):
    """``psi_DD - geo_DD / lambda`` in cycles."""
    geo = dd_geometric_range(predicted_p_r_ecef, p_e_ecef, dd.slave_pos, dd.master_pos)
    return float(dd.dd_carrier - geo / dd.wavelength)


def constant_ambiguity_residual(n_t, n_prev):
    return float(n_t) - float(n_prev)


@dataclass
class TrackEntry:
    value: float
    epoch: float
    master: int
    length: int = 1


@dataclass
class SlipReport:
    epoch: float
    constellation: str
    prn: int
    td_value: float
    threshold: float
    method: str = "lidar_aided"


@dataclass
class AmbiguityTrack:
    """Per-satellite float DD ambiguity history, keyed by ``(constellation, prn)``."""

    entries: dict = field(default_factory=dict)
    # satellites whose track continued without a slip at the last update
    continued: set = field(default_factory=set)

    def __contains__(self, key):
        return key in self.entries

    def get(self, key):
        return self.entries.get(key)

    def reset(self, key):
        self.entries.pop(key, None)
        self.continued.discard(key)


def detect_cycle_slips(track: AmbiguityTrack, current, epoch_time, threshold=DEFAULT_THRESHOLD,
                       masters=None, lock_lost=()):
    """Compare this epoch's float ambiguities with the track.

    ``current`` maps ``(constellation, prn)`` to the float DD ambiguity in
    cycles. ``masters`` maps constellation to the master prn used for the
    current DDs; a master change restarts every track of that constellation.
    ``lock_lost`` lists satellites flagged by the receiver; their tracks are
    restarted and reported with method ``receiver_flag``.

    Returns ``(reports, track)``; ``track.continued`` holds the satellites
    whose constant-ambiguity link to the previous epoch is valid.
    """
    masters = masters or {}
    lock_lost = set(lock_lost)
    reports = []
    continued = set()
    for key in list(track.entries):
        if key not in current:
            track.reset(key)
    for key in sorted(current):
        value = float(current[key])
        const = key[0]
        master = masters.get(const)
        prev = track.entries.get(key)
        if prev is not None and master is not None and prev.master != master:
            prev = None
        if key in lock_lost:
            if prev is not None:
                reports.append(SlipReport(epoch_time, const, key[1], float("nan"), threshold,
                                          "receiver_flag"))
            prev = None
        if prev is not None:
            n_td = value - prev.value
            if abs(n_td) > threshold:
                reports.append(SlipReport(epoch_time, const, key[1], n_td, threshold))
                prev = None
            else:
                continued.add(key)
        length = 1 if prev is None else prev.length + 1
        track.entries[key] = TrackEntry(value, epoch_time, master, length)
    track.continued = continued
    return reports, track
