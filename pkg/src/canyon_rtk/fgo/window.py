"""Sliding-window graph assembly, covariance extraction and window bookkeeping.

Keyframe states are keyed ``("x", id)``. Each GNSS epoch owns one receiver
clock-drift variable ``("c", epoch)`` and one float DD ambiguity per carrier
observation ``("N", epoch, constellation, prn)``; consecutive ambiguities of
an unbroken track are tied by constant-ambiguity factors.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InconsistentTimestamps, SingularInformation
from ..frames import so3_exp, so3_log
from .factors import (ConstantAmbiguityFactor, DdCarrierFactor, DdPseudorangeFactor,
                      DopplerFactor, EpochGeometry, ImuFactor)
from .graph import (Factor, FactorGraph, Ordering, covariance, information_matrix, linear_system,
                    marginalize, optimize)
from .states import NAV_DIM, P, NavState

TIME_TOL = 1e-6


def state_key(keyframe_id):
    return ("x", int(keyframe_id))


def clock_key(epoch_index):
    return ("c", int(epoch_index))


def ambiguity_key(epoch_index, constellation, prn):
    return ("N", int(epoch_index), constellation, int(prn))


@dataclass
class EpochInput:
    """Measurements of one GNSS epoch between keyframes ``k0`` and ``k1``.

    ``carrier`` pairs each DD with its ambiguity key. ``links`` lists
    ``(previous key, current key, sigma in cycles)`` for tracks that
    continued without a slip.
    """

    index: int
    time: float
    k0: int
    k1: int
    geometry: EpochGeometry
    pseudorange: list = field(default_factory=list)
    carrier: list = field(default_factory=list)
    doppler: list = field(default_factory=list)
    doppler_sigma: list = field(default_factory=list)
    links: list = field(default_factory=list)

    @property
    def clock_key(self):
        return clock_key(self.index)

    @property
    def ambiguity_keys(self):
        return [k for _, k in self.carrier]

    @property
    def variable_keys(self):
        keys = list(self.ambiguity_keys)
        if self.doppler:
            keys.append(self.clock_key)
        return keys

    @property
    def has_gnss(self):
        return bool(self.pseudorange or self.carrier or self.doppler)


@dataclass
class KeyframeInput:
    keyframe_id: int
    timestamp: float
    imu_factor: ImuFactor = None  # from the previous keyframe
    vs_factor: object = None


def build_graph(keyframes, epochs, base_ecef, prior=None, extra=()):
    """Assemble the window objective from stored inputs.

    ``keyframes`` is the ordered list of :class:`KeyframeInput` and
    ``epochs`` the :class:`EpochInput` records inside the window.
    """
    ts = {kf.keyframe_id: kf.timestamp for kf in keyframes}
    if any(b <= a for a, b in zip([kf.timestamp for kf in keyframes],
                                  [kf.timestamp for kf in keyframes][1:])):
        raise InconsistentTimestamps("keyframe timestamps must increase")
    g = FactorGraph()
    if prior is not None:
        g.add(prior)
    for prev, kf in zip([None] + keyframes[:-1], keyframes):
        if kf.imu_factor is not None and prev is not None:
            d = kf.imu_factor.delta.duration
            if abs((kf.timestamp - prev.timestamp) - d) > TIME_TOL:
                raise InconsistentTimestamps(
                    f"IMU delta spans {d} s but keyframes {prev.keyframe_id}->{kf.keyframe_id} "
                    f"are {kf.timestamp - prev.timestamp} s apart")
            g.add(kf.imu_factor)
        if kf.vs_factor is not None:
            g.add(kf.vs_factor)
    for ep in epochs:
        if ep.k0 not in ts or ep.k1 not in ts:
            raise InconsistentTimestamps(f"epoch {ep.index} refers to keyframes outside the window")
        if not ts[ep.k0] - TIME_TOL <= ep.time <= ts[ep.k1] + TIME_TOL:
            raise InconsistentTimestamps(
                f"epoch at {ep.time} s is outside [{ts[ep.k0]}, {ts[ep.k1]}]")
        a, b = state_key(ep.k0), state_key(ep.k1)
        for dd in ep.pseudorange:
            g.add(DdPseudorangeFactor(a, b, dd, ep.geometry, base_ecef))
        for dd, key in ep.carrier:
            g.add(DdCarrierFactor(a, b, key, dd, ep.geometry, base_ecef))
        for obs, s in zip(ep.doppler, ep.doppler_sigma):
            g.add(DopplerFactor(a, b, ep.clock_key, obs, ep.geometry, s))
        for prev_key, key, s in ep.links:
            g.add(ConstantAmbiguityFactor(prev_key, key, s))
    for f in extra:
        g.add(f)
    return g


@dataclass
class FloatSolution:
    """Optimised window values and the covariance blocks of one epoch."""

    values: dict
    epoch_index: int
    position: np.ndarray
    ambiguities: np.ndarray
    ambiguity_keys: list
    Q_nn: np.ndarray
    Q_pp: np.ndarray
    Q_np: np.ndarray

    @property
    def Q_pn(self):
        return self.Q_np.T


def epoch_position(values, epoch: EpochInput):
    x0, x1 = values[state_key(epoch.k0)], values[state_key(epoch.k1)]
    g = epoch.geometry
    return g.w0 * x0.position + g.w1 * x1.position


def epoch_rotation(values, epoch: EpochInput):
    """Geodesic interpolation of the two keyframe attitudes."""
    R0 = values[state_key(epoch.k0)].rotation
    R1 = values[state_key(epoch.k1)].rotation
    return R0 @ so3_exp(epoch.geometry.w1 * so3_log(R0.T @ R1))


def epoch_selector(values, ordering, epoch: EpochInput):
    """Rows mapping the full tangent vector to (ambiguities, epoch position)."""
    keys = epoch.ambiguity_keys
    m = len(keys)
    A = np.zeros((m + 3, ordering.dim))
    for i, k in enumerate(keys):
        A[i, ordering.offsets[k]] = 1.0
    g = epoch.geometry
    for w, kf in ((g.w0, epoch.k0), (g.w1, epoch.k1)):
        o = ordering.offsets[state_key(kf)]
        A[m:, o + P.start:o + P.stop] += w * np.eye(3)
    return A


def blocks_from_covariance(Sigma, A, m):
    C = A @ Sigma @ A.T
    C = 0.5 * (C + C.T)
    Q_nn = C[:m, :m]
    Q_pp = C[m:, m:]
    Q_np = C[:m, m:].copy()
    return Q_nn, Q_pp, Q_np


def extract_covariance(graph: FactorGraph, values, epoch: EpochInput):
    """``(Q_nn, Q_pp, Q_np)`` of one epoch marginalised from the whole window."""
    Sigma, ordering = covariance(graph, values)
    A = epoch_selector(values, ordering, epoch)
    return blocks_from_covariance(Sigma, A, len(epoch.ambiguity_keys))


def float_solution(graph, values, epoch: EpochInput):
    Q_nn, Q_pp, Q_np = extract_covariance(graph, values, epoch)
    amb = np.array([float(np.asarray(values[k]).ravel()[0]) for k in epoch.ambiguity_keys])
    return FloatSolution(values=values, epoch_index=epoch.index,
                         position=epoch_position(values, epoch), ambiguities=amb,
                         ambiguity_keys=list(epoch.ambiguity_keys), Q_nn=Q_nn, Q_pp=Q_pp,
                         Q_np=Q_np)


def split_information(graph: FactorGraph, values, family="vs"):
    """Information matrices of ``family`` factors and of everything else."""
    ordering = Ordering(graph.keys(), values)
    sel = [f for f in graph.factors if f.family == family]
    rest = [f for f in graph.factors if f.family != family]
    H_sel, _, _ = linear_system(sel, values, ordering)
    H_rest, _, _ = linear_system(rest, values, ordering)
    return H_rest, H_sel, ordering


def weighted_q_nn(H_rest, H_sel, ordering, values, epoch: EpochInput, weight):
    """``Q_nn`` when the selected family's information is scaled by ``weight``."""
    return q_nn_from_information(H_rest + weight * H_sel, ordering, values, epoch)


def q_nn_from_information(H, ordering, values, epoch: EpochInput):
    H = 0.5 * (H + H.T)
    try:
        C = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise SingularInformation("information matrix is singular")
    A = epoch_selector(values, ordering, epoch)
    m = len(epoch.ambiguity_keys)
    X = np.linalg.solve(C, A[:m].T)
    Q = X.T @ X
    return 0.5 * (Q + Q.T)


class WeightedFactor(Factor):
    """Wraps a factor and multiplies its information by ``weight``."""

    def __init__(self, factor, weight):
        self.factor = factor
        self.family = factor.family
        self.keys = factor.keys
        self.scale = float(np.sqrt(weight))

    @property
    def size(self):
        return self.factor.size

    def linearize(self, values):
        r, Js = self.factor.linearize(values)
        return self.scale * r, [self.scale * J for J in Js]


class SlidingWindow:
    """Keyframes, epochs and the marginal prior of a fixed-size window.

    For every entry of ``sweep_weights`` a second prior is carried along,
    marginalised with the VS information scaled by that weight, so that a
    weight sweep also reweights the history folded into the prior.
    """

    def __init__(self, size=10, base_ecef=None, max_iterations=50, rel_tol=1e-6,
                 sweep_weights=()):
        if size < 2:
            raise ValueError("window size must be at least 2")
        self.size = int(size)
        self.base_ecef = np.asarray(base_ecef, dtype=float)
        self.max_iterations = max_iterations
        self.rel_tol = rel_tol
        self.keyframes = []
        self.epochs = []
        self.values = {}
        self.prior = None
        self.initial_factors = []
        self.last_result = None
        self.sweep_priors = {float(w): None for w in sweep_weights}

    @property
    def keyframe_ids(self):
        return [kf.keyframe_id for kf in self.keyframes]

    def add_keyframe(self, kf: KeyframeInput, state: NavState):
        if self.keyframes and kf.timestamp <= self.keyframes[-1].timestamp:
            raise InconsistentTimestamps("keyframes must arrive in time order")
        self.keyframes.append(kf)
        self.values[state_key(kf.keyframe_id)] = state

    def add_epoch(self, epoch: EpochInput, initial):
        """``initial`` maps each new variable key to its starting value."""
        self.epochs.append(epoch)
        for k in epoch.variable_keys:
            self.values[k] = np.atleast_1d(np.asarray(initial[k], dtype=float))

    def graph(self, extra=()):
        return build_graph(self.keyframes, self.epochs, self.base_ecef, self.prior,
                           list(self.initial_factors) + list(extra))

    def weighted_graph(self, weight, family="vs"):
        """Window objective with ``family`` reweighted and the matching sweep prior."""
        g = build_graph(self.keyframes, self.epochs, self.base_ecef,
                        self.sweep_priors[float(weight)], self.initial_factors)
        g.factors = [WeightedFactor(f, weight) if f.family == family else f for f in g.factors]
        return g

    def weighted_information(self, weight, ordering):
        return information_matrix(self.weighted_graph(weight), self.values, ordering)[0]

    def optimize(self):
        g = self.graph()
        res = optimize(g, self.values, self.max_iterations, self.rel_tol)
        self.values = res.values
        self.last_result = res
        return g, res

    def state(self, keyframe_id):
        return self.values[state_key(keyframe_id)]

    def slide(self):
        """Marginalise the oldest keyframe once the window is over-full.

        The epochs between the oldest and the next keyframe leave with it.
        Returns the ids of marginalised keyframes.
        """
        gone = []
        while len(self.keyframes) > self.size:
            oldest = self.keyframes[0].keyframe_id
            leaving_epochs = [e for e in self.epochs if e.k0 == oldest]
            leaving = [state_key(oldest)]
            for e in leaving_epochs:
                leaving.extend(e.variable_keys)
            for w in self.sweep_priors:
                self.sweep_priors[w] = marginalize(self.weighted_graph(w), self.values, leaving)
            g = self.graph()
            self.prior = marginalize(g, self.values, leaving)
            self.initial_factors = []
            self.keyframes = self.keyframes[1:]
            # the new oldest keyframe's IMU link was folded into the prior
            self.keyframes[0] = KeyframeInput(self.keyframes[0].keyframe_id,
                                              self.keyframes[0].timestamp, None,
                                              self.keyframes[0].vs_factor)
            self.epochs = [e for e in self.epochs if e.k0 != oldest]
            gone_keys = set(leaving)
            for e in self.epochs:
                # links into marginalised ambiguities now live in the prior
                e.links = [l for l in e.links if l[0] not in gone_keys]
            for k in leaving:
                self.values.pop(k, None)
            gone.append(oldest)
        return gone
