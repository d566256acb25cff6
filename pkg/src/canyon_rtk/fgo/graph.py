"""Dense factor-graph machinery: values, factors, Levenberg-damped Gauss-Newton,
covariance recovery and Schur-complement marginalisation.

Variables are addressed by hashable keys and may be :class:`NavState`,
:class:`Pose` or plain float vectors. Factors return whitened residuals and
whitened Jacobians with respect to the tangent perturbation of each key.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import SingularInformation, SingularSystem
from ..frames import right_jacobian_inv, so3_exp, so3_log
from .states import NAV_DIM, TH, NavState


@dataclass
class Pose:
    position: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)

    def retract(self, delta):
        delta = np.asarray(delta, dtype=float)
        R = self.rotation @ so3_exp(delta[3:6])
        u, _, vt = np.linalg.svd(R)
        return Pose(self.position + delta[:3], u @ vt)

    def local(self, other):
        return np.r_[other.position - self.position, so3_log(self.rotation.T @ other.rotation)]

    def copy(self):
        return Pose(self.position.copy(), self.rotation.copy())


def var_dim(value):
    if isinstance(value, NavState):
        return NAV_DIM
    if isinstance(value, Pose):
        return 6
    return np.asarray(value).size


def retract(value, delta):
    if isinstance(value, (NavState, Pose)):
        return value.retract(delta)
    return np.asarray(value, dtype=float) + np.asarray(delta, dtype=float).reshape(np.shape(value))


def local(a, b):
    if isinstance(a, (NavState, Pose)):
        return a.local(b)
    return (np.asarray(b, dtype=float) - np.asarray(a, dtype=float)).ravel()


def local_jacobian(a, b):
    """Derivative of ``local(a, b.retract(d))`` with respect to ``d`` at 0."""
    n = var_dim(a)
    J = np.eye(n)
    if isinstance(a, NavState):
        J[TH, TH] = right_jacobian_inv(so3_log(a.rotation.T @ b.rotation))
    elif isinstance(a, Pose):
        J[3:6, 3:6] = right_jacobian_inv(so3_log(a.rotation.T @ b.rotation))
    return J


def copy_value(v):
    if isinstance(v, (NavState, Pose)):
        return v.copy()
    return np.array(v, dtype=float, copy=True)


class Factor:
    """Base class. Subclasses set ``family`` and ``keys`` and implement ``linearize``."""

    family = "factor"
    keys: tuple = ()

    @property
    def size(self):
        """Number of scalar measurement rows."""
        raise NotImplementedError

    def linearize(self, values):
        """Return ``(r, [J_key0, J_key1, ...])``, all whitened."""
        raise NotImplementedError

    def error(self, values):
        return self.linearize(values)[0]


class PriorFactor(Factor):
    """Gaussian prior ``sqrt_info @ local(mean, x)`` on one variable."""

    family = "prior"

    def __init__(self, key, mean, sqrt_info):
        self.keys = (key,)
        self.mean = copy_value(mean)
        self.sqrt_info = np.atleast_2d(np.asarray(sqrt_info, dtype=float))

    @property
    def size(self):
        return self.sqrt_info.shape[0]

    def linearize(self, values):
        x = values[self.keys[0]]
        r = self.sqrt_info @ local(self.mean, x)
        return r, [self.sqrt_info @ local_jacobian(self.mean, x)]


class LinearFactor(Factor):
    """``sum_i A_i x_i - b`` on Euclidean variables, whitened by ``sigma``."""

    family = "linear"

    def __init__(self, keys, matrices, b, sigma=1.0):
        self.keys = tuple(keys)
        self.matrices = [np.atleast_2d(np.asarray(A, dtype=float)) for A in matrices]
        self.b = np.atleast_1d(np.asarray(b, dtype=float))
        self.sigma = sigma

    @property
    def size(self):
        return self.b.size

    def linearize(self, values):
        r = -self.b.copy()
        for k, A in zip(self.keys, self.matrices):
            r = r + A @ np.atleast_1d(values[k])
        return r / self.sigma, [A / self.sigma for A in self.matrices]


class MarginalPrior(Factor):
    """Linearised prior ``r_p + H_p * local(x_lin, x)`` left by marginalisation."""

    family = "prior"

    def __init__(self, keys, linearization, H_p, r_p):
        self.keys = tuple(keys)
        self.linearization = linearization
        self.H_p = np.asarray(H_p, dtype=float)
        self.r_p = np.asarray(r_p, dtype=float)

    @property
    def size(self):
        return self.r_p.size

    def linearize(self, values):
        dx = []
        Js = []
        off = 0
        for k in self.keys:
            x0 = self.linearization[k]
            n = var_dim(x0)
            dx.append(local(x0, values[k]))
            Js.append(self.H_p[:, off:off + n] @ local_jacobian(x0, values[k]))
            off += n
        r = self.r_p + self.H_p @ np.concatenate(dx)
        return r, Js


class FactorGraph:
    def __init__(self, factors=()):
        self.factors = list(factors)

    def add(self, factor):
        self.factors.append(factor)
        return factor

    def remove(self, factors):
        drop = {id(f) for f in factors}
        self.factors = [f for f in self.factors if id(f) not in drop]

    def keys(self):
        seen = {}
        for f in self.factors:
            for k in f.keys:
                seen.setdefault(k, None)
        return list(seen)

    def factors_touching(self, keys):
        keys = set(keys)
        return [f for f in self.factors if keys.intersection(f.keys)]

    def factor_counts(self):
        """Scalar measurement rows per factor family."""
        counts = {}
        for f in self.factors:
            counts[f.family] = counts.get(f.family, 0) + f.size
        return counts

    def cost(self, values):
        return 0.5 * sum(float(np.sum(f.error(values) ** 2)) for f in self.factors)


class Ordering:
    def __init__(self, keys, values):
        self.keys = list(keys)
        self.offsets = {}
        off = 0
        for k in self.keys:
            self.offsets[k] = off
            off += var_dim(values[k])
        self.dim = off

    def slice(self, key, values):
        o = self.offsets[key]
        return slice(o, o + var_dim(values[key]))

    def indices(self, keys, values):
        return np.concatenate([np.arange(self.offsets[k], self.offsets[k] + var_dim(values[k]))
                               for k in keys])


def linear_system(factors, values, ordering: Ordering):
    """Accumulate ``H = J^T J``, ``b = J^T r`` and the cost over ``factors``."""
    n = ordering.dim
    H = np.zeros((n, n))
    b = np.zeros(n)
    cost = 0.0
    for f in factors:
        r, Js = f.linearize(values)
        idx = ordering.indices(f.keys, values)
        J = np.hstack(Js) if len(Js) > 1 else Js[0]
        H[np.ix_(idx, idx)] += J.T @ J
        b[idx] += J.T @ r
        cost += 0.5 * float(r @ r)
    return H, b, cost


def _deficient_keys(H, ordering, values, tol=1e-12):
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    v = V[:, 0]
    hits = np.abs(v) > 0.1 * np.abs(v).max()
    bad = []
    for k in ordering.keys:
        if np.any(hits[ordering.slice(k, values)]):
            bad.append(k)
    return bad


@dataclass
class OptimizeResult:
    values: dict
    cost: float
    initial_cost: float
    iterations: int
    converged: bool
    cost_history: list


def optimize(graph: FactorGraph, values, max_iterations=50, rel_tol=1e-6, ordering=None):
    """Levenberg-damped Gauss-Newton over all variables in ``graph``.

    Damping only grows when a step fails to reduce the cost, so accepted
    iterations never increase the objective.
    """
    values = dict(values)
    ordering = ordering or Ordering(graph.keys(), values)
    H, b, cost = linear_system(graph.factors, values, ordering)
    diag = np.diag(H).copy()
    zero = diag <= 0.0
    if np.any(zero):
        bad = [k for k in ordering.keys if np.any(zero[ordering.slice(k, values)])]
        raise SingularSystem(f"unconstrained variables: {bad}", keys=bad)
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        w = np.linalg.eigvalsh(0.5 * (H + H.T))
        if w[0] <= 1e-13 * w[-1]:
            bad = _deficient_keys(H, ordering, values)
            raise SingularSystem(f"rank-deficient normal equations in {bad}", keys=bad)
    history = [cost]
    initial = cost
    mu = 0.0
    converged = False
    it = 0
    for it in range(1, max_iterations + 1):
        accepted = False
        for _ in range(12):
            A = H + mu * np.diag(diag)
            try:
                C = np.linalg.cholesky(A)
            except np.linalg.LinAlgError:
                mu = max(mu * 10.0, 1e-9)
                continue
            step = -np.linalg.solve(C.T, np.linalg.solve(C, b))
            trial = {k: retract(values[k], step[ordering.slice(k, values)])
                     if k in ordering.offsets else values[k] for k in values}
            new_cost = graph.cost(trial)
            if new_cost <= cost:
                accepted = True
                break
            mu = max(mu * 10.0, 1e-6)
        if not accepted:
            if mu > 0 and len(history) == 1:
                try:
                    np.linalg.cholesky(H)
                except np.linalg.LinAlgError:
                    bad = _deficient_keys(H, ordering, values)
                    raise SingularSystem(f"rank-deficient normal equations in {bad}", keys=bad)
            converged = True
            break
        values = trial
        rel = (cost - new_cost) / max(cost, 1e-300)
        H, b, cost = linear_system(graph.factors, values, ordering)
        history.append(cost)
        mu = mu / 10.0 if mu > 1e-12 else 0.0
        if rel < rel_tol or cost == 0.0:
            converged = True
            break
    return OptimizeResult(values=values, cost=cost, initial_cost=initial, iterations=it,
                          converged=converged, cost_history=history)


def information_matrix(graph: FactorGraph, values, ordering=None):
    ordering = ordering or Ordering(graph.keys(), values)
    H, _, _ = linear_system(graph.factors, values, ordering)
    return H, ordering


def covariance(graph: FactorGraph, values, ordering=None):
    """Full covariance ``(J^T W J)^-1`` at ``values``."""
    H, ordering = information_matrix(graph, values, ordering)
    H = 0.5 * (H + H.T)
    try:
        C = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        bad = _deficient_keys(H, ordering, values)
        raise SingularInformation(f"information matrix is singular in {bad}", keys=bad)
    Ci = np.linalg.solve(C, np.eye(H.shape[0]))
    return Ci.T @ Ci, ordering


def marginalize(graph: FactorGraph, values, leaving_keys, eps=1e-10):
    """Remove ``leaving_keys`` from ``graph`` and replace their factors by a prior.

    Returns the new :class:`MarginalPrior` (already added to the graph) or
    ``None`` when the leaving keys have no factors.
    """
    leaving = [k for k in leaving_keys]
    touched = graph.factors_touching(leaving)
    if not touched:
        return None
    involved = []
    for f in touched:
        for k in f.keys:
            if k not in involved:
                involved.append(k)
    kept = [k for k in involved if k not in leaving]
    gone = [k for k in involved if k in leaving]
    order = Ordering(gone + kept, values)
    H, b, _ = linear_system(touched, values, order)
    m = sum(var_dim(values[k]) for k in gone)
    Hmm, Hmr, Hrr = H[:m, :m], H[:m, m:], H[m:, m:]
    bm, br = b[:m], b[m:]
    Hmm = 0.5 * (Hmm + Hmm.T)
    w, V = np.linalg.eigh(Hmm)
    keep = w > eps * max(w.max(), 1.0)
    Hmm_inv = (V[:, keep] / w[keep]) @ V[:, keep].T
    Hs = Hrr - Hmr.T @ Hmm_inv @ Hmr
    bs = br - Hmr.T @ Hmm_inv @ bm
    graph.remove(touched)
    if not kept:
        return None
    Hs = 0.5 * (Hs + Hs.T)
    w, V = np.linalg.eigh(Hs)
    keep = w > eps * max(w.max(), 1.0)
    sq = np.sqrt(w[keep])
    H_p = sq[:, None] * V[:, keep].T
    r_p = (V[:, keep].T @ bs) / sq
    prior = MarginalPrior(keys=tuple(kept),
                          linearization={k: copy_value(values[k]) for k in kept},
                          H_p=H_p, r_p=r_p)
    graph.add(prior)
    return prior


def numeric_jacobians(factor: Factor, values, h=1e-3):
    """Five-point central differences of the whitened residual on the tangent space."""
    Js = []
    for k in factor.keys:
        x0 = values[k]
        n = var_dim(x0)
        r0 = factor.error(values)
        J = np.zeros((r0.size, n))
        for i in range(n):
            d = np.zeros(n)
            rs = []
            for s in (2, 1, -1, -2):
                d[i] = s * h
                vals = dict(values)
                vals[k] = retract(x0, d)
                rs.append(factor.error(vals))
            J[:, i] = (-rs[0] + 8 * rs[1] - 8 * rs[2] + rs[3]) / (12 * h)
        Js.append(J)
    return Js


def with_values(values, **updates):
    out = dict(values)
    out.update(updates)
    return out


def replace_state(state, **kw):
    return replace(state, **kw)
