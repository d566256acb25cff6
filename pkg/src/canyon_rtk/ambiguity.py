"""Integer ambiguity resolution.

LAMBDA-style integer least squares: LtDL factorisation, integer Gauss
decorrelation with permutations, then a shrinking-ellipsoid depth-first
search on the decorrelated problem. Also ratio-test validation, the
conditional position fix and ADOP.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotPositiveDefinite

# numerical slack used when deciding whether a permutation reduces D[j+1]
_PERM_EPS = 1e-6


def _round(x):
    return np.floor(x + 0.5)


def _sgn(x):
    return -1.0 if x <= 0.0 else 1.0


def ltdl(Q):
    """Factor ``Q = L^T diag(D) L`` with unit lower-triangular ``L``."""
    A = np.array(Q, dtype=float, copy=True)
    n = A.shape[0]
    L = np.zeros((n, n))
    D = np.zeros(n)
    for i in range(n - 1, -1, -1):
        D[i] = A[i, i]
        if not D[i] > 0.0:
            raise NotPositiveDefinite("matrix is not positive definite")
        a = np.sqrt(D[i])
        L[i, :i + 1] = A[i, :i + 1] / a
        for j in range(i):
            A[j, :j + 1] -= L[i, :j + 1] * L[i, j]
        L[i, :i + 1] /= L[i, i]
    return L, D


def _check_pd(Q):
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise NotPositiveDefinite("covariance must be square")
    if not np.allclose(Q, Q.T, rtol=1e-9, atol=1e-12):
        raise NotPositiveDefinite("covariance must be symmetric")
    try:
        np.linalg.cholesky(Q)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("covariance is not positive definite") from exc
    return 0.5 * (Q + Q.T)


def _gauss(L, Z, i, j):
    mu = _round(L[i, j])
    if mu != 0.0:
        L[i:, j] -= mu * L[i:, i]
        Z[:, j] -= mu * Z[:, i]


def _perm(L, D, j, delta, Z):
    eta = D[j] / delta
    lam = D[j + 1] * L[j + 1, j] / delta
    D[j] = eta * D[j + 1]
    D[j + 1] = delta
    a0 = L[j, :j].copy()
    a1 = L[j + 1, :j].copy()
    L[j, :j] = -L[j + 1, j] * a0 + a1
    L[j + 1, :j] = eta * a0 + lam * a1
    L[j + 1, j] = lam
    L[j + 2:, [j, j + 1]] = L[j + 2:, [j + 1, j]]
    Z[:, [j, j + 1]] = Z[:, [j + 1, j]]


def _reduce(L, D):
    n = len(D)
    Z = np.eye(n)
    j = k = n - 2
    while j >= 0:
        if j <= k:
            for i in range(j + 1, n):
                _gauss(L, Z, i, j)
        delta = D[j] + L[j + 1, j] ** 2 * D[j + 1]
        if delta + _PERM_EPS < D[j + 1]:
            _perm(L, D, j, delta, Z)
            k = j
            j = n - 2
        else:
            j -= 1
    return Z


def decorrelate(Q):
    """Return ``(Z, Zt Q Z)`` with ``Z`` unimodular and the transformed matrix decorrelated."""
    Q = _check_pd(Q)
    L, D = ltdl(Q)
    Z = _reduce(L, D)
    Z = np.rint(Z)
    Qz = Z.T @ Q @ Z
    return Z, 0.5 * (Qz + Qz.T)


def _search(L, D, zs, m):
    n = len(D)
    S = np.zeros((n, n))
    dist = np.zeros(n)
    zb = np.zeros(n)
    z = np.zeros(n)
    step = np.zeros(n)
    cands = np.zeros((m, n))
    s = np.full(m, np.inf)
    nn = 0
    imax = 0
    maxdist = np.inf

    k = n - 1
    zb[k] = zs[k]
    z[k] = _round(zb[k])
    y = zb[k] - z[k]
    step[k] = _sgn(y)
    for _ in range(10_000_000):
        newdist = dist[k] + y * y / D[k]
        if newdist < maxdist:
            if k != 0:
                k -= 1
                dist[k] = newdist
                S[k, :k + 1] = S[k + 1, :k + 1] + (z[k + 1] - zb[k + 1]) * L[k + 1, :k + 1]
                zb[k] = zs[k] + S[k, k]
                z[k] = _round(zb[k])
                y = zb[k] - z[k]
                step[k] = _sgn(y)
            else:
                if nn < m:
                    if nn == 0 or newdist > s[imax]:
                        imax = nn
                    cands[nn] = z
                    s[nn] = newdist
                    nn += 1
                    if nn == m:
                        maxdist = s[imax]
                else:
                    if newdist < s[imax]:
                        cands[imax] = z
                        s[imax] = newdist
                        imax = int(np.argmax(s))
                    maxdist = s[imax]
                z[0] += step[0]
                y = zb[0] - z[0]
                step[0] = -step[0] - _sgn(step[0])
        else:
            if k == n - 1:
                break
            k += 1
            z[k] += step[k]
            y = zb[k] - z[k]
            step[k] = -step[k] - _sgn(step[k])
    else:  # pragma: no cover - pathological input
        raise RuntimeError("integer search did not terminate")
    order = np.argsort(s[:nn], kind="stable")
    return cands[order], s[order]


def integer_search(a_float, Q, n_candidates=2):
    """Best ``n_candidates`` integer vectors minimising ``(a-z)' Q^-1 (a-z)``.

    Returns ``(candidates, values)`` sorted by increasing quadratic form;
    ``candidates`` has shape ``(n_candidates, m)``.
    """
    a = np.asarray(a_float, dtype=float).ravel()
    Q = _check_pd(Q)
    if Q.shape[0] != a.size:
        raise ValueError("dimension mismatch between ambiguities and covariance")
    L, D = ltdl(Q)
    Z = np.rint(_reduce(L, D))
    # search around an integer shift to keep magnitudes small
    shift = _round(a)
    zs = Z.T @ (a - shift)
    E, s = _search(L, D, zs, n_candidates)
    F = np.linalg.solve(Z.T, E.T).T
    F = np.rint(F) + shift
    return F.astype(np.int64), s


@dataclass
class FixedSolution:
    ambiguities: np.ndarray
    position: np.ndarray
    ratio: float
    accepted: bool
    float_position: np.ndarray = None
    float_ambiguities: np.ndarray = None


def ratio_statistic(values):
    q1, q2 = float(values[0]), float(values[1])
    if q1 <= 0.0:
        return np.inf
    return q2 / q1


def conditional_position(p_float, a_float, a_fixed, Q_nn, Q_pn):
    """``p - Q_pn Q_nn^-1 (a_float - a_fixed)``."""
    da = np.asarray(a_float, dtype=float) - np.asarray(a_fixed, dtype=float)
    return np.asarray(p_float, dtype=float) - np.asarray(Q_pn) @ np.linalg.solve(Q_nn, da)


def validate_and_fix(a_float, p_float, Q_nn, Q_pn, candidates, values, ratio_threshold=3.0):
    """Ratio test; on acceptance apply the conditional adjustment to the position."""
    ratio = ratio_statistic(values)
    best = np.asarray(candidates[0])
    accepted = bool(ratio >= ratio_threshold)
    pos = np.asarray(p_float, dtype=float)
    if accepted:
        pos = conditional_position(p_float, a_float, best, Q_nn, Q_pn)
    return FixedSolution(ambiguities=best, position=pos, ratio=float(ratio), accepted=accepted,
                         float_position=np.asarray(p_float, dtype=float),
                         float_ambiguities=np.asarray(a_float, dtype=float))


def resolve(a_float, p_float, Q_nn, Q_pn, ratio_threshold=3.0):
    """Search plus validation in one call."""
    cands, vals = integer_search(a_float, Q_nn, 2)
    return validate_and_fix(a_float, p_float, Q_nn, Q_pn, cands, vals, ratio_threshold)


def adop(Q):
    """Ambiguity dilution of precision, ``det(Q)^(1/(2m))`` in cycles."""
    Q = _check_pd(Q)
    m = Q.shape[0]
    if m < 1:
        raise NotPositiveDefinite("empty covariance")
    C = np.linalg.cholesky(Q)
    return float(np.exp(np.sum(np.log(np.diag(C))) / m))
