"""Temporal precision of AR(1) and seasonal AR(12) processes.

The seasonal process is ``w_t = a w_{t-1} + b w_{t-p} + e_t`` with unit driving
variance. Its precision is banded with bandwidth ``p`` and Toeplitz in the
interior; the two ``p x p`` corners carry the boundary pattern.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .errors import InputError, NonStationary, SingularYuleWalker
from .spde import SpdeParams, marginal_spatial_std

ORDERS = ("AR0", "AR1", "AR12")
RANGE_CAP = 1.0e4


@dataclass(frozen=True)
class ArParams:
    """Coefficients of an AR0, AR1 or seasonal AR12 process.

    Parameters
    ----------
    a : float
        Lag-1 coefficient.
    b : float
        Lag-``p`` (seasonal) coefficient, zero unless ``order == "AR12"``.
    order : {"AR0", "AR1", "AR12"}
    """

    a: float = 0.0
    b: float = 0.0
    order: str = "AR0"

    def __post_init__(self):
        if self.order not in ORDERS:
            raise InputError(f"unknown AR order {self.order!r}")
        a, b = float(self.a), float(self.b)
        if not (math.isfinite(a) and math.isfinite(b)):
            raise InputError("AR coefficients must be finite")
        if self.order == "AR0" and (a != 0.0 or b != 0.0):
            raise InputError("AR0 requires a = b = 0")
        if self.order == "AR1" and b != 0.0:
            raise InputError("AR1 requires b = 0")
        if abs(a) + abs(b) >= 1.0:
            raise NonStationary(f"|a| + |b| = {abs(a) + abs(b)} >= 1")

    @property
    def p(self) -> int:
        return {"AR0": 1, "AR1": 1, "AR12": 12}[self.order]

    @classmethod
    def ar0(cls) -> "ArParams":
        return cls(0.0, 0.0, "AR0")

    @classmethod
    def ar1(cls, a: float) -> "ArParams":
        return cls(a, 0.0, "AR1")

    @classmethod
    def ar12(cls, a: float, b: float) -> "ArParams":
        return cls(a, b, "AR12")


def _innovation_operator(params: ArParams, n: int) -> sp.csr_matrix:
    """Rows ``e_t = w_t - a w_{t-1} - b w_{t-p}`` for ``t = p .. n-1``."""
    p = params.p
    t = np.arange(p, n)
    rows = np.concatenate([t, t, t]) - p
    cols = np.concatenate([t, t - 1, t - p])
    vals = np.concatenate([np.ones(t.size), np.full(t.size, -params.a),
                           np.full(t.size, -params.b)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n - p, n))


def build_Qt(params: ArParams, n_t: int) -> sp.csr_matrix:
    """Banded temporal precision of length ``n_t`` (unit driving variance).

    The interior is Toeplitz with diagonal ``1 + a^2 + b^2`` and off-diagonals
    ``-a`` (lag 1), ``ab`` (lag p-1) and ``-b`` (lag p). The trailing corner is
    the truncated quadratic form of the innovations and the leading corner is
    its persymmetric mirror. Records of at most ``2p`` months have no
    interior; their precision is the inverse of the Yule-Walker Toeplitz
    covariance, which still has bandwidth at most ``p``.
    """
    if n_t < 1:
        raise InputError("n_t must be positive")
    if params.order == "AR0":
        return sp.identity(n_t, format="csr")
    p = params.p
    if n_t <= 2 * p:
        Q = la.inv(la.toeplitz(yule_walker_covariance(params, 1.0, n_t - 1)))
        Q = 0.5 * (Q + Q.T)
        k = np.arange(n_t)
        Q[np.abs(k[:, None] - k[None, :]) > p] = 0.0
        return sp.csr_matrix(Q)
    a, b = params.a, params.b
    bands = {0: 1.0 + a * a + b * b}
    bands[1] = bands.get(1, 0.0) - a
    if b != 0.0 or p > 1:
        bands[p - 1] = bands.get(p - 1, 0.0) + a * b
        bands[p] = bands.get(p, 0.0) - b
    offs = sorted(k for k in bands if k > 0)
    Q = sp.diags([np.full(n_t, bands[0])]
                 + [np.full(n_t - k, bands[k]) for k in offs]
                 + [np.full(n_t - k, bands[k]) for k in offs],
                 [0] + offs + [-k for k in offs], format="lil")
    m = 3 * p + 1
    D = _innovation_operator(params, m)
    end = (D.T @ D).toarray()[m - p:, m - p:]
    Q[n_t - p:, n_t - p:] = end
    Q[:p, :p] = end[::-1, ::-1].T
    return Q.tocsr()


def yule_walker_covariance(params: ArParams, sigma_e2: float = 1.0,
                           max_lag: int = 0) -> np.ndarray:
    """Autocovariances ``r(0), ..., r(max_lag)``.

    Solves the ``(p+1)``-dimensional Yule-Walker system, then extends with
    ``r(k) = a r(k-1) + b r(k-p)``.
    """
    if max_lag < 0:
        raise InputError("max_lag must be non-negative")
    n = max_lag + 1
    if params.order == "AR0":
        r = np.zeros(n)
        r[0] = sigma_e2
        return r
    p, a, b = params.p, params.a, params.b
    A = np.eye(p + 1)
    for k in range(p + 1):
        A[k, abs(k - 1)] -= a
        A[k, abs(k - p)] -= b
    rhs = np.zeros(p + 1)
    rhs[0] = sigma_e2
    try:
        r0 = la.solve(A, rhs)
    except la.LinAlgError as exc:
        raise SingularYuleWalker(str(exc)) from exc
    if not np.all(np.isfinite(r0)) or r0[0] <= 0:
        raise SingularYuleWalker("Yule-Walker solution has non-positive variance")
    r = np.empty(max(n, p + 1))
    r[: p + 1] = r0
    for k in range(p + 1, r.size):
        r[k] = a * r[k - 1] + b * r[k - p]
    return r[:n]


def temporal_range(params: ArParams) -> float:
    """Lag (months) beyond which ``|corr|`` stays below 0.1.

    AR1 uses ``log 0.1 / log a``. For AR12 the last lag ``k`` with
    ``|r(k)/r(0)| >= 0.1`` is located and linearly interpolated towards
    ``k + 1``; results beyond ``1e4`` months are reported as ``1e4``.
    """
    if params.order == "AR0":
        return 0.0
    if params.order == "AR1":
        a = abs(params.a)
        if a == 0.0:
            return 0.0
        return math.log(0.1) / math.log(a)
    kmax = int(RANGE_CAP) + 1
    rho = np.abs(yule_walker_covariance(params, 1.0, kmax))
    rho /= rho[0]
    above = np.flatnonzero(rho >= 0.1)
    k = int(above[-1])
    # still above the threshold within one period of the end of the window
    if k + params.p > kmax:
        return RANGE_CAP
    val = k + (rho[k] - 0.1) / (rho[k] - rho[k + 1])
    return min(float(val), RANGE_CAP)


def marginal_std(spde: SpdeParams, ar: ArParams, sigma_e2: float = 1.0) -> float:
    """Marginal standard deviation of the space-time field."""
    r0 = yule_walker_covariance(ar, sigma_e2, 0)[0]
    return marginal_spatial_std(spde) * math.sqrt(r0)
