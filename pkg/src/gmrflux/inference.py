"""Marginal likelihood, posterior moments and parameter estimation.

With ``Q_z = F^T F`` and ``S = A F^{-1}`` the data covariance is
``Sigma = sigma_eps2 M + S S^T`` (an ``n_obs x n_obs`` matrix), and the
posterior precision is ``F^T (I + S^T Q_eps S) F``. All large-dimension work
reduces to triangular solves with the Kronecker factors of ``Q_z``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
from scipy.optimize import minimize

from .errors import (CholeskyFailure, DimensionMismatch, InputError,
                     MaxIterationsExceeded, NumericalError)
from .integration import IntegrationMaps
from .latent import DEFAULT_Q_BETA, FieldSpec, PrecisionModel
from .observation import ObservationMatrix
from .spde import SpdeParams
from .temporal import ArParams

MODEL_SPECS = {
    "S0": (1, "AR0"), "S1": (1, "AR1"), "S12": (1, "AR12"),
    "B0": (2, "AR0"), "B1": (2, "AR1"), "B12": (2, "AR12"),
}
_LOG2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# S = A F^{-1}
# ---------------------------------------------------------------------------
def solve_S(model: PrecisionModel, A: ObservationMatrix) -> np.ndarray:
    """``S = A F_z^{-1}`` as a dense ``(n_obs, n)`` array.

    Row ``i`` is ``F_z^{-T} A_i^T``. In each field only ``K + 1`` distinct
    spatial vectors occur per row (the active band and the shared well-mixed
    row), so the spatial solves are done once per distinct vector before the
    rows are expanded in time and the temporal solve is applied.
    """
    if A.n != model.n or A.n_t != model.n_t or len(A.Aa) != len(model.factors):
        raise DimensionMismatch("observation matrix does not match the latent model")
    n_obs, K, n_t = A.n_obs, A.K, model.n_t
    out = np.empty((n_obs, model.n))
    const = np.arange(n_t)[None, :] <= (A.t_obs - K)[:, None]      # (n_obs, n_t)
    ii, ll = np.nonzero(A.active_ok)
    tt = A.active_t[ii, ll]
    for k, fa in enumerate(model.factors):
        n_l = fa.n_l
        sa = fa.chol_s.solve_Ft_rows(A.Aa[k].reshape(-1, n_l)).reshape(n_obs, K, n_l)
        sc = fa.chol_s.solve_Ft_rows(A.Ac[k])
        X = const[:, :, None] * sc[:, None, :]                    # (n_obs, n_t, n_l)
        X[ii, tt] = sa[ii, ll]
        X = fa.chol_t.solve_Ft_axis(X, 1)
        o0, o1 = model.offsets[k], model.offsets[k + 1]
        out[:, o0:o1] = X.reshape(n_obs, -1)
    out[:, model.n_omega:] = A.Abeta / math.sqrt(model.q_beta)
    return out


# ---------------------------------------------------------------------------
# posterior given parameters
# ---------------------------------------------------------------------------
class Posterior:
    """Woodbury-form posterior for fixed parameters.

    Parameters
    ----------
    model : PrecisionModel
    A : ObservationMatrix
    M : (n_obs,) relative observation variances
    sigma_eps2 : float
    resid : (n_obs,) ``y - y0`` with ``y0 = c0 + J L0 mu0``
    """

    def __init__(self, model: PrecisionModel, A: ObservationMatrix, M,
                 sigma_eps2: float, resid):
        self.model = model
        self.A = A
        self.M = np.asarray(M, dtype=float)
        self.sigma_eps2 = float(sigma_eps2)
        self.resid = np.asarray(resid, dtype=float)
        if self.M.shape != (A.n_obs,) or self.resid.shape != (A.n_obs,):
            raise DimensionMismatch("M and residual must have one entry per observation")
        self.noise = self.sigma_eps2 * self.M
        self.S = solve_S(model, A)
        Sigma = self.S @ self.S.T
        Sigma[np.diag_indices_from(Sigma)] += self.noise
        try:
            self.L = la.cholesky(Sigma, lower=True, check_finite=True)
        except (la.LinAlgError, ValueError) as exc:
            raise CholeskyFailure(str(exc)) from exc
        # (I + S^T Q_eps S)^{-1} S^T Q_eps r = S^T Sigma^{-1} r; this form never
        # divides by the noise variance, so it stays accurate as the noise vanishes
        self.alpha = self._sigma_solve(self.resid)
        self.u = self.S.T @ self.alpha

    def _sigma_solve(self, b):
        return la.cho_solve((self.L, True), b, check_finite=False)

    @property
    def mean(self) -> np.ndarray:
        """Posterior mean of the latent vector, ``F^{-1} u``."""
        return self.model.solve_F(self.u)

    def log_likelihood(self) -> float:
        """``log p(y | Psi)`` including the ``2 pi`` constant."""
        n_obs = self.A.n_obs
        logdet_L = float(np.sum(np.log(np.diag(self.L))))
        # u^T u + (r - S u)^T Q_eps (r - S u) with r - S u = noise * alpha
        quad = float(self.resid @ self.alpha)
        return -0.5 * n_obs * _LOG2PI - logdet_L - 0.5 * quad

    def logdet_sigma(self) -> float:
        """``log |Q_eps^{-1} + S S^T|``."""
        return 2.0 * float(np.sum(np.log(np.diag(self.L))))

    def middle(self, W):
        """``(I - S^T Sigma^{-1} S) W``."""
        return W - self.S.T @ self._sigma_solve(self.S @ W)

    def covariance_apply(self, v):
        """``Q_{z|y}^{-1} v``."""
        return self.model.solve_F(self.middle(self.model.solve_Ft(v)))

    def predict(self) -> np.ndarray:
        """Posterior mean of ``A z`` (add ``y0`` for concentrations)."""
        return self.S @ self.u


# ---------------------------------------------------------------------------
# parameter vector
# ---------------------------------------------------------------------------
def _ar1_to(a):
    return a / (1.0 - abs(a))


def _ar1_from(u):
    return u / (1.0 + abs(u))


@dataclass(frozen=True)
class ParameterLayout:
    """Unconstrained coordinates for a model specification.

    Per field: ``log tau``, ``log kappa2`` and the AR transform (none, one or
    two entries); the last coordinate is ``log sigma_eps2``. For AR12,
    ``(a, b) = (u, v) / (1 + |u| + |v|)`` so every point is stationary.
    """

    spec: str

    def __post_init__(self):
        if self.spec not in MODEL_SPECS:
            raise InputError(f"unknown model specification {self.spec!r}")

    @property
    def n_fields(self) -> int:
        return MODEL_SPECS[self.spec][0]

    @property
    def order(self) -> str:
        return MODEL_SPECS[self.spec][1]

    @property
    def n_ar(self) -> int:
        return {"AR0": 0, "AR1": 1, "AR12": 2}[self.order]

    @property
    def size(self) -> int:
        return self.n_fields * (2 + self.n_ar) + 1

    def names(self, labels=None) -> list[str]:
        labels = labels or (["single"] if self.n_fields == 1 else ["land", "ocean"])
        ar = ["a", "b"][: self.n_ar]
        out = []
        for lab in labels:
            out += [f"{lab}.{n}" for n in ["tau", "kappa2"] + ar]
        return out + ["sigma_eps2"]

    def pack(self, params, sigma_eps2: float) -> np.ndarray:
        """``params``: list of ``(SpdeParams, ArParams)`` per field."""
        if len(params) != self.n_fields:
            raise DimensionMismatch(f"{self.spec} needs {self.n_fields} field(s)")
        th = []
        for spde, ar in params:
            if ar.order != self.order:
                raise InputError(f"{self.spec} needs {self.order}, got {ar.order}")
            th += [math.log(spde.tau), math.log(spde.kappa2)]
            if self.order == "AR1":
                th.append(_ar1_to(ar.a))
            elif self.order == "AR12":
                s = 1.0 - abs(ar.a) - abs(ar.b)
                th += [ar.a / s, ar.b / s]
        th.append(math.log(sigma_eps2))
        return np.array(th)

    def unpack(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.size,):
            raise DimensionMismatch(f"expected {self.size} coordinates")
        params, i = [], 0
        for _ in range(self.n_fields):
            spde = SpdeParams(math.exp(theta[i]), math.exp(theta[i + 1]))
            i += 2
            if self.order == "AR0":
                ar = ArParams.ar0()
            elif self.order == "AR1":
                ar = ArParams.ar1(_ar1_from(theta[i]))
                i += 1
            else:
                u, v = theta[i], theta[i + 1]
                d = 1.0 + abs(u) + abs(v)
                ar = ArParams.ar12(u / d, v / d)
                i += 2
            params.append((spde, ar))
        return params, math.exp(theta[i])

    def natural(self, theta) -> np.ndarray:
        """``tau, kappa2, [a, b], ..., sigma_eps2`` in the order of :meth:`names`."""
        params, s2 = self.unpack(theta)
        out = []
        for spde, ar in params:
            out += [spde.tau, spde.kappa2] + [ar.a, ar.b][: self.n_ar]
        return np.array(out + [s2])


# ---------------------------------------------------------------------------
# likelihood as a function of Psi
# ---------------------------------------------------------------------------
class InversionProblem:
    """Everything the likelihood needs except the parameters.

    Parameters
    ----------
    fields : list of FieldSpec
        Templates carrying mesh and FEM matrices; their parameters are ignored.
    A : ObservationMatrix
        Rows already restricted to the estimation sites.
    M : (n_obs,) relative variances
    resid : (n_obs,) ``y - y0``
    spec : model specification name
    """

    def __init__(self, fields, A: ObservationMatrix, M, resid, spec: str,
                 q_beta: float = DEFAULT_Q_BETA):
        self.layout = ParameterLayout(spec)
        self.fields = list(fields)
        if len(self.fields) != self.layout.n_fields:
            raise DimensionMismatch(
                f"{spec} needs {self.layout.n_fields} field(s), got {len(self.fields)}")
        if len(A.Aa) != len(self.fields):
            raise DimensionMismatch("observation matrix has a different field count")
        self.A = A
        self.M = np.asarray(M, dtype=float)
        self.resid = np.asarray(resid, dtype=float)
        self.q_beta = q_beta
        self.n_t = A.n_t
        self.p = A.Abeta.shape[1]
        if A.n_obs < self.layout.size:
            raise InputError(
                f"{A.n_obs} observations cannot identify {self.layout.size} parameters")

    def model(self, theta) -> tuple[PrecisionModel, float]:
        params, s2 = self.layout.unpack(theta)
        fields = [f.with_params(sp_, ar) for f, (sp_, ar) in zip(self.fields, params)]
        return PrecisionModel(fields, self.n_t, self.p, self.q_beta), s2

    def posterior(self, theta) -> Posterior:
        model, s2 = self.model(theta)
        return Posterior(model, self.A, self.M, s2, self.resid)

    def log_likelihood(self, theta) -> float:
        return self.posterior(theta).log_likelihood()


def log_likelihood(problem: InversionProblem, theta) -> float:
    return problem.log_likelihood(theta)


def posterior_mean(problem: InversionProblem, theta) -> np.ndarray:
    return problem.posterior(theta).mean


@dataclass
class EstimateResult:
    theta: np.ndarray
    loglik: float
    converged: bool
    n_iter: int
    n_eval: int
    history: list = field(default_factory=list)


def estimate_parameters(problem: InversionProblem, init, restarts: int = 2,
                        seed=0, maxiter: int | None = None, step: float = 0.5,
                        xatol: float = 1e-6, fatol: float = 1e-8) -> EstimateResult:
    """Maximize the likelihood with Nelder-Mead in transformed coordinates.

    The first run starts at ``init``; each of ``restarts`` further runs starts
    from the best point so far, perturbed by ``N(0, step^2 / 4)``. Evaluations
    that fail numerically count as ``-inf``. A :class:`MaxIterationsExceeded`
    warning is emitted if the last run stopped on its budget.
    """
    init = np.asarray(init, dtype=float)
    dim = problem.layout.size
    if init.shape != (dim,) or not np.all(np.isfinite(init)):
        raise InputError(f"init must be {dim} finite coordinates")
    rng = np.random.default_rng(seed)
    maxiter = maxiter or 400 * dim

    def objective(th):
        try:
            val = problem.log_likelihood(th)
        except (NumericalError, InputError, FloatingPointError):
            return np.inf
        return -val if np.isfinite(val) else np.inf

    best_x, best_f = init, objective(init)
    n_iter = n_eval = 0
    history = []
    converged = False
    for run in range(restarts + 1):
        x0 = best_x if run == 0 else best_x + 0.5 * step * rng.standard_normal(dim)
        simplex = np.vstack([x0, x0 + step * np.eye(dim)])
        res = minimize(objective, x0, method="Nelder-Mead",
                       options={"initial_simplex": simplex, "xatol": xatol,
                                "fatol": fatol, "maxiter": maxiter,
                                "maxfev": 2 * maxiter})
        n_iter += res.nit
        n_eval += res.nfev
        history.append((res.x.copy(), float(-res.fun)))
        if res.fun <= best_f:
            best_x, best_f = res.x.copy(), float(res.fun)
            converged = bool(res.success)
    if not converged:
        warnings.warn("Nelder-Mead stopped on its iteration budget",
                      MaxIterationsExceeded, stacklevel=2)
    return EstimateResult(best_x, -best_f, converged, n_iter, n_eval, history)


# ---------------------------------------------------------------------------
# posterior variance of fluxes
# ---------------------------------------------------------------------------
def rademacher(n: int, k: int, rng) -> np.ndarray:
    return rng.integers(0, 2, size=(n, k)).astype(float) * 2.0 - 1.0


def probe_products(post: Posterior, maps: IntegrationMaps, U) -> np.ndarray:
    """``U * (H Q_{z|y}^{-1} H^T U)`` column by column."""
    W = post.covariance_apply(maps.rmatvec(U))
    return U * maps.matvec(W)


def posterior_variance_diag(post: Posterior, maps: IntegrationMaps,
                            n_probes: int = 10_000, seed=0, batch: int = 256):
    """Rademacher estimate of ``diag(H Q_{z|y}^{-1} H^T)``.

    Returns
    -------
    var : (n_t * n_cells,) array, negatives clipped to zero
    n_clipped : int
        Number of entries that were negative before clipping.
    """
    if n_probes < 1:
        raise InputError("need at least one probe")
    maps.check_model(post.model)
    rng = np.random.default_rng(seed)
    n_f = maps.shape[0]
    acc = np.zeros(n_f)
    done = 0
    while done < n_probes:
        k = min(batch, n_probes - done)
        acc += probe_products(post, maps, rademacher(n_f, k, rng)).sum(axis=1)
        done += k
    est = acc / n_probes
    neg = int(np.count_nonzero(est < 0))
    return np.clip(est, 0.0, None), neg


def flux_posterior(mu_z, maps: IntegrationMaps, prior_flux=None):
    """Posterior mean flux ``L0 mu0 + H mu_z`` and the anomaly ``H mu_z``.

    Both are returned with shape ``(n_t, n_cells)`` (cell-integrated).
    """
    anomaly = maps.matvec(mu_z).reshape(maps.n_t, maps.n_cells)
    if prior_flux is None:
        prior = np.zeros_like(anomaly)
    else:
        prior = np.asarray(prior_flux, dtype=float)
        if prior.size != anomaly.size:
            raise DimensionMismatch("prior flux does not match the transport grid")
        prior = prior.reshape(anomaly.shape)
    return prior + anomaly, anomaly


def aic(loglik: float, k: int) -> float:
    return 2.0 * k - 2.0 * loglik


def bic(loglik: float, k: int, n_obs: int) -> float:
    return k * math.log(n_obs) - 2.0 * loglik
