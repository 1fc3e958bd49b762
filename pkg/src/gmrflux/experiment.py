"""Glue between the building blocks: set up, simulate, fit and evaluate.

Both the command line front-end and the end-to-end tests go through these
functions so there is a single code path from configuration to results.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, InputError
from .grid import LonLatGrid, RasterMask
from .inference import (EstimateResult, InversionProblem, ParameterLayout, Posterior,
                        estimate_parameters, flux_posterior)
from .integration import IntegrationMaps, assemble_H, basis_integration_matrix
from .latent import DEFAULT_Q_BETA, FieldSpec, PrecisionModel
from .mesh import SphereMesh, fem_matrices
from .observation import (LOW_NOISE_STD, ObservationMatrix, ObservationSet,
                          TransportOperator, build_error_matrix, estimate_c0,
                          simulate_observations)
from .spde import SpdeParams
from .temporal import ArParams


@dataclass(eq=False)
class Setup:
    """Geometry and operators shared by simulation and estimation.

    Parameters
    ----------
    spec : model specification (S0 ... B12)
    mesh : mesh carrying every field
    grid : transport grid
    n_t : number of months
    obs : observation rows (values may be placeholders)
    transport : Jacobian for ``obs``
    land : land mask, required for two-field models
    n_sub : quadrature sub-points per cell edge
    """

    spec: str
    mesh: SphereMesh
    grid: LonLatGrid
    n_t: int
    obs: ObservationSet
    transport: TransportOperator
    land: RasterMask | None = None
    n_sub: int = 5
    q_beta: float = DEFAULT_Q_BETA
    layout: ParameterLayout = field(init=False)
    labels: list = field(init=False)
    maps: IntegrationMaps = field(init=False)
    templates: list = field(init=False)

    def __post_init__(self):
        self.layout = ParameterLayout(self.spec)
        if self.transport.n_obs != self.obs.n_obs or self.transport.n_t != self.n_t:
            raise DimensionMismatch("Jacobian does not match observations or n_t")
        if self.transport.n_cells != self.grid.n_cells:
            raise DimensionMismatch("Jacobian does not match the transport grid")
        if self.layout.n_fields == 1:
            self.labels = ["single"]
            G = [basis_integration_matrix(self.mesh, self.grid, self.n_sub)]
        else:
            if self.land is None:
                raise DimensionMismatch(f"{self.spec} needs a land/ocean mask")
            self.labels = ["land", "ocean"]
            G = [basis_integration_matrix(self.mesh, self.grid, self.n_sub,
                                          self.land, value)
                 for value in (True, False)]
        self.maps = assemble_H(G, self.n_t)
        # placeholder parameters; only mesh and FEM matrices are used
        fem = fem_matrices(self.mesh)
        self.templates = [FieldSpec(self.mesh, SpdeParams(1.0, 1.0), ArParams.ar0(),
                                    lab, fem) for lab in self.labels]

    def model(self, params) -> PrecisionModel:
        fields = [t.with_params(s, a) for t, (s, a) in zip(self.templates, params)]
        return PrecisionModel(fields, self.n_t, 0, self.q_beta)

    def relative_variances(self, obs: ObservationSet, error_model: str) -> np.ndarray:
        """``M`` for ``error_model`` in ``{"low", "classes"}``."""
        if error_model == "low":
            return np.full(obs.n_obs, LOW_NOISE_STD ** 2)
        if error_model == "classes":
            return build_error_matrix(obs).M
        raise InputError(f"unknown error model {error_model!r}")


@dataclass
class Simulation:
    obs: ObservationSet
    z: np.ndarray
    flux: np.ndarray          # (n_t, n_cells) cell-integrated truth, prior included
    anomaly: np.ndarray       # H z


def simulate(setup: Setup, params, sigma_eps2: float = 1.0, noise: str = "low",
             seed: int = 0, c0: float = 0.0, prior_flux=None) -> Simulation:
    """Draw a latent field from the prior and observations from it.

    ``seed`` seeds the latent draw; ``seed + 1`` seeds the observation noise.
    """
    model = setup.model(params)
    z = model.sample(seed)
    anomaly = setup.maps.matvec(z).reshape(setup.n_t, -1)
    prior = 0.0 if prior_flux is None else np.asarray(prior_flux, dtype=float)
    flux = prior + anomaly
    obs = simulate_observations(flux, setup.transport, setup.obs, noise, c0,
                                seed + 1, float(np.sqrt(sigma_eps2)))
    return Simulation(obs, z, flux, anomaly)


def simulate_from_flux(setup: Setup, flux, sigma_eps2: float = 1.0, noise: str = "low",
                       seed: int = 0, c0: float = 0.0) -> ObservationSet:
    """Observations for a given cell-integrated flux array."""
    flux = np.asarray(flux, dtype=float).reshape(setup.n_t, setup.grid.n_cells)
    return simulate_observations(flux, setup.transport, setup.obs, noise, c0,
                                 seed + 1, float(np.sqrt(sigma_eps2)))


@dataclass
class Fit:
    theta: np.ndarray
    loglik: float
    c0: float
    posterior: Posterior
    flux_mean: np.ndarray     # (n_t, n_cells) cell-integrated
    anomaly: np.ndarray
    estimate: EstimateResult | None
    rows: np.ndarray          # estimation rows in the observation set
    y0: np.ndarray            # prior prediction c0 + J L0 mu0 for every row


class Inversion:
    """Estimation inputs for one observation set.

    Validation sites are excluded from the likelihood but kept for scoring.
    """

    def __init__(self, setup: Setup, obs: ObservationSet, error_model: str = "classes",
                 prior_flux=None):
        self.setup = setup
        self.obs = obs
        if prior_flux is None:
            self.prior_flux = np.zeros((setup.n_t, setup.grid.n_cells))
        else:
            self.prior_flux = np.asarray(prior_flux, dtype=float).reshape(
                setup.n_t, setup.grid.n_cells)
        prior_resp = setup.transport.apply(self.prior_flux)
        self.c0 = estimate_c0(obs, prior_resp)
        self.y0 = self.c0 + prior_resp
        self.rows = np.flatnonzero(~obs.is_validation)
        A_all = ObservationMatrix(setup.transport, setup.maps)
        self.A_all = A_all
        self.A = A_all.subset(self.rows)
        M = setup.relative_variances(obs, error_model)
        self.problem = InversionProblem(setup.templates, self.A, M[self.rows],
                                        (obs.value - self.y0)[self.rows], setup.spec,
                                        setup.q_beta)

    def evaluate(self, theta, estimate: EstimateResult | None = None) -> Fit:
        post = self.problem.posterior(theta)
        mean, anomaly = flux_posterior(post.mean, self.setup.maps, self.prior_flux)
        return Fit(np.asarray(theta), post.log_likelihood(), self.c0, post, mean,
                   anomaly, estimate, self.rows, self.y0)

    def estimate(self, init, **kwargs) -> Fit:
        res = estimate_parameters(self.problem, init, **kwargs)
        return self.evaluate(res.theta, res)

    def predict(self, fit: Fit) -> np.ndarray:
        """Posterior mean concentrations at every observation row."""
        return self.y0 + self.A_all.apply(fit.posterior.mean)


def flux_rmse(flux, truth, areas) -> float:
    """RMSE of flux densities over all cells and months."""
    d = (np.asarray(flux) - np.asarray(truth)) / np.asarray(areas)
    return float(np.sqrt(np.mean(d * d)))


def regional_study_setup(spec: str = "S12", n_t: int = 48, n_sites: int = 30,
                         seed: int = 3, region=(45.0, 10.0, 28.0),
                         station_radius: float = 12.0, box=(20, 70, -30, 50),
                         K: int = 12, enhancement: float = 6.0, width0: float = 1.0,
                         width_growth: float = 1.0, drift: float = 4.0,
                         gap_prob: float = 0.1, coverage: float = 0.75,
                         n_validation: int = 0, land: RasterMask | None = None) -> Setup:
    """Desk-scale study design around a densely observed region.

    The mesh is fine (icosphere level 4) inside the cap ``region`` and coarse
    elsewhere, the transport grid is 2.5 degrees inside ``box``, and the
    stations sit within ``station_radius`` degrees of the region centre.
    """
    from .mesh import build_mesh
    from .synthetic import (ice_cells, land_mask, nested_grid, regional_nodes,
                            station_network, toy_transport)

    land = land or land_mask()
    mesh = build_mesh(regional_nodes(region))
    grid = nested_grid(box)
    obs = station_network(n_sites, n_t, seed=seed, n_validation=n_validation,
                          coverage=coverage, gap_prob=gap_prob, land=land,
                          region=(region[0], region[1], station_radius))
    transport = toy_transport(grid, obs, n_t, K, enhancement=enhancement, width0=width0,
                              width_growth=width_growth, drift=drift,
                              zero_cells=ice_cells(grid))
    return Setup(spec, mesh, grid, n_t, obs, transport, land)
