"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""

import hashlib
import shutil
import time
import warnings
from pathlib import Path

import numpy as np
import pytest
from oracles import dense_loglik, dense_parts, dense_posterior, random_instance, relative_error
from scipy.linalg import toeplitz
from test_inference import problem_from

from gmrflux import cli
from gmrflux.errors import NonStationary
from gmrflux.experiment import (Inversion, Setup, flux_rmse, regional_study_setup, simulate)
from gmrflux.grid import LonLatGrid, great_circle
from gmrflux.inference import aic, posterior_variance_diag, probe_products, rademacher
from gmrflux.integration import basis_integration_matrix, overlap_matrix
from gmrflux.mesh import build_mesh, fem_matrices, icosphere_nodes
from gmrflux.observation import TransportOperator
from gmrflux.spde import SpdeParams, build_Qs, marginal_spatial_std, spatial_range
from gmrflux.synthetic import ice_cells, land_mask, station_network, toy_transport
from gmrflux.temporal import ArParams, build_Qt, marginal_std, temporal_range, yule_walker_covariance

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def verdict(capsys):
    """Print one PASS/FAIL line outside pytest's capture, then assert."""
    def emit(n, ok, detail, start):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} {detail} "
                  f"[{time.perf_counter() - start:.1f} s]")
        assert ok, detail
    return emit


def test_1_closed_form_translations(verdict):
    t0 = time.perf_counter()
    checks = [
        ("sd_space(1.31, 3.72)", marginal_spatial_std(SpdeParams.from_kappa(1.31, 3.72)),
         0.0579, 1e-3),
        ("range(3.72)", spatial_range(SpdeParams.from_kappa(1.0, 3.72)), 0.760, 1e-3),
        ("range(23.9)", spatial_range(SpdeParams.from_kappa(1.0, 23.9)), 0.118, 1e-3),
        ("t_range(0.782)", temporal_range(ArParams.ar1(0.782)), 9.36, 0.01),
        ("sd(0.265, 11.6, AR1)", marginal_std(SpdeParams.from_kappa(0.265, 11.6),
                                              ArParams.ar1(0.782)), 0.147, 2e-3),
        ("sd(0.285, 15.5, AR12)", marginal_std(SpdeParams.from_kappa(0.285, 15.5),
                                               ArParams.ar12(0.269, 0.723)), 0.206, 2e-3),
    ]
    bad = [f"{name}={got:.5g}" for name, got, want, tol in checks if abs(got - want) > tol]
    elapsed = time.perf_counter() - t0
    detail = ", ".join(f"{n}={g:.4g}" for n, g, _, _ in checks)
    verdict(1, not bad and elapsed < 1.0, detail if not bad else "off: " + ", ".join(bad), t0)


def test_2_woodbury_equivalence(verdict):
    t0 = time.perf_counter()
    worst_ll = worst_mu = worst_det = 0.0
    specs = set()
    for seed in range(20):
        inst = random_instance(seed)
        layout = inst.problem.layout
        specs.add((layout.n_fields, layout.n_ar))
        post = inst.problem.posterior(inst.theta)
        ll = post.log_likelihood()
        ref = dense_loglik(inst)
        worst_ll = max(worst_ll, abs(ll - ref) / abs(ref))
        Qz, qe, _, _ = dense_parts(inst)
        Qpost, mu = dense_posterior(inst)
        worst_mu = max(worst_mu, relative_error(post.mean, mu))
        lhs = np.linalg.slogdet(Qz)[1] + np.sum(np.log(qe)) - np.linalg.slogdet(Qpost)[1]
        worst_det = max(worst_det, abs(lhs + post.logdet_sigma()) / max(1.0, abs(lhs)))
    coverage = {n for n, _ in specs} == {1, 2} and {p for _, p in specs} == {0, 1, 2}
    ok = coverage and max(worst_ll, worst_mu, worst_det) < 1e-8
    verdict(2, ok, f"max rel err loglik {worst_ll:.1e}, mean {worst_mu:.1e}, "
                   f"logdet {worst_det:.1e}; model mix {sorted(specs)}", t0)


def test_3_temporal_duality(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    n_t, worst, pairs = 120, 0.0, []
    while len(pairs) < 10:
        a, b = rng.uniform(-0.95, 0.95, 2)
        try:
            par = ArParams.ar12(a, b)
        except NonStationary:
            continue
        pairs.append((a, b))
        cov = np.linalg.inv(build_Qt(par, n_t).toarray())
        r = yule_walker_covariance(par, max_lag=n_t - 1)
        inner = slice(12, n_t - 12)
        err = np.abs(cov[inner, inner] - toeplitz(r)[inner, inner]).max() / r[0]
        worst = max(worst, err)
    verdict(3, worst < 1e-6, f"max interior error / variance {worst:.1e} over 10 pairs", t0)


def test_4_matern_fidelity(verdict):
    t0 = time.perf_counter()
    mesh = build_mesh(icosphere_nodes(4))
    fem = fem_matrices(mesh)
    out = []
    for kappa in (6.0, 8.0, 12.0):
        p = SpdeParams.from_kappa(1.0, kappa)
        S = np.linalg.inv(build_Qs(fem, p).toarray())
        sd = np.sqrt(np.diag(S))
        rho = spatial_range(p)
        vals = []
        for j in (0, 100, 500, 1000, 2000):
            d = great_circle(mesh.nodes, mesh.nodes[j])
            corr = S[:, j] / (sd * sd[j])
            vals.append(corr[np.abs(d - rho) < 0.0375].mean())
        out.append((kappa, min(vals), max(vals)))
    ok = mesh.n_nodes >= 2562 and all(0.05 <= lo and hi <= 0.15 for _, lo, hi in out)
    verdict(4, ok, f"{mesh.n_nodes} nodes; correlation at range " +
            ", ".join(f"kappa {k:g}: [{lo:.3f}, {hi:.3f}]" for k, lo, hi in out), t0)


def test_5_integration_conservation(verdict):
    t0 = time.perf_counter()
    mesh = build_mesh(icosphere_nodes(2))
    grid = LonLatGrid.regular(18, 36)
    G = basis_integration_matrix(mesh, grid, 5)
    rows = np.asarray(G.sum(axis=1)).ravel()
    e_rows = np.abs(rows / grid.cell_areas - 1).max()
    land = land_mask()
    Gl = basis_integration_matrix(mesh, grid, 5, land, True)
    Go = basis_integration_matrix(mesh, grid, 5, land, False)
    both = np.asarray((Gl + Go).sum(axis=1)).ravel()
    e_mask = np.abs(both / grid.cell_areas - 1).max()
    W = overlap_matrix(LonLatGrid.regular(10, 20), LonLatGrid.regular(15, 30))
    e_total = abs(W.sum() / (4 * np.pi) - 1)
    ok = e_rows < 1e-6 and e_mask < 1e-6 and e_total < 1e-8
    verdict(5, ok, f"row sums {e_rows:.1e}, land+ocean {e_mask:.1e}, overlap total "
                   f"{e_total:.1e} (relative)", t0)


def test_6_variance_probing(verdict):
    t0 = time.perf_counter()
    mesh = build_mesh(icosphere_nodes(1))
    grid = LonLatGrid.regular(3, 6)
    rng = np.random.default_rng(3)
    n_t, n_obs = 6, 30
    tr = TransportOperator(rng.random((n_obs, 2, grid.n_cells)),
                           rng.random((n_obs, grid.n_cells)), rng.integers(0, n_t, n_obs), n_t)
    problem, maps = problem_from(mesh, grid, n_t, tr, "S1", np.full(n_obs, 1.09),
                                 rng.normal(size=n_obs))
    post = problem.posterior(np.array([0.0, np.log(100.0), 1.0, 0.0]))
    H = maps.to_sparse().toarray()
    Ad = problem.A.dense()
    C = H @ np.linalg.inv(post.model.Q_sparse.toarray() + Ad.T @ Ad / 1.09) @ H.T
    ref = np.diag(C)
    est, _ = posterior_variance_diag(post, maps, 10_000, seed=0)
    frac = np.mean(np.abs(est - ref) <= 0.05 * ref)
    n = 100_000
    total = np.zeros(ref.size)
    probe_rng = np.random.default_rng(11)
    for _ in range(n // 2000):
        total += probe_products(post, maps, rademacher(ref.size, 2000, probe_rng)).sum(axis=1)
    se = np.sqrt((np.sum(C ** 2, axis=1) - ref ** 2) / n)
    z = np.abs(total / n - ref) / se
    ok = post.model.n <= 300 and frac >= 0.95 and z.max() <= 3
    verdict(6, ok, f"n = {post.model.n}; {100 * frac:.1f}% of entries within 5%; "
                   f"single-probe mean max |z| = {z.max():.2f}", t0)


def test_7_simulation_study(verdict):
    t0 = time.perf_counter()
    st = regional_study_setup()
    truth = [(SpdeParams.from_kappa(0.447, 23.9), ArParams.ar12(0.555, 0.326))]
    th_true = st.layout.pack(truth, 1.0)
    init = th_true + np.array([0.3, -0.3, 0.3, -0.3, 0.3])
    areas = st.grid.cell_areas
    res = {}
    for noise, model in (("low", "low"), ("high", "classes")):
        sim = simulate(st, truth, 1.0, noise, seed=11, c0=350.0)
        inv = Inversion(st, sim.obs, model)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit = inv.estimate(init, restarts=0)
        nat = st.layout.natural(fit.theta)
        res[noise] = dict(kappa=np.sqrt(nat[1]), sigma=np.sqrt(nat[4]),
                          rmse=flux_rmse(fit.flux_mean, sim.flux, areas),
                          rmse_true=flux_rmse(inv.evaluate(th_true).flux_mean, sim.flux, areas))
    low, high = res["low"], res["high"]
    checks = {
        "kappa": abs(low["kappa"] / 23.9 - 1) <= 0.15,
        "sigma_eps": abs(low["sigma"] - 1) <= 0.10,
        "rmse": low["rmse"] <= 1.05 * low["rmse_true"],
        "ordering": high["rmse"] >= low["rmse"],
    }
    failed = [k for k, v in checks.items() if not v]
    verdict(7, not failed,
            f"{st.mesh.n_nodes} nodes, {st.obs.n_obs} obs; kappa {low['kappa']:.2f} "
            f"({100 * (low['kappa'] / 23.9 - 1):+.1f}%), sigma_eps {low['sigma']:.4f} "
            f"({100 * (low['sigma'] - 1):+.1f}%), flux RMSE {low['rmse']:.6f} vs "
            f"{low['rmse_true']:.6f} at truth, high noise {high['rmse']:.6f}"
            + (f"; failed: {', '.join(failed)}" if failed else ""), t0)


def test_8_model_selection(verdict):
    t0 = time.perf_counter()
    n_t = 26
    land = land_mask()
    mesh = build_mesh(icosphere_nodes(1))
    grid = LonLatGrid.regular(18, 36)
    obs = station_network(15, n_t, seed=5, land=land)
    tr = toy_transport(grid, obs, n_t, 6, zero_cells=ice_cells(grid))
    sb = Setup("B12", mesh, grid, n_t, obs, tr, land)
    s0 = Setup("B0", mesh, grid, n_t, obs, tr, land)
    truth = [(SpdeParams.from_kappa(0.0239, 36.7), ArParams.ar12(0.149, 0.832)),
             (SpdeParams.from_kappa(1.19, 13.3), ArParams.ar12(0.121, 0.870))]
    s2 = 0.897 ** 2
    th_b = sb.layout.pack(truth, s2)
    th_0 = s0.layout.pack([(s, ArParams.ar0()) for s, _ in truth], s2)
    wins = 0
    for rep in range(10):
        sim = simulate(sb, truth, s2, "high", seed=100 + 2 * rep)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fb = Inversion(sb, sim.obs, "classes").estimate(th_b, restarts=0, xatol=1e-2,
                                                             fatol=1e-2)
            f0 = Inversion(s0, sim.obs, "classes").estimate(th_0, restarts=0, xatol=1e-2,
                                                             fatol=1e-2)
        wins += aic(fb.loglik, sb.layout.size) < aic(f0.loglik, s0.layout.size)
    verdict(8, wins >= 8, f"AIC(B12) < AIC(B0) in {wins}/10 repetitions "
                          f"({obs.n_obs} obs)", t0)


def test_9_end_to_end_determinism(verdict, tmp_path):
    t0 = time.perf_counter()
    cfg = tmp_path / "small.ini"
    shutil.copy(CONFIGS / "small.ini", cfg)
    digests = []
    for run in ("a", "b"):
        data, est = tmp_path / run / "data", tmp_path / run / "est"
        assert cli.main(["simulate", "--config", str(cfg), "--output", str(data)]) == 0
        assert cli.main(["estimate", "--config", str(cfg), "--data", str(data),
                         "--output", str(est)]) == 0
        digests.append({str(p.relative_to(tmp_path / run)):
                        hashlib.sha256(p.read_bytes()).hexdigest()
                        for p in sorted((tmp_path / run).rglob("*")) if p.is_file()})
    same = digests[0] == digests[1]
    verdict(9, same and len(digests[0]) >= 15,
            f"{len(digests[0])} output files {'identical' if same else 'differ'}", t0)

