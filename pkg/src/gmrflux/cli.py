"""Command line front-end.

Subcommands: ``mesh build``, ``simulate``, ``estimate``, ``variance``,
``score`` and ``regions``. Exit status is 0 on success, 1 on a numerical
failure and 2 on invalid input. Every output file is written to a temporary
name and renamed into place.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from .config import RunConfig, write_meta
from .errors import DimensionMismatch, GmrfluxError, InputError, NumericalError
from .experiment import Inversion, Setup, flux_rmse, simulate, simulate_from_flux
from .grid import LonLatGrid, RasterMask
from .inference import aic, bic, posterior_variance_diag
from .mesh import SphereMesh, build_mesh, fibonacci_nodes, icosphere_nodes
from .observation import ObservationSet, TransportOperator
from .scoring import regional_timeseries, score
from .synthetic import (ice_cells, land_mask, nested_grid, region_masks, regional_nodes,
                        station_network, toy_transport)

log = logging.getLogger("gmrflux")

DATA_FILES = {"mesh": "mesh.txt", "grid": "grid.txt", "obs": "obs.csv",
              "jacobian": "jacobian.bin"}


# file helpers ---------------------------------------------------------------

def atomic_write(path: Path, writer):
    """Call ``writer(tmp)`` on a temporary file next to ``path``, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_rows(path: Path, header, rows):
    def w(tmp):
        with open(tmp, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(header)
            for r in rows:
                out.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                              for v in r])
    atomic_write(path, w)


def write_flux(path: Path, density):
    """Long format ``t_index,cell,value`` with 1-based months."""
    n_t, n_c = density.shape
    rows = ((t + 1, c, float(density[t, c])) for t in range(n_t) for c in range(n_c))
    write_rows(path, ["t_index", "cell", "value"], rows)


def read_flux(path: Path, n_t: int, n_cells: int) -> np.ndarray:
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise InputError(f"{path}: malformed flux file") from exc
    if data.shape[1] != 3:
        raise InputError(f"{path}: expected columns t_index,cell,value")
    t = data[:, 0].astype(int) - 1
    c = data[:, 1].astype(int)
    if t.min() < 0 or t.max() >= n_t or c.min() < 0 or c.max() >= n_cells:
        raise DimensionMismatch(f"{path}: indices outside {n_t} months x {n_cells} cells")
    out = np.full((n_t, n_cells), np.nan)
    out[t, c] = data[:, 2]
    if np.isnan(out).any():
        raise InputError(f"{path}: missing month/cell entries")
    return out


def write_psi(path: Path, layout, labels, theta):
    names = layout.names(labels)
    nat = layout.natural(theta)
    write_rows(path, ["name", "value", "theta"],
               [(n, float(v), float(t)) for n, v, t in zip(names, nat, theta)])


def read_psi(path: Path, layout, labels) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    names = layout.names(labels)
    got = [r["name"] for r in rows]
    if got != names:
        raise DimensionMismatch(f"{path}: parameters {got} do not match {names}")
    return np.array([float(r["theta"]) for r in rows])


# inputs ---------------------------------------------------------------------

def load_mesh(cfg: RunConfig) -> SphereMesh:
    p = cfg.path("mesh", "file")
    if p is not None:
        return SphereMesh.read(p)
    spec = cfg.get("mesh", "nodes").split()
    kind, args = spec[0], spec[1:]
    try:
        if kind == "icosphere":
            return build_mesh(icosphere_nodes(int(args[0])))
        if kind == "fibonacci":
            return build_mesh(fibonacci_nodes(int(args[0])))
        if kind == "regional":
            return build_mesh(regional_nodes(tuple(float(a) for a in args[:3])))
    except (IndexError, ValueError) as exc:
        raise InputError(f"[mesh] nodes = {' '.join(spec)!r} is malformed") from exc
    raise InputError(f"unknown mesh kind {kind!r}")


def load_grid(cfg: RunConfig) -> LonLatGrid:
    p = cfg.path("grid", "file")
    if p is not None:
        return LonLatGrid.read(p)
    if cfg.has("grid", "n_lat"):
        return LonLatGrid.regular(cfg.get("grid", "n_lat", kind=int),
                                  cfg.get("grid", "n_lon", kind=int))
    if cfg.has("grid", "nested"):
        return nested_grid(tuple(cfg.floats("grid", "nested")))
    raise InputError("[grid] needs file, n_lat/n_lon or nested")


def load_land(cfg: RunConfig) -> RasterMask:
    p = cfg.path("grid", "mask_file")
    return RasterMask.read_csv(p) if p is not None else land_mask()


def load_observations(cfg: RunConfig, land: RasterMask) -> ObservationSet:
    p = cfg.path("observations", "file")
    if p is not None:
        return ObservationSet.read_csv(p)
    region = (tuple(cfg.floats("observations", "region"))
              if cfg.has("observations", "region") else None)
    return station_network(cfg.get("observations", "n_sites", kind=int), cfg.n_t,
                           seed=cfg.get("observations", "seed", 0, int),
                           n_validation=cfg.get("observations", "n_validation", 0, int),
                           coverage=cfg.get("observations", "coverage", 0.75, float),
                           gap_prob=cfg.get("observations", "gap_prob", 0.1, float),
                           land=land, region=region)


def load_transport(cfg: RunConfig, grid: LonLatGrid, obs: ObservationSet) -> TransportOperator:
    p = cfg.path("transport", "file")
    if p is not None:
        return TransportOperator.load(p)
    g = lambda k, d: cfg.get("transport", k, d, float)
    zero = ice_cells(grid) if cfg.get("transport", "zero_ice", True, bool) else None
    return toy_transport(grid, obs, cfg.n_t, cfg.get("transport", "K", 12, int),
                         enhancement=g("enhancement", 2.0), width0=g("width0", 4.0),
                         width_growth=g("width_growth", 3.0), drift=g("drift", 6.0),
                         zero_cells=zero)


def load_setup(cfg: RunConfig, data: Path | None = None):
    """Setup plus the observations, from ``data`` (a simulate output) or the config."""
    land = load_land(cfg)
    if data is not None:
        missing = [f for f in DATA_FILES.values() if not (data / f).exists()]
        if missing:
            raise InputError(f"{data} lacks {missing}")
        mesh = SphereMesh.read(data / DATA_FILES["mesh"])
        grid = LonLatGrid.read(data / DATA_FILES["grid"])
        obs = ObservationSet.read_csv(data / DATA_FILES["obs"])
        transport = TransportOperator.load(data / DATA_FILES["jacobian"])
    else:
        mesh, grid = load_mesh(cfg), load_grid(cfg)
        obs = load_observations(cfg, land)
        transport = load_transport(cfg, grid, obs)
    if transport.n_t != cfg.n_t:
        raise DimensionMismatch(f"Jacobian has {transport.n_t} months, config {cfg.n_t}")
    setup = Setup(cfg.model, mesh, grid, cfg.n_t, obs, transport, land,
                  n_sub=cfg.get("grid", "n_sub", 5, int))
    return setup, obs


def load_prior(cfg: RunConfig, setup: Setup):
    p = cfg.path("prior", "flux_file")
    if p is None:
        return None
    return read_flux(p, setup.n_t, setup.grid.n_cells) * setup.grid.cell_areas


# commands -------------------------------------------------------------------

def cmd_mesh_build(args):
    cfg = RunConfig.read(args.config)
    mesh = load_mesh(cfg)
    out = Path(args.output) if args.output else cfg.output_dir() / "mesh.txt"
    atomic_write(out, mesh.write)
    log.info("mesh with %d nodes, %d triangles -> %s", mesh.n_nodes, mesh.n_triangles, out)


def cmd_simulate(args):
    cfg = RunConfig.read(args.config)
    out = cfg.output_dir(args.output)
    seed = cfg.seed if args.seed is None else args.seed
    setup, template = load_setup(cfg)
    params = cfg.field_params()
    sigma_eps = cfg.get("truth", "sigma_eps", 1.0, float)
    noise = args.noise or cfg.get("truth", "noise", "low")
    mode = args.truth_mode or cfg.get("truth", "mode", "gaussian")
    c0 = cfg.get("truth", "c0", 0.0, float)
    areas = setup.grid.cell_areas
    if mode == "gaussian":
        prior = load_prior(cfg, setup)
        sim = simulate(setup, params, sigma_eps ** 2, noise, seed, c0, prior)
        obs, flux = sim.obs, sim.flux
    elif mode == "file":
        p = cfg.path("truth", "flux_file")
        if p is None:
            raise InputError("truth mode 'file' needs [truth] flux_file")
        flux = read_flux(p, setup.n_t, setup.grid.n_cells) * areas
        obs = simulate_from_flux(setup, flux, sigma_eps ** 2, noise, seed, c0)
    else:
        raise InputError(f"unknown truth mode {mode!r}")
    atomic_write(out / DATA_FILES["obs"], obs.write_csv)
    write_flux(out / "truth_flux.csv", flux / areas)
    write_psi(out / "truth_psi.csv", setup.layout, setup.labels,
              setup.layout.pack(params, sigma_eps ** 2))
    atomic_write(out / DATA_FILES["jacobian"], setup.transport.save)
    atomic_write(out / DATA_FILES["mesh"], setup.mesh.write)
    atomic_write(out / DATA_FILES["grid"], setup.grid.write)
    atomic_write(out / "meta.txt", lambda t: write_meta(
        Path(t), cfg, "simulate", {"truth_mode": mode, "noise": noise, "run_seed": seed}))
    log.info("simulated %d observations -> %s", obs.n_obs, out)


def _inversion(cfg, data):
    setup, obs = load_setup(cfg, data)
    if not np.all(np.isfinite(obs.value[~obs.is_validation])):
        raise InputError("observation values must be finite")
    inv = Inversion(setup, obs, cfg.get("estimate", "error_model", "classes"),
                    load_prior(cfg, setup))
    log.info("estimation uses %d of %d observations (%d validation rows held out)",
             inv.rows.size, obs.n_obs, obs.n_obs - inv.rows.size)
    return setup, obs, inv


def _variance(cfg, setup, fit, n_probes, seed):
    var, n_neg = posterior_variance_diag(fit.posterior, setup.maps, n_probes, seed)
    if n_neg:
        log.warning("%d variance estimates were negative and clipped to zero", n_neg)
    return var.reshape(setup.n_t, -1) / setup.grid.cell_areas ** 2, n_neg


def cmd_estimate(args):
    cfg = RunConfig.read(args.config)
    out = cfg.output_dir(args.output)
    data = Path(args.data) if args.data else None
    setup, obs, inv = _inversion(cfg, data)
    layout = setup.layout
    theta0 = layout.pack(cfg.field_params(), cfg.get("estimate", "sigma_eps", 1.0, float) ** 2)
    skip = args.skip_estimation or cfg.get("estimate", "skip", False, bool)
    if skip:
        fit = inv.evaluate(theta0)
    else:
        maxiter = cfg.get("estimate", "maxiter", 0, int) or None
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            fit = inv.estimate(theta0, restarts=cfg.get("estimate", "restarts", 2, int),
                               seed=cfg.seed, maxiter=maxiter,
                               xatol=cfg.get("estimate", "xatol", 1e-6, float),
                               fatol=cfg.get("estimate", "fatol", 1e-8, float))
        for w in caught:
            log.warning("%s", w.message)
    areas = setup.grid.cell_areas
    n_probes = cfg.get("estimate", "probes", 1000, int)
    var, n_neg = _variance(cfg, setup, fit, n_probes, cfg.seed)

    pred = inv.predict(fit)
    val = obs.is_validation
    k, n_fit = layout.size, inv.rows.size
    report = [("loglik", fit.loglik), ("k", k), ("n_obs", n_fit),
              ("aic", aic(fit.loglik, k)), ("bic", bic(fit.loglik, k, n_fit)),
              ("c0", fit.c0), ("converged", int(fit.estimate.converged) if fit.estimate else -1),
              ("rmse_fit", score(pred[~val], obs.value[~val]).rmse),
              ("bias_fit", score(pred[~val], obs.value[~val]).bias)]
    if val.any():
        post_v = score(pred[val], obs.value[val])
        prior_v = score(inv.y0[val], obs.value[val])
        report += [("rmse_validation", post_v.rmse), ("bias_validation", post_v.bias),
                   ("rmse_validation_prior", prior_v.rmse)]
    truth_path = data / "truth_flux.csv" if data is not None else None
    if truth_path is not None and truth_path.exists():
        truth = read_flux(truth_path, setup.n_t, setup.grid.n_cells) * areas
        report += [("rmse_flux", flux_rmse(fit.flux_mean, truth, areas)),
                   ("rmse_flux_prior", flux_rmse(inv.prior_flux, truth, areas))]
    report += [("n_probes", n_probes), ("n_variance_clipped", n_neg)]

    per_site = score(pred, obs.value, sites=obs.site).per_site
    site_val = {s: bool(v) for s, v in zip(obs.site, obs.is_validation)}
    write_psi(out / "psi.csv", layout, setup.labels, fit.theta)
    write_flux(out / "flux_mean.csv", fit.flux_mean / areas)
    write_flux(out / "anomaly.csv", fit.anomaly / areas)
    write_flux(out / "flux_var.csv", var)
    write_rows(out / "report.csv", ["metric", "value"],
               [(m, float(v) if isinstance(v, float) else v) for m, v in report])
    write_rows(out / "sites.csv", ["site", "is_validation", "bias", "rmse", "count"],
               [(s, int(site_val[s]), b, r, n) for s, (b, r, n) in per_site.items()])
    write_rows(out / "predicted.csv", ["row", "site", "t_index", "observed", "predicted"],
               [(i, obs.site[i], int(obs.t_index[i]), float(obs.value[i]), float(pred[i]))
                for i in range(obs.n_obs)])
    atomic_write(out / "meta.txt", lambda t: write_meta(
        Path(t), cfg, "estimate", {"n_estimation_rows": n_fit}))
    log.info("loglik %.6f, AIC %.3f -> %s", fit.loglik, aic(fit.loglik, k), out)


def cmd_variance(args):
    cfg = RunConfig.read(args.config)
    data = Path(args.data) if args.data else None
    setup, _, inv = _inversion(cfg, data)
    theta = read_psi(Path(args.psi), setup.layout, setup.labels)
    fit = inv.evaluate(theta)
    n_probes = args.probes or cfg.get("estimate", "probes", 1000, int)
    var, _ = _variance(cfg, setup, fit, n_probes, cfg.seed)
    out = Path(args.output) if args.output else cfg.output_dir() / "flux_var.csv"
    write_flux(out, var)


def _read_values(path: Path, column: str) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if column not in (reader.fieldnames or ()):
            raise InputError(f"{path}: no column {column!r}")
        return np.array([float(r[column]) for r in reader])


def cmd_score(args):
    p = _read_values(Path(args.predicted), args.predicted_column)
    o = _read_values(Path(args.observed), args.observed_column)
    rep = score(p, o)
    rows = [("rmse", rep.rmse), ("bias", rep.bias), ("n", p.size)]
    if args.output:
        write_rows(Path(args.output), ["metric", "value"], rows)
    else:
        for m, v in rows:
            print(f"{m},{v!r}")


def read_regions(path: Path, n_cells: int):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"cell", "region"}:
        raise InputError(f"{path}: expected columns cell,region")
    names = sorted({r["region"] for r in rows})
    masks = np.zeros((len(names), n_cells), dtype=bool)
    for r in rows:
        c = int(r["cell"])
        if not 0 <= c < n_cells:
            raise DimensionMismatch(f"{path}: cell {c} outside the grid")
        masks[names.index(r["region"]), c] = True
    return names, masks


def cmd_regions(args):
    grid = LonLatGrid.read(args.grid)
    n_t = int(args.n_t)
    density = read_flux(Path(args.flux), n_t, grid.n_cells)
    if args.regions:
        names, masks = read_regions(Path(args.regions), grid.n_cells)
    else:
        names, masks = region_masks(grid)
    series = regional_timeseries(density, grid.cell_areas, masks, args.deseasonalize)
    write_rows(Path(args.output), ["t_index"] + list(names),
               [[t + 1] + [float(v) for v in series[t]] for t in range(n_t)])


# entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gmrflux", description=__doc__.splitlines()[0])
    ap.add_argument("--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    mesh = sub.add_parser("mesh", help="mesh utilities")
    msub = mesh.add_subparsers(dest="action", required=True)
    mb = msub.add_parser("build", help="build the mesh described in [mesh]")
    mb.add_argument("--config", required=True)
    mb.add_argument("--output")
    mb.set_defaults(func=cmd_mesh_build)

    s = sub.add_parser("simulate", help="write pseudo-data from a known truth")
    s.add_argument("--config", required=True)
    s.add_argument("--output")
    s.add_argument("--seed", type=int)
    s.add_argument("--noise", choices=["low", "high", "none"])
    s.add_argument("--truth-mode", choices=["gaussian", "file"])
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", help="fit parameters and write posterior fields")
    e.add_argument("--config", required=True)
    e.add_argument("--data", help="directory written by simulate")
    e.add_argument("--output")
    e.add_argument("--skip-estimation", action="store_true",
                   help="evaluate at the configured parameters")
    e.set_defaults(func=cmd_estimate)

    v = sub.add_parser("variance", help="probe the posterior flux variance")
    v.add_argument("--config", required=True)
    v.add_argument("--psi", required=True)
    v.add_argument("--data")
    v.add_argument("--probes", type=int)
    v.add_argument("--output")
    v.set_defaults(func=cmd_variance)

    sc = sub.add_parser("score", help="RMSE and bias of two aligned CSV columns")
    sc.add_argument("--predicted", required=True)
    sc.add_argument("--observed", required=True)
    sc.add_argument("--predicted-column", default="value")
    sc.add_argument("--observed-column", default="value")
    sc.add_argument("--output")
    sc.set_defaults(func=cmd_score)

    r = sub.add_parser("regions", help="area-integrated regional series")
    r.add_argument("--flux", required=True)
    r.add_argument("--grid", required=True)
    r.add_argument("--n-t", required=True, type=int)
    r.add_argument("--regions")
    r.add_argument("--deseasonalize", action="store_true")
    r.add_argument("--output", required=True)
    r.set_defaults(func=cmd_regions)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except InputError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 2
    except NumericalError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 1
    except OSError as exc:
        log.error("%s", exc)
        return 2
    except GmrfluxError as exc:
        log.error("%s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
