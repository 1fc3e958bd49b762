import csv
import hashlib
import logging
import shutil
from pathlib import Path

import numpy as np
import pytest

from gmrflux import cli
from gmrflux.config import RunConfig
from gmrflux.errors import CholeskyFailure, DimensionMismatch, InputError
from gmrflux.grid import LonLatGrid
from gmrflux.mesh import SphereMesh
from gmrflux.observation import ObservationSet

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

TINY = """
[run]
model = {model}
seed = 3
n_t = 12
output = out

[mesh]
nodes = icosphere 1

[grid]
n_lat = 9
n_lon = 18
n_sub = 3

[observations]
n_sites = 8
region = 45 10 25
n_validation = 1
seed = 2

[transport]
K = 3

{fields}

[truth]
mode = gaussian
noise = high
c0 = 350
{truth_extra}

[estimate]
restarts = 0
maxiter = 40
probes = 20
"""

SINGLE = "[field.single]\ntau = 1.0\nkappa = 3.0\na = 0.6\n"
TWO = ("[field.land]\ntau = 1.0\nkappa = 3.0\na = 0.5\nb = 0.3\n"
       "[field.ocean]\ntau = 1.0\nkappa = 3.0\na = 0.5\nb = 0.3\n")


def write_config(tmp_path, model="S1", fields=SINGLE, truth_extra="", name="run.ini"):
    p = tmp_path / name
    p.write_text(TINY.format(model=model, fields=fields, truth_extra=truth_extra))
    return p


def read_table(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def report(path):
    return {r["metric"]: float(r["value"]) for r in read_table(path / "report.csv")}


def digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    """The shipped demo configuration, simulated and estimated once."""
    root = tmp_path_factory.mktemp("small")
    cfg = root / "small.ini"
    shutil.copy(CONFIGS / "small.ini", cfg)
    data, est = root / "data", root / "est"
    assert cli.main(["simulate", "--config", str(cfg), "--output", str(data)]) == 0
    assert cli.main(["estimate", "--config", str(cfg), "--data", str(data),
                     "--output", str(est)]) == 0
    return cfg, data, est


def test_simulate_writes_expected_files(small_run):
    _, data, _ = small_run
    for name in ("obs.csv", "truth_flux.csv", "truth_psi.csv", "jacobian.bin", "mesh.txt",
                 "grid.txt", "meta.txt"):
        assert (data / name).is_file()
    psi = {r["name"]: float(r["value"]) for r in read_table(data / "truth_psi.csv")}
    assert psi["single.tau"] == 1.31
    assert psi["single.kappa2"] == pytest.approx(3.72 ** 2, rel=1e-12)
    meta = (data / "meta.txt").read_text()
    assert "config_sha256" in meta and "numpy" in meta
    assert not list(data.glob(".*"))


def test_estimate_writes_expected_files(small_run):
    _, _, est = small_run
    for name in ("psi.csv", "flux_mean.csv", "anomaly.csv", "flux_var.csv", "report.csv",
                 "sites.csv", "predicted.csv", "meta.txt"):
        assert (est / name).is_file()
    var = np.array([float(r["value"]) for r in read_table(est / "flux_var.csv")])
    assert np.all(var >= 0)


def test_report_recomputable_from_outputs(small_run):
    _, data, est = small_run
    rep = report(est)
    obs = ObservationSet.read_csv(data / "obs.csv")
    pred = read_table(est / "predicted.csv")
    p = np.array([float(r["predicted"]) for r in pred])
    o = np.array([float(r["observed"]) for r in pred])
    np.testing.assert_array_equal(o, obs.value)
    val = obs.is_validation
    d = p[val] - o[val]
    assert rep["rmse_validation"] == pytest.approx(np.sqrt(np.mean(d * d)), rel=1e-13)
    assert rep["bias_validation"] == pytest.approx(np.mean(d), rel=1e-13)
    d = p[~val] - o[~val]
    assert rep["rmse_fit"] == pytest.approx(np.sqrt(np.mean(d * d)), rel=1e-13)
    assert rep["n_obs"] == (~val).sum()
    assert rep["aic"] == pytest.approx(2 * rep["k"] - 2 * rep["loglik"], rel=1e-14)
    assert rep["bic"] == pytest.approx(rep["k"] * np.log(rep["n_obs"]) - 2 * rep["loglik"],
                                       rel=1e-14)


def test_posterior_beats_prior_at_validation_sites(small_run):
    _, _, est = small_run
    rep = report(est)
    assert rep["rmse_validation"] < rep["rmse_validation_prior"]
    assert rep["rmse_flux"] < rep["rmse_flux_prior"]


def test_estimate_is_deterministic(small_run, tmp_path):
    cfg, data, est = small_run
    again = tmp_path / "again"
    assert cli.main(["simulate", "--config", str(cfg), "--output", str(tmp_path / "d2")]) == 0
    for name in ("obs.csv", "truth_flux.csv", "jacobian.bin", "meta.txt"):
        assert digest(tmp_path / "d2" / name) == digest(data / name)
    assert cli.main(["estimate", "--config", str(cfg), "--data", str(data),
                     "--output", str(again)]) == 0
    for name in ("psi.csv", "flux_mean.csv", "flux_var.csv", "report.csv", "meta.txt"):
        assert digest(again / name) == digest(est / name)


def test_variance_command_reproduces_estimate(small_run, tmp_path):
    cfg, data, est = small_run
    out = tmp_path / "var.csv"
    assert cli.main(["variance", "--config", str(cfg), "--data", str(data), "--psi",
                     str(est / "psi.csv"), "--output", str(out)]) == 0
    assert digest(out) == digest(est / "flux_var.csv")


def test_validation_isolation(small_run, tmp_path, caplog):
    cfg, data, _ = small_run
    copy = tmp_path / "data"
    shutil.copytree(data, copy)
    before = digest(copy / "obs.csv")
    rows = read_table(copy / "obs.csv")
    site = next(r["site"] for r in rows if r["is_validation"] == "0")
    n_site = sum(r["site"] == site for r in rows)
    for r in rows:
        if r["site"] == site:
            r["is_validation"] = "1"
    toggled = tmp_path / "toggled"
    shutil.copytree(data, toggled)
    with open(toggled / "obs.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)

    def used(d):
        caplog.clear()
        with caplog.at_level(logging.INFO, logger="gmrflux"):
            assert cli.main(["estimate", "--config", str(cfg), "--data", str(d),
                             "--output", str(tmp_path / "o"), "--skip-estimation"]) == 0
        msg = next(r.getMessage() for r in caplog.records
                   if r.getMessage().startswith("estimation uses"))
        return int(msg.split()[2])

    n0, n1 = used(copy), used(toggled)
    assert n0 - n1 == n_site
    assert digest(copy / "obs.csv") == before


def test_two_field_model_needs_two_field_sections(tmp_path, caplog):
    cfg = write_config(tmp_path, model="B12", fields=SINGLE)
    with caplog.at_level(logging.ERROR, logger="gmrflux"):
        assert cli.main(["simulate", "--config", str(cfg)]) == 2
    assert "DimensionMismatch" in caplog.text


def test_two_field_run(tmp_path):
    cfg = write_config(tmp_path, model="B12", fields=TWO)
    assert cli.main(["simulate", "--config", str(cfg)]) == 0
    assert cli.main(["estimate", "--config", str(cfg), "--data", str(tmp_path / "out"),
                     "--skip-estimation"]) == 0
    names = [r["name"] for r in read_table(tmp_path / "out" / "psi.csv")]
    assert names[0] == "land.tau" and names[4] == "ocean.tau" and names[-1] == "sigma_eps2"


def test_zero_flux_file_truth(tmp_path):
    flux = tmp_path / "zero.csv"
    cli.write_flux(flux, np.zeros((12, 9 * 18)))
    cfg = write_config(tmp_path, truth_extra="flux_file = zero.csv")
    assert cli.main(["simulate", "--config", str(cfg), "--truth-mode", "file",
                     "--noise", "none"]) == 0
    obs = ObservationSet.read_csv(tmp_path / "out" / "obs.csv")
    np.testing.assert_array_equal(obs.value, 350.0)
    assert cli.main(["simulate", "--config", str(cfg), "--truth-mode", "file",
                     "--noise", "low", "--output", str(tmp_path / "noisy")]) == 0
    noisy = ObservationSet.read_csv(tmp_path / "noisy" / "obs.csv")
    assert 0 < np.std(noisy.value - 350.0) < 0.2


def test_file_truth_requires_flux_file(tmp_path):
    cfg = write_config(tmp_path)
    assert cli.main(["simulate", "--config", str(cfg), "--truth-mode", "file"]) == 2


def test_input_errors_exit_2(tmp_path):
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.ini")]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text(TINY.format(model="S7", fields=SINGLE, truth_extra=""))
    assert cli.main(["simulate", "--config", str(bad)]) == 2
    garbled = tmp_path / "garbled.ini"
    garbled.write_text("[run\nmodel = S1\n")
    assert cli.main(["mesh", "build", "--config", str(garbled)]) == 2
    cfg = write_config(tmp_path)
    data = tmp_path / "data"
    data.mkdir()
    (data / "obs.csv").write_text("site,lat\nA,1\n")
    assert cli.main(["estimate", "--config", str(cfg), "--data", str(data)]) == 2


def test_numerical_failure_exits_1(tmp_path, monkeypatch):
    def boom(args):
        raise CholeskyFailure("not positive definite")

    monkeypatch.setattr(cli, "cmd_score", boom)
    a = tmp_path / "a.csv"
    a.write_text("value\n1\n")
    assert cli.main(["score", "--predicted", str(a), "--observed", str(a)]) == 1


def test_mesh_build(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "m.txt"
    assert cli.main(["mesh", "build", "--config", str(cfg), "--output", str(out)]) == 0
    mesh = SphereMesh.read(out)
    assert mesh.n_nodes == 42 and mesh.n_triangles == 80


def test_score_command(tmp_path, capsys):
    p, o = tmp_path / "p.csv", tmp_path / "o.csv"
    p.write_text("x\n2.0\n3.0\n4.0\n")
    o.write_text("value\n1.0\n2.0\n3.0\n")
    assert cli.main(["score", "--predicted", str(p), "--predicted-column", "x",
                     "--observed", str(o)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines == ["rmse,1.0", "bias,1.0", "n,3"]
    out = tmp_path / "s.csv"
    assert cli.main(["score", "--predicted", str(p), "--predicted-column", "x",
                     "--observed", str(o), "--output", str(out)]) == 0
    assert read_table(out)[0] == {"metric": "rmse", "value": "1.0"}
    assert cli.main(["score", "--predicted", str(p), "--observed", str(o)]) == 2


def test_regions_command(small_run, tmp_path):
    cfg, data, _ = small_run
    grid = LonLatGrid.read(data / "grid.txt")
    out = tmp_path / "regions.csv"
    assert cli.main(["regions", "--flux", str(data / "truth_flux.csv"), "--grid",
                     str(data / "grid.txt"), "--n-t", "24", "--output", str(out)]) == 0
    rows = read_table(out)
    assert len(rows) == 24 and len(rows[0]) == 9
    two = tmp_path / "two.csv"
    with open(two, "w") as fh:
        fh.write("cell,region\n")
        for c in range(grid.n_cells):
            fh.write(f"{c},{'north' if c >= grid.n_cells // 2 else 'south'}\n")
    out2 = tmp_path / "two_out.csv"
    assert cli.main(["regions", "--flux", str(data / "truth_flux.csv"), "--grid",
                     str(data / "grid.txt"), "--n-t", "24", "--regions", str(two),
                     "--output", str(out2)]) == 0
    eight = np.array([[float(v) for k, v in r.items() if k != "t_index"] for r in rows])
    halves = np.array([[float(r["north"]), float(r["south"])] for r in read_table(out2)])
    np.testing.assert_allclose(eight.sum(axis=1), halves.sum(axis=1), rtol=1e-10,
                               atol=1e-10 * np.abs(eight).max())
    assert cli.main(["regions", "--flux", str(data / "truth_flux.csv"), "--grid",
                     str(data / "grid.txt"), "--n-t", "24", "--deseasonalize",
                     "--output", str(tmp_path / "ds.csv")]) == 0
    partial = tmp_path / "partial.csv"
    partial.write_text("cell,region\n0,a\n")
    assert cli.main(["regions", "--flux", str(data / "truth_flux.csv"), "--grid",
                     str(data / "grid.txt"), "--n-t", "24", "--regions", str(partial),
                     "--output", str(tmp_path / "x.csv")]) == 2


def test_config_field_params(tmp_path):
    cfg = RunConfig.read(write_config(tmp_path))
    (spde, ar), = cfg.field_params()
    assert spde.kappa2 == pytest.approx(9.0) and ar.order == "AR1" and ar.a == 0.6
    assert len(cfg.digest) == 64
    clash = write_config(tmp_path, fields=SINGLE + "ar_order = AR12\n", name="clash.ini")
    with pytest.raises(DimensionMismatch):
        RunConfig.read(clash).field_params()
    with pytest.raises(InputError):
        RunConfig.read(write_config(tmp_path, model="X1", name="x.ini"))


def test_flux_file_round_trip(tmp_path):
    x = np.random.default_rng(0).normal(size=(3, 5))
    cli.write_flux(tmp_path / "f.csv", x)
    np.testing.assert_array_equal(cli.read_flux(tmp_path / "f.csv", 3, 5), x)
    with pytest.raises(DimensionMismatch):
        cli.read_flux(tmp_path / "f.csv", 2, 5)
    with pytest.raises(InputError):
        cli.read_flux(tmp_path / "f.csv", 4, 5)
