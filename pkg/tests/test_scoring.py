import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmrflux.errors import DimensionMismatch, EmptyInput, MaskNotPartition
from gmrflux.grid import LonLatGrid
from gmrflux.scoring import regional_timeseries, rmse, running_mean, score
from gmrflux.synthetic import region_masks


def test_perfect_prediction():
    x = np.array([350.1, 351.7, 349.9])
    rep = score(x, x)
    assert rep.rmse == 0.0 and rep.bias == 0.0
    assert np.isnan(rep.aic) and np.isnan(rep.bic)


def test_constant_offset():
    x = np.random.default_rng(0).normal(350, 2, 50)
    rep = score(x + 1.0, x)
    assert rep.bias == pytest.approx(1.0, abs=1e-12)
    assert rep.rmse == pytest.approx(1.0, abs=1e-12)


def test_information_criteria_in_report():
    rep = score([1.0], [1.0], loglik=-9000.0, k=5, n_obs=8000)
    assert rep.aic == 18010.0
    assert rep.bic == pytest.approx(18044.9, abs=0.05)


def test_per_site_breakdown():
    pred = np.array([1.0, 2.0, 3.0, 5.0])
    obs = np.array([1.0, 1.0, 1.0, 1.0])
    rep = score(pred, obs, sites=["a", "a", "b", "b"])
    assert rep.per_site["a"] == pytest.approx((0.5, np.sqrt(0.5), 2))
    assert rep.per_site["b"] == pytest.approx((3.0, np.sqrt(10.0), 2))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40), st.floats(-10, 10))
def test_rmse_bounds_bias(values, shift):
    obs = np.array(values)
    pred = obs + shift + np.linspace(-1, 1, obs.size)
    rep = score(pred, obs)
    assert rep.rmse >= abs(rep.bias) - 1e-9
    assert rep.rmse == pytest.approx(rmse(pred, obs))


def test_empty_and_mismatched():
    with pytest.raises(EmptyInput):
        score([], [])
    with pytest.raises(DimensionMismatch):
        rmse([1.0, 2.0], [1.0])


def test_single_global_region():
    grid = LonLatGrid.regular(6, 12)
    series = regional_timeseries(np.ones((5, grid.n_cells)), grid.cell_areas,
                                 np.ones((1, grid.n_cells), bool))
    np.testing.assert_allclose(series, 4 * np.pi, rtol=1e-12)


def test_regions_add_to_global():
    grid = LonLatGrid.regular(18, 36)
    names, masks = region_masks(grid)
    assert len(names) == 8
    flux = np.random.default_rng(1).normal(size=(24, grid.n_cells))
    parts = regional_timeseries(flux, grid.cell_areas, masks)
    total = regional_timeseries(flux, grid.cell_areas, np.ones((1, grid.n_cells), bool))
    np.testing.assert_allclose(parts.sum(axis=1), total[:, 0], rtol=1e-10, atol=1e-10)
    two = np.stack([masks[:3].any(axis=0), ~masks[:3].any(axis=0)])
    np.testing.assert_allclose(regional_timeseries(flux, grid.cell_areas, two).sum(axis=1),
                               total[:, 0], rtol=1e-10, atol=1e-10)


def test_seasonal_signal_is_removed():
    t = np.arange(60)
    seasonal = np.sin(2 * np.pi * t / 12) + 0.5 * np.cos(4 * np.pi * t / 12 + 0.3)
    seasonal -= seasonal[:12].mean()
    flux = np.outer(seasonal, np.ones(3))
    series = regional_timeseries(flux, np.ones(3), np.eye(3, dtype=bool), deseasonalize=True)
    interior = series[6:-6]
    assert np.all(np.isfinite(interior))
    np.testing.assert_allclose(interior, 0.0, atol=1e-10)
    assert np.all(np.isnan(series[:6])) and np.all(np.isnan(series[-6:]))


def test_running_mean_keeps_trend():
    x = 2.0 + 0.1 * np.arange(40)
    out = running_mean(x, 12)
    np.testing.assert_allclose(out[6:-6], x[6:-6], rtol=1e-12)
    odd = running_mean(x, 3)
    np.testing.assert_allclose(odd[1:-1], x[1:-1], rtol=1e-12)


def test_mask_must_partition():
    grid = LonLatGrid.regular(3, 6)
    masks = np.zeros((2, grid.n_cells), bool)
    masks[0, :10] = True
    with pytest.raises(MaskNotPartition):
        regional_timeseries(np.ones((2, grid.n_cells)), grid.cell_areas, masks)
    masks[1, 5:] = True
    with pytest.raises(MaskNotPartition):
        regional_timeseries(np.ones((2, grid.n_cells)), grid.cell_areas, masks)
    with pytest.raises(DimensionMismatch):
        regional_timeseries(np.ones((2, 4)), grid.cell_areas, masks)
