"""Scores and regional aggregation of flux fields."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyInput, MaskNotPartition
from .inference import aic, bic


@dataclass
class ScoreReport:
    rmse: float
    bias: float
    aic: float = float("nan")
    bic: float = float("nan")
    per_site: dict = field(default_factory=dict)


def rmse(predicted, observed) -> float:
    d = _diff(predicted, observed)
    return float(np.sqrt(np.mean(d * d)))


def _diff(predicted, observed):
    p = np.asarray(predicted, dtype=float).ravel()
    o = np.asarray(observed, dtype=float).ravel()
    if p.size == 0:
        raise EmptyInput("nothing to score")
    if p.shape != o.shape:
        raise DimensionMismatch("predicted and observed differ in length")
    return p - o


def score(predicted, observed, loglik: float | None = None, k: int | None = None,
          n_obs: int | None = None, sites=None) -> ScoreReport:
    """RMSE and bias of ``predicted - observed`` plus AIC/BIC when given.

    ``sites`` (one label per entry) adds per-site ``(bias, rmse, count)``.
    """
    d = _diff(predicted, observed)
    rep = ScoreReport(float(np.sqrt(np.mean(d * d))), float(np.mean(d)))
    if loglik is not None and k is not None:
        rep.aic = aic(loglik, k)
        if n_obs:
            rep.bic = bic(loglik, k, n_obs)
    if sites is not None:
        sites = np.asarray(sites)
        for s in np.unique(sites):
            ds = d[sites == s]
            rep.per_site[str(s)] = (float(ds.mean()), float(np.sqrt(np.mean(ds * ds))),
                                    int(ds.size))
    return rep


def running_mean(x, window: int = 12) -> np.ndarray:
    """Centred running mean along axis 0; NaN where the window is incomplete.

    For even windows the two end points get half weight (the usual centred
    moving average for monthly data).
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if window % 2:
        w = np.ones(window) / window
    else:
        w = np.ones(window + 1)
        w[0] = w[-1] = 0.5
        w /= window
    h = w.size // 2
    out = np.full(x.shape, np.nan)
    for t in range(h, n - h):
        out[t] = np.tensordot(w, x[t - h:t + h + 1], axes=(0, 0))
    return out


def regional_timeseries(flux, areas, masks, deseasonalize: bool = False) -> np.ndarray:
    """Area-integrated regional series.

    Parameters
    ----------
    flux : (n_t, n_cells) flux densities
    areas : (n_cells,) cell areas
    masks : (n_regions, n_cells) bool, each cell in exactly one region
    deseasonalize : apply a centred 12-month running mean

    Returns
    -------
    (n_t, n_regions) array
    """
    flux = np.atleast_2d(np.asarray(flux, dtype=float))
    masks = np.atleast_2d(np.asarray(masks, dtype=bool))
    areas = np.asarray(areas, dtype=float)
    if masks.shape[1] != flux.shape[1] or areas.shape != (flux.shape[1],):
        raise DimensionMismatch("masks, areas and flux disagree on the cell count")
    if not np.all(masks.sum(axis=0) == 1):
        raise MaskNotPartition("every cell must belong to exactly one region")
    series = flux @ (masks * areas).T
    return running_mean(series, 12) if deseasonalize else series
