"""Synthetic inputs for experiments: stations, toy transport, masks and truths.

Nothing here claims to reproduce a real network or transport model. The toy
Jacobian has the structural features the inversion relies on: causality,
uniform sensitivity after the mixing horizon, and a decaying near-field plume
advected westward.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse.linalg import lsqr

from .errors import InputError
from .grid import (EARTH_RADIUS_M, LonLatGrid, RasterMask, great_circle, lonlat_to_xyz,
                   xyz_to_lonlat)
from .mesh import icosphere_nodes
from .observation import ObservationSet, TransportOperator

KGC_PER_PPM = 2.124e12
# ppm per unit flux density (kgC m^-2 yr^-1) over one steradian for one month
PPM_PER_UNIT = EARTH_RADIUS_M ** 2 / (12.0 * KGC_PER_PPM)

# (lat, lon, angular radius in degrees) of crude caps standing in for continents
_CONTINENT_CAPS = [
    (50, -100, 25), (35, -90, 15), (65, -110, 15), (-15, -60, 20), (-35, -65, 10),
    (5, 20, 20), (-15, 25, 18), (50, 30, 22), (55, 80, 25), (60, 120, 20),
    (30, 100, 20), (20, 78, 10), (-25, 135, 15), (72, -40, 10), (-80, 0, 12),
]
_ICE_CAPS = [(72, -40, 11)]


def _caps(lat, lon, caps):
    xyz = lonlat_to_xyz(lat, lon)
    hit = np.zeros(np.shape(lat), dtype=bool)
    for la, lo, rad in caps:
        c = lonlat_to_xyz(la, lo)
        hit |= great_circle(xyz, c) <= np.deg2rad(rad)
    return hit


def land_mask(n_lat: int = 90, n_lon: int = 180) -> RasterMask:
    """Illustrative land/ocean raster built from overlapping caps."""
    grid = LonLatGrid.regular(n_lat, n_lon)
    lat, lon = grid.centers
    land = _caps(lat, lon, _CONTINENT_CAPS) | (lat < -65)
    return RasterMask(grid, land)


def ice_cells(grid: LonLatGrid) -> np.ndarray:
    """Cells with zero transport sensitivity (Antarctic and Greenland ice)."""
    lat, lon = grid.centers
    return np.flatnonzero((lat < -65) | _caps(lat, lon, _ICE_CAPS))


def region_masks(grid: LonLatGrid, land: RasterMask | None = None):
    """Illustrative 8-region partition of the grid.

    Returns
    -------
    names : list of str
    masks : (8, n_cells) bool array, one region per cell
    """
    land = land or land_mask()
    lat, lon = grid.centers
    is_land = land.at(lat, lon)
    polar_n, polar_s = lat >= 60, lat <= -60
    mid = ~(polar_n | polar_s)
    band = np.where(lat > 23.5, 0, np.where(lat < -23.5, 2, 1))
    names = ["land_north", "land_tropics", "land_south",
             "ocean_north", "ocean_tropics", "ocean_south", "arctic", "antarctic"]
    masks = np.zeros((8, grid.n_cells), dtype=bool)
    for b in range(3):
        masks[b] = mid & is_land & (band == b)
        masks[3 + b] = mid & ~is_land & (band == b)
    masks[6], masks[7] = polar_n, polar_s
    return names, masks


def cap_points(region, n: int, rng):
    """``n`` uniform random points in the cap ``(lat, lon, radius)`` (degrees)."""
    lat0, lon0, rad = region
    cz = rng.uniform(np.cos(np.deg2rad(rad)), 1.0, n)
    phi = rng.uniform(0.0, 2.0 * np.pi, n)
    sz = np.sqrt(1.0 - cz * cz)
    local = np.column_stack([sz * np.cos(phi), sz * np.sin(phi), cz])
    # rotate the north pole onto the cap centre
    t, p = np.deg2rad(90.0 - lat0), np.deg2rad(lon0)
    Ry = np.array([[np.cos(t), 0, np.sin(t)], [0, 1, 0], [-np.sin(t), 0, np.cos(t)]])
    Rz = np.array([[np.cos(p), -np.sin(p), 0], [np.sin(p), np.cos(p), 0], [0, 0, 1]])
    return xyz_to_lonlat(local @ (Rz @ Ry).T)


def regional_nodes(region, fine_level: int = 4, coarse_level: int = 1,
                   margin: float = 7.0) -> np.ndarray:
    """Icosphere nodes, fine inside the cap ``region`` and coarse outside.

    Fine nodes come from level ``fine_level`` within the cap radius; coarse
    nodes from level ``coarse_level`` farther than ``radius + margin``.
    """
    lat0, lon0, rad = region
    c = lonlat_to_xyz(lat0, lon0)
    fine = icosphere_nodes(fine_level)
    coarse = icosphere_nodes(coarse_level)
    d_f = np.rad2deg(great_circle(fine, c))
    d_c = np.rad2deg(great_circle(coarse, c))
    return np.concatenate([fine[d_f <= rad], coarse[d_c > rad + margin]])


def nested_grid(region_box, fine: float = 2.5, coarse: float = 15.0) -> LonLatGrid:
    """Lon-lat grid with ``fine``-degree cells inside ``(lat0, lat1, lon0, lon1)``.

    Box edges should be multiples of ``fine``; the rest of the sphere is split
    into cells of roughly ``coarse`` degrees.
    """
    la0, la1, lo0, lo1 = region_box

    def edges(lo, hi, a, b):
        left = np.linspace(lo, a, max(1, int(np.ceil((a - lo) / coarse))) + 1)
        mid = np.arange(a, b + 0.5 * fine, fine)
        right = np.linspace(b, hi, max(1, int(np.ceil((hi - b) / coarse))) + 1)
        return np.unique(np.concatenate([left, mid, right]))

    return LonLatGrid(edges(-90.0, 90.0, la0, la1), edges(-180.0, 180.0, lo0, lo1))


def station_network(n_sites: int, n_t: int, seed=0, n_validation: int = 0,
                    coverage: float = 0.75, gap_prob: float = 0.1,
                    land: RasterMask | None = None,
                    region: tuple[float, float, float] | None = None) -> ObservationSet:
    """Monthly records at ``n_sites`` random stations with coverage gaps.

    Each site starts at a random month (records begin later for later sites,
    at least one site covers the first year), then misses individual months
    with probability ``gap_prob``. Values are NaN placeholders. ``region``
    ``(lat, lon, radius)`` in degrees confines the sites to a spherical cap.
    """
    if n_sites < 1 or n_t < 1:
        raise InputError("need at least one site and one month")
    rng = np.random.default_rng(seed)
    land = land or land_mask()
    if region is None:
        u = rng.uniform(-1.0, 1.0, n_sites)
        lat = np.rad2deg(np.arcsin(0.9 * u))
        lon = rng.uniform(-180.0, 180.0, n_sites)
    else:
        lat, lon = cap_points(region, n_sites, rng)
    on_land = land.at(lat, lon)
    cls = np.where(on_land, rng.choice(["C", "M"], n_sites, p=[0.6, 0.4]),
                   rng.choice(["R", "S"], n_sites, p=[0.7, 0.3]))
    latest_start = max(0, int(round((1.0 - coverage) * n_t)))
    start = rng.integers(0, latest_start + 1, n_sites)
    start[0] = 0
    is_val = np.zeros(n_sites, dtype=bool)
    if n_validation:
        is_val[rng.choice(np.arange(1, n_sites), n_validation, replace=False)] = True
    rows = []
    for s in range(n_sites):
        months = np.arange(start[s], n_t)
        months = months[rng.random(months.size) >= gap_prob]
        for m in months:
            rows.append((f"site{s:03d}", lat[s], lon[s], m + 1, np.nan, cls[s], is_val[s]))
    # sort by time then site so row order is stable
    rows.sort(key=lambda r: (r[3], r[0]))
    cols = list(zip(*rows))
    return ObservationSet(*cols)


def toy_transport(grid: LonLatGrid, obs: ObservationSet, n_t: int, K: int = 12,
                  enhancement: float = 2.0, width0: float = 4.0,
                  width_growth: float = 3.0, drift: float = 6.0,
                  zero_cells=None) -> TransportOperator:
    """Plume-like Jacobian with uniform mixing after ``K`` months.

    ``Ja[i, lag, c] = J0 (1 + E w(lag) n_cells k_lag(c))`` with
    ``w(lag) = 1 - lag / K`` and ``k_lag`` a Gaussian (width ``width0 +
    width_growth * lag`` degrees) centred ``drift * lag`` degrees west of the
    station, normalized to unit sum. ``Jc = J0`` everywhere.
    """
    lat_c, lon_c = grid.centers
    cell_xyz = lonlat_to_xyz(lat_c, lon_c)
    n_s = grid.n_cells
    n_obs = obs.n_obs
    Ja = np.empty((n_obs, K, n_s))
    sites, inv = np.unique(obs.site, return_inverse=True)
    first = np.array([np.flatnonzero(inv == k)[0] for k in range(sites.size)])
    for lag in range(K):
        w = 1.0 - lag / K
        width = np.deg2rad(width0 + width_growth * lag)
        centre = lonlat_to_xyz(obs.lat[first], obs.lon[first] - drift * lag)
        d = great_circle(centre[:, None, :], cell_xyz[None, :, :])
        kern = np.exp(-0.5 * (d / width) ** 2)
        kern /= kern.sum(axis=1, keepdims=True)
        Ja[:, lag] = PPM_PER_UNIT * (1.0 + enhancement * w * n_s * kern[inv])
    Jc = np.full((n_obs, n_s), PPM_PER_UNIT)
    op = TransportOperator(Ja, Jc, obs.t_obs, n_t)
    if zero_cells is not None:
        op = op.zero_cells(zero_cells)
    return op


def fit_latent_to_flux(maps, flux) -> np.ndarray:
    """Minimum-norm least-squares ``z`` with ``H z`` closest to ``flux``."""
    H = maps.to_sparse()
    sol = lsqr(H, np.asarray(flux, dtype=float).ravel(),
                atol=1e-12, btol=1e-12, iter_lim=20 * H.shape[1])
    return sol[0]
