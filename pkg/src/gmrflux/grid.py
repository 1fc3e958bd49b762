"""Longitude-latitude grids and raster masks on the unit sphere.

Cells are ordered lat-major (row-major): ``cell = i_lat * n_lon + i_lon`` with
``i_lat = 0`` the southernmost band. Areas are unit-sphere steradians; the
physical scale (Earth radius squared) is applied only at I/O boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import GridMismatch, InputError

EARTH_RADIUS_M = 6.371e6


def lonlat_to_xyz(lat, lon):
    """Unit vectors for latitude/longitude given in degrees."""
    lat = np.deg2rad(np.asarray(lat, dtype=float))
    lon = np.deg2rad(np.asarray(lon, dtype=float))
    c = np.cos(lat)
    return np.stack([c * np.cos(lon), c * np.sin(lon), np.sin(lat)], axis=-1)


def xyz_to_lonlat(xyz):
    """Inverse of :func:`lonlat_to_xyz`; returns ``(lat, lon)`` in degrees."""
    xyz = np.asarray(xyz, dtype=float)
    lat = np.rad2deg(np.arcsin(np.clip(xyz[..., 2], -1.0, 1.0)))
    lon = np.rad2deg(np.arctan2(xyz[..., 1], xyz[..., 0]))
    return lat, lon


def great_circle(u, v):
    """Great-circle distance (radians) between unit vectors, broadcasting."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    cross = np.linalg.norm(np.cross(u, v), axis=-1)
    dot = np.sum(u * v, axis=-1)
    return np.arctan2(cross, dot)


@dataclass(frozen=True, eq=False)
class LonLatGrid:
    """Rectilinear grid covering the sphere.

    Parameters
    ----------
    lat_edges : (n_lat + 1,) array
        Increasing band edges in degrees, from -90 to 90.
    lon_edges : (n_lon + 1,) array
        Increasing meridian edges in degrees spanning exactly 360.
    """

    lat_edges: np.ndarray
    lon_edges: np.ndarray

    def __post_init__(self):
        lat = np.asarray(self.lat_edges, dtype=float)
        lon = np.asarray(self.lon_edges, dtype=float)
        object.__setattr__(self, "lat_edges", lat)
        object.__setattr__(self, "lon_edges", lon)
        if lat.ndim != 1 or lon.ndim != 1 or lat.size < 2 or lon.size < 2:
            raise InputError("grid edges must be 1-d with at least two entries")
        if np.any(np.diff(lat) <= 0) or np.any(np.diff(lon) <= 0):
            raise InputError("grid edges must be strictly increasing")

    @classmethod
    def regular(cls, n_lat: int, n_lon: int, lon0: float = -180.0) -> "LonLatGrid":
        return cls(np.linspace(-90.0, 90.0, n_lat + 1),
                   np.linspace(lon0, lon0 + 360.0, n_lon + 1))

    def write(self, path: str | Path):
        """Two lines, ``lat_edges`` then ``lon_edges``, values space separated."""
        with open(path, "w") as fh:
            for name, e in (("lat_edges", self.lat_edges), ("lon_edges", self.lon_edges)):
                fh.write(name + " " + " ".join(repr(float(v)) for v in e) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "LonLatGrid":
        edges = {}
        with open(path) as fh:
            for line in fh:
                parts = line.split()
                if parts:
                    try:
                        edges[parts[0]] = np.array(parts[1:], dtype=float)
                    except ValueError as exc:
                        raise InputError(f"{path}: malformed grid line") from exc
        if set(edges) != {"lat_edges", "lon_edges"}:
            raise InputError(f"{path}: need exactly lat_edges and lon_edges lines")
        return cls(edges["lat_edges"], edges["lon_edges"])

    @property
    def n_lat(self) -> int:
        return self.lat_edges.size - 1

    @property
    def n_lon(self) -> int:
        return self.lon_edges.size - 1

    @property
    def n_cells(self) -> int:
        return self.n_lat * self.n_lon

    @property
    def covers_sphere(self) -> bool:
        return (abs(self.lat_edges[0] + 90.0) < 1e-9
                and abs(self.lat_edges[-1] - 90.0) < 1e-9
                and abs(self.lon_edges[-1] - self.lon_edges[0] - 360.0) < 1e-9)

    def require_cover(self):
        if not self.covers_sphere:
            raise GridMismatch("grid does not cover the sphere")

    @cached_property
    def cell_areas(self) -> np.ndarray:
        """Exact cell areas in steradians, lat-major order."""
        dsin = np.diff(np.sin(np.deg2rad(self.lat_edges)))
        dlon = np.diff(np.deg2rad(self.lon_edges))
        return np.outer(dsin, dlon).ravel()

    @cached_property
    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Mid-angle cell centres ``(lat, lon)`` in degrees, each (n_cells,)."""
        lat_c = 0.5 * (self.lat_edges[:-1] + self.lat_edges[1:])
        lon_c = 0.5 * (self.lon_edges[:-1] + self.lon_edges[1:])
        lat, lon = np.meshgrid(lat_c, lon_c, indexing="ij")
        return lat.ravel(), lon.ravel()

    def locate(self, lat, lon) -> np.ndarray:
        """Cell index holding each ``(lat, lon)`` point (degrees)."""
        lat = np.asarray(lat, dtype=float)
        lon = np.asarray(lon, dtype=float)
        lon0 = self.lon_edges[0]
        lon = lon0 + np.mod(lon - lon0, 360.0)
        i = np.clip(np.searchsorted(self.lat_edges, lat, side="right") - 1,
                    0, self.n_lat - 1)
        j = np.clip(np.searchsorted(self.lon_edges, lon, side="right") - 1,
                    0, self.n_lon - 1)
        return i * self.n_lon + j

    def subgrid(self, n_sub: int):
        """Equal-angle sub-points of every cell.

        Returns
        -------
        cell : (n_cells * n_sub**2,) int array
        lat, lon : arrays of sub-cell centres in degrees
        weight : exact sub-cell areas in steradians
        """
        t = (np.arange(n_sub) + 0.5) / n_sub
        e = np.arange(n_sub + 1) / n_sub
        la0, la1 = self.lat_edges[:-1], self.lat_edges[1:]
        lo0, lo1 = self.lon_edges[:-1], self.lon_edges[1:]
        sub_lat = la0[:, None] + np.outer(la1 - la0, t)          # (n_lat, n_sub)
        sub_lon = lo0[:, None] + np.outer(lo1 - lo0, t)          # (n_lon, n_sub)
        sub_lat_e = la0[:, None] + np.outer(la1 - la0, e)
        sub_lon_e = lo0[:, None] + np.outer(lo1 - lo0, e)
        dsin = np.diff(np.sin(np.deg2rad(sub_lat_e)), axis=1)    # (n_lat, n_sub)
        dlon = np.diff(np.deg2rad(sub_lon_e), axis=1)            # (n_lon, n_sub)
        # axes: (i_lat, j_lon, a, b)
        lat = np.broadcast_to(sub_lat[:, None, :, None],
                              (self.n_lat, self.n_lon, n_sub, n_sub))
        lon = np.broadcast_to(sub_lon[None, :, None, :],
                              (self.n_lat, self.n_lon, n_sub, n_sub))
        w = dsin[:, None, :, None] * dlon[None, :, None, :]
        cell = np.broadcast_to(
            np.arange(self.n_cells).reshape(self.n_lat, self.n_lon, 1, 1),
            (self.n_lat, self.n_lon, n_sub, n_sub))
        return cell.ravel(), lat.ravel(), lon.ravel(), w.ravel()


TransportGrid = LonLatGrid


@dataclass(frozen=True, eq=False)
class RasterMask:
    """Boolean field on its own lon-lat raster, queried at arbitrary points."""

    grid: LonLatGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values).astype(bool)
        if v.size != self.grid.n_cells:
            raise InputError(
                f"mask has {v.size} values, grid has {self.grid.n_cells} cells")
        object.__setattr__(self, "values", v.ravel())

    def at(self, lat, lon) -> np.ndarray:
        return self.values[self.grid.locate(lat, lon)]

    @classmethod
    def read_csv(cls, path: str | Path) -> "RasterMask":
        """Read a 0/1 CSV with one row per latitude band (south first)."""
        arr = np.loadtxt(path, delimiter=",", ndmin=2)
        grid = LonLatGrid.regular(arr.shape[0], arr.shape[1])
        return cls(grid, arr != 0)

    def write_csv(self, path: str | Path):
        arr = self.values.reshape(self.grid.n_lat, self.grid.n_lon).astype(int)
        np.savetxt(path, arr, fmt="%d", delimiter=",")
