"""Maps from flux representations to cell-integrated fluxes on the transport grid.

Integrated quantities are densities times unit-sphere area (steradians).
Flux arrays on the transport grid have shape ``(n_t, n_cells)`` and are
flattened time-major to match the latent ordering.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, QuadratureTooCoarse
from .grid import LonLatGrid, RasterMask, lonlat_to_xyz
from .mesh import SphereMesh, evaluate_basis


def _interval_overlap(a0, a1, b0, b1):
    return np.clip(np.minimum.outer(a1, b1) - np.maximum.outer(a0, b0), 0.0, None)


def overlap_matrix(source: LonLatGrid, target: LonLatGrid) -> sp.csr_matrix:
    """Exact overlap areas ``D[k, u] = |target_k intersect source_u|``.

    Rows index target cells, columns source cells; both lat-major.
    """
    source.require_cover()
    target.require_cover()
    s_t = np.sin(np.deg2rad(target.lat_edges))
    s_s = np.sin(np.deg2rad(source.lat_edges))
    olat = _interval_overlap(s_t[:-1], s_t[1:], s_s[:-1], s_s[1:])
    lt, ls = target.lon_edges, source.lon_edges
    olon = sum(_interval_overlap(lt[:-1], lt[1:], ls[:-1] + s, ls[1:] + s)
               for s in (-360.0, 0.0, 360.0))
    olon = np.deg2rad(olon)
    D = sp.kron(sp.csr_matrix(olat), sp.csr_matrix(olon), format="csr")
    D.eliminate_zeros()
    return D


def basis_integration_matrix(mesh: SphereMesh, grid: LonLatGrid, n_sub: int = 5,
                             mask: RasterMask | None = None,
                             value: bool = True) -> sp.csr_matrix:
    """Quadrature of every basis function over every grid cell.

    ``G[k, l] = sum_i phi_l(s_i) dA_i`` over the ``n_sub x n_sub`` equal-angle
    sub-cells of cell ``k``. With ``mask``, only sub-points where the mask
    equals ``value`` contribute (land or ocean share of each cell).
    """
    grid.require_cover()
    if n_sub < 2:
        raise QuadratureTooCoarse(f"need >= 2 sub-points per cell edge, got {n_sub}")
    cell, lat, lon, w = grid.subgrid(n_sub)
    if mask is not None:
        keep = mask.at(lat, lon) == value
        cell, lat, lon, w = cell[keep], lat[keep], lon[keep], w[keep]
    Phi = evaluate_basis(mesh, lonlat_to_xyz(lat, lon))
    P = sp.csr_matrix((w, (cell, np.arange(w.size))), shape=(grid.n_cells, w.size))
    G = (P @ Phi).tocsr()
    G.eliminate_zeros()
    return G


def prior_integration(D: sp.spmatrix, mu0: np.ndarray) -> np.ndarray:
    """``L_0 mu_0`` for prior densities ``mu0`` of shape ``(n_t, n_source)``."""
    mu0 = np.atleast_2d(np.asarray(mu0, dtype=float))
    if mu0.shape[1] != D.shape[1]:
        raise DimensionMismatch("prior mean does not match the source grid")
    return np.asarray((D @ mu0.T).T)


def regression_block(D: sp.spmatrix, covariates: np.ndarray) -> np.ndarray:
    """``L_beta B`` for covariate densities of shape ``(n_t, n_source, p)``."""
    cov = np.asarray(covariates, dtype=float)
    if cov.ndim != 3 or cov.shape[1] != D.shape[1]:
        raise DimensionMismatch("covariates must be (n_t, n_source, p)")
    out = np.stack([np.asarray(D @ cov[t]) for t in range(cov.shape[0])])
    return out.reshape(-1, cov.shape[2])


@dataclass(eq=False)
class IntegrationMaps:
    """``H = [I kron G_1, ..., I kron G_F, L_beta B]``.

    Parameters
    ----------
    G : list of sparse (n_cells, n_l) matrices, one per field
    n_t : int
    Hbeta : (n_t * n_cells, p) array or None
    """

    G: list
    n_t: int
    Hbeta: np.ndarray | None = None
    n_cells: int = field(init=False)

    def __post_init__(self):
        if not self.G:
            raise DimensionMismatch("at least one field map is required")
        self.G = [sp.csr_matrix(g) for g in self.G]
        rows = {g.shape[0] for g in self.G}
        if len(rows) != 1:
            raise DimensionMismatch("field maps disagree on the number of cells")
        self.n_cells = rows.pop()
        if self.Hbeta is None:
            self.Hbeta = np.zeros((self.n_t * self.n_cells, 0))
        self.Hbeta = np.asarray(self.Hbeta, dtype=float)
        if self.Hbeta.shape[0] != self.n_t * self.n_cells:
            raise DimensionMismatch("regression block has the wrong number of rows")

    @property
    def p(self) -> int:
        return self.Hbeta.shape[1]

    @property
    def field_sizes(self) -> list[int]:
        return [self.n_t * g.shape[1] for g in self.G]

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_t * self.n_cells, sum(self.field_sizes) + self.p

    def check_model(self, model):
        """Raise unless the maps are conformable with a ``PrecisionModel``."""
        if (len(model.fields) != len(self.G) or model.n_t != self.n_t
                or model.p != self.p
                or any(f.mesh.n_nodes != g.shape[1]
                       for f, g in zip(model.fields, self.G))):
            raise DimensionMismatch("integration maps do not match the latent model")

    def matvec(self, z) -> np.ndarray:
        """``H z``; returns shape ``(n_t * n_cells, ...)``."""
        z = np.asarray(z, dtype=float)
        if z.shape[0] != self.shape[1]:
            raise DimensionMismatch(f"expected {self.shape[1]} rows, got {z.shape[0]}")
        tail = z.shape[1:]
        out = np.zeros((self.n_t, self.n_cells) + tail)
        o = 0
        for g in self.G:
            n_l = g.shape[1]
            W = z[o:o + self.n_t * n_l].reshape(self.n_t, n_l, -1)
            for t in range(self.n_t):
                out[t] += (g @ W[t]).reshape((self.n_cells,) + tail)
            o += self.n_t * n_l
        out = out.reshape((-1,) + tail)
        if self.p:
            out += np.tensordot(self.Hbeta, z[o:], axes=(1, 0))
        return out

    def rmatvec(self, y) -> np.ndarray:
        """``H^T y`` for ``y`` of shape ``(n_t * n_cells, ...)``."""
        y = np.asarray(y, dtype=float)
        if y.shape[0] != self.shape[0]:
            raise DimensionMismatch(f"expected {self.shape[0]} rows, got {y.shape[0]}")
        tail = y.shape[1:]
        Y = y.reshape(self.n_t, self.n_cells, -1)
        parts = []
        for g in self.G:
            gt = g.T.tocsr()
            parts.append(np.stack([gt @ Y[t] for t in range(self.n_t)])
                         .reshape((-1,) + tail))
        parts.append(np.tensordot(self.Hbeta.T, y, axes=(1, 0)))
        return np.concatenate(parts, axis=0)

    def to_sparse(self) -> sp.csr_matrix:
        eye = sp.identity(self.n_t, format="csr")
        blocks = [sp.kron(eye, g) for g in self.G]
        if self.p:
            blocks.append(sp.csr_matrix(self.Hbeta))
        return sp.hstack(blocks, format="csr")


def assemble_H(G, n_t: int, Hbeta: np.ndarray | None = None) -> IntegrationMaps:
    """Combine per-field maps (and an optional regression block) into ``H``."""
    if isinstance(G, sp.spmatrix) or isinstance(G, np.ndarray):
        G = [G]
    return IntegrationMaps(list(G), n_t, Hbeta)
