"""Triangulated unit-sphere meshes carrying piecewise-linear basis functions.

The triangulation is the convex hull of the node set, which for points on the
sphere coincides with the spherical Delaunay triangulation. Basis functions are
the hat functions of the planar hull facets, radially projected onto the
sphere, so evaluating them at a point uses gnomonic barycentric coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.spatial import ConvexHull, cKDTree

from .errors import (DegenerateNodes, DegenerateTriangle, InputError,
                     PointNotLocated, TooFewNodes)
from .grid import LonLatGrid, lonlat_to_xyz

_CONTAIN_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SphereMesh:
    """Closed, outward-oriented triangulation of nodes on the unit sphere."""

    nodes: np.ndarray
    triangles: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges, shape (n_edges, 2), sorted per row."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    @cached_property
    def _vertex_inverse(self) -> np.ndarray:
        # columns of each 3x3 block are the triangle's vertices
        V = self.nodes[self.triangles].transpose(0, 2, 1)
        return np.linalg.inv(V)

    @cached_property
    def _centroid_tree(self) -> cKDTree:
        c = self.nodes[self.triangles].sum(axis=1)
        return cKDTree(c / np.linalg.norm(c, axis=1, keepdims=True))

    def write(self, path: str | Path):
        """Write the plain-text mesh format (0-based triangle indices)."""
        with open(path, "w") as fh:
            fh.write(f"nodes {self.n_nodes} triangles {self.n_triangles}\n")
            for x, y, z in self.nodes:
                fh.write(f"{float(x)!r} {float(y)!r} {float(z)!r}\n")
            for i, j, k in self.triangles:
                fh.write(f"{i} {j} {k}\n")

    @classmethod
    def read(cls, path: str | Path) -> "SphereMesh":
        with open(path) as fh:
            head = fh.readline().split()
            if len(head) != 4 or head[0] != "nodes" or head[2] != "triangles":
                raise InputError(f"{path}: bad mesh header {' '.join(head)!r}")
            n, m = int(head[1]), int(head[3])
            rows = [fh.readline().split() for _ in range(n + m)]
        try:
            nodes = np.array(rows[:n], dtype=float).reshape(n, 3)
            tris = np.array(rows[n:], dtype=np.int64).reshape(m, 3)
        except ValueError as exc:
            raise InputError(f"{path}: malformed mesh body") from exc
        mesh = cls(nodes, tris)
        check_mesh(mesh)
        return mesh


def check_mesh(mesh: SphereMesh, tol: float = 1e-12):
    """Raise if the mesh violates the closed-surface invariants."""
    norms = np.linalg.norm(mesh.nodes, axis=1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise InputError("mesh nodes must lie on the unit sphere")
    t = mesh.triangles
    if t.min() < 0 or t.max() >= mesh.n_nodes:
        raise InputError("triangle index out of range")
    directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    und, counts = np.unique(np.sort(directed, axis=1), axis=0, return_counts=True)
    if np.any(counts != 2):
        raise InputError("mesh is not closed: some edge is not shared by two triangles")
    # consistent orientation: each directed edge appears exactly once
    if np.unique(directed, axis=0).shape[0] != directed.shape[0]:
        raise InputError("inconsistent triangle orientation")


def icosahedron_nodes() -> np.ndarray:
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    v = []
    for a in (-1.0, 1.0):
        for b in (-phi, phi):
            v += [(0.0, a, b), (a, b, 0.0), (b, 0.0, a)]
    v = np.array(v)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def icosphere_nodes(level: int) -> np.ndarray:
    """Nodes of a recursively subdivided icosahedron (10 * 4**level + 2)."""
    mesh = build_mesh(icosahedron_nodes())
    nodes, tris = mesh.nodes, mesh.triangles
    for _ in range(level):
        key = {}
        new = list(nodes)
        out = []
        for tri in tris:
            mids = []
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                k = (min(a, b), max(a, b))
                if k not in key:
                    m = nodes[a] + nodes[b]
                    key[k] = len(new)
                    new.append(m / np.linalg.norm(m))
                mids.append(key[k])
            i, j, k3 = tri
            ab, bc, ca = mids
            out += [(i, ab, ca), (ab, j, bc), (ca, bc, k3), (ab, bc, ca)]
        nodes, tris = np.array(new), np.array(out)
    return nodes


def fibonacci_nodes(n: int) -> np.ndarray:
    """Quasi-uniform spiral node set of size ``n``."""
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    theta = np.pi * (1.0 + np.sqrt(5.0)) * k
    r = np.sqrt(1.0 - z * z)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta), z])


def grid_nodes(grid: LonLatGrid, pole_lat: float = 85.0,
               keep: np.ndarray | None = None) -> np.ndarray:
    """Nodes at cell centres, polar cells merged into one node per pole.

    Cells whose centre satisfies ``|lat| >= pole_lat`` are replaced by a single
    node at the corresponding pole. ``keep`` optionally restricts the cells
    that receive a node (e.g. land cells for a land-only mesh); the pole nodes
    are added when any kept cell is polar. Node order: kept non-polar cells in
    lat-major order, then the south pole, then the north pole.
    """
    lat, lon = grid.centers
    if keep is None:
        keep = np.ones(grid.n_cells, dtype=bool)
    keep = np.asarray(keep, dtype=bool)
    polar = np.abs(lat) >= pole_lat
    body = keep & ~polar
    pts = [lonlat_to_xyz(lat[body], lon[body])]
    if np.any(keep & polar & (lat < 0)):
        pts.append(np.array([[0.0, 0.0, -1.0]]))
    if np.any(keep & polar & (lat > 0)):
        pts.append(np.array([[0.0, 0.0, 1.0]]))
    return np.concatenate(pts)


def build_mesh(nodes=None, *, grid: LonLatGrid | None = None,
               pole_lat: float = 85.0, keep=None) -> SphereMesh:
    """Triangulate a node set on the unit sphere.

    Pass either explicit ``nodes`` (array of 3-vectors, renormalized to unit
    length) or a lon-lat ``grid`` whose cell centres become nodes (see
    :func:`grid_nodes`). Node order is preserved.
    """
    if (nodes is None) == (grid is None):
        raise InputError("give exactly one of nodes or grid")
    if grid is not None:
        nodes = grid_nodes(grid, pole_lat, keep)
    nodes = np.asarray(nodes, dtype=float)
    if nodes.ndim != 2 or nodes.shape[1] != 3:
        raise InputError("nodes must have shape (n, 3)")
    if nodes.shape[0] < 12:
        raise TooFewNodes(f"need at least 12 nodes, got {nodes.shape[0]}")
    norms = np.linalg.norm(nodes, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DegenerateNodes("zero node vector")
    nodes = nodes / norms
    dist, _ = cKDTree(nodes).query(nodes, k=2)
    if np.any(dist[:, 1] < 1e-9):
        raise DegenerateNodes("coincident nodes (angular separation < 1e-9)")

    hull = ConvexHull(nodes)
    # facet planes n.x + d <= 0 inside; the centre must be strictly interior
    if np.any(hull.equations[:, 3] > -1e-12):
        raise DegenerateNodes("node set does not enclose the sphere centre")
    tris = hull.simplices.astype(np.int64)
    if np.unique(tris).size != nodes.shape[0]:
        raise DegenerateNodes("some nodes are not vertices of the hull")
    v0, v1, v2 = (nodes[tris[:, i]] for i in range(3))
    normal = np.cross(v1 - v0, v2 - v0)
    flip = np.einsum("ij,ij->i", normal, v0 + v1 + v2) < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    mesh = SphereMesh(nodes, tris)
    check_mesh(mesh)
    return mesh


def _barycentric(mesh: SphereMesh, tri_idx, pts):
    c = np.einsum("nij,nj->ni", mesh._vertex_inverse[tri_idx], pts)
    return c


def evaluate_basis(mesh: SphereMesh, points) -> sp.csr_matrix:
    """Hat-function values at points, as a sparse (n_points, n_nodes) matrix.

    Each row holds the three barycentric weights of the facet hit by the ray
    from the origin through the point; weights are in [0, 1] and sum to one.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = pts.shape[0]
    k = min(8, mesh.n_triangles)
    _, cand = mesh._centroid_tree.query(pts, k=k)
    cand = cand.reshape(n, k)
    # barycentric coordinates for every candidate, (n, k, 3)
    c = np.einsum("nkij,nj->nki", mesh._vertex_inverse[cand], pts)
    score = c.min(axis=2)
    best = np.argmax(score, axis=1)
    tri = cand[np.arange(n), best]
    coords = c[np.arange(n), best]
    bad = score[np.arange(n), best] < -_CONTAIN_TOL
    for i in np.flatnonzero(bad):
        # exhaustive fallback over all facets
        call = mesh._vertex_inverse @ pts[i]
        call[call.sum(axis=1) <= 0] = -np.inf
        j = int(np.argmax(call.min(axis=1)))
        if call[j].min() < -1e-9:
            raise PointNotLocated(f"point {i} not inside any facet")
        tri[i] = j
        coords[i] = call[j]
    coords = np.where(np.abs(coords) < 1e-13, 0.0, coords)
    coords = np.clip(coords, 0.0, None)
    coords /= coords.sum(axis=1, keepdims=True)
    rows = np.repeat(np.arange(n), 3)
    cols = mesh.triangles[tri].ravel()
    Phi = sp.csr_matrix((coords.ravel(), (rows, cols)), shape=(n, mesh.n_nodes))
    Phi.eliminate_zeros()
    return Phi


@dataclass(frozen=True, eq=False)
class FemMatrices:
    """Lumped mass diagonal and stiffness matrix of the P1 discretization.

    ``mass_lumped`` holds the diagonal of C as a vector; ``stiffness`` is G.
    """

    mass_lumped: np.ndarray
    stiffness: sp.csr_matrix

    @property
    def C(self) -> sp.dia_matrix:
        return sp.diags(self.mass_lumped)


def spherical_triangle_areas(mesh: SphereMesh) -> np.ndarray:
    """Geodesic areas of the facets' spherical counterparts (solid angles)."""
    a, b, c = (mesh.nodes[mesh.triangles[:, i]] for i in range(3))
    num = np.abs(np.einsum("ij,ij->i", a, np.cross(b, c)))
    den = 1.0 + np.einsum("ij,ij->i", a, b) + np.einsum("ij,ij->i", b, c) \
        + np.einsum("ij,ij->i", c, a)
    return 2.0 * np.arctan2(num, den)


def fem_matrices(mesh: SphereMesh) -> FemMatrices:
    """Assemble lumped mass and stiffness matrices.

    The stiffness uses the planar hull facets (cotangent weights); the lumped
    mass gives each node a third of the geodesic area of every incident
    triangle, so the masses tile the sphere exactly.
    """
    n = mesh.n_nodes
    t = mesh.triangles
    v = mesh.nodes[t]                                   # (m, 3, 3)
    planar = 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]),
                                  axis=1)
    if np.any(planar < 1e-14):
        raise DegenerateTriangle("triangle with (near) zero area")
    # edge opposite vertex i
    e = np.stack([v[:, 2] - v[:, 1], v[:, 0] - v[:, 2], v[:, 1] - v[:, 0]], axis=1)
    K = np.einsum("mik,mjk->mij", e, e) / (4.0 * planar)[:, None, None]
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    G = sp.csr_matrix((K.ravel(), (rows, cols)), shape=(n, n))
    G = 0.5 * (G + G.T)
    G.sum_duplicates()

    area = spherical_triangle_areas(mesh)
    mass = np.bincount(t.ravel(), weights=np.repeat(area / 3.0, 3), minlength=n)
    return FemMatrices(mass, G.tocsr())
