"""Joint prior precision of the latent weights and regression coefficients.

Latent ordering: each field is stored time-major (``omega = [w_1; ...; w_nt]``
with ``w_t`` the node weights at month ``t``), fields are concatenated in the
order given, and the regression coefficients come last. Arrays of shape
``(n_t, n_l, ...)`` are the reshaped ("ivec") view of one field block.

Every factor follows ``Q = F^T F``; for a field ``F = F_T kron F_S`` so that
``F^{-1}`` is applied as a temporal solve along axis 0 and a spatial solve
along axis 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .cholesky import SparseCholesky
from .errors import InputError
from .mesh import FemMatrices, SphereMesh, fem_matrices
from .spde import SpdeParams, build_Qs
from .temporal import ArParams, build_Qt

DEFAULT_Q_BETA = 1e-4


@dataclass(frozen=True, eq=False)
class FieldSpec:
    """One spatio-temporal field: mesh, spatial and temporal parameters."""

    mesh: SphereMesh
    spde: SpdeParams
    ar: ArParams
    label: str = "single"
    fem: FemMatrices | None = None

    def __post_init__(self):
        if self.mesh.n_nodes <= 0:
            raise InputError("field mesh has no nodes")
        if self.fem is None:
            object.__setattr__(self, "fem", fem_matrices(self.mesh))

    def with_params(self, spde: SpdeParams, ar: ArParams) -> "FieldSpec":
        return FieldSpec(self.mesh, spde, ar, self.label, self.fem)


def _along(axis_op, X, axis):
    """Apply ``axis_op`` (acting on axis 0) along ``axis`` of ``X``."""
    Xm = np.moveaxis(X, axis, 0)
    Y = axis_op(np.ascontiguousarray(Xm))
    return np.moveaxis(Y, 0, axis)


class FieldFactor:
    """Kronecker factor ``F_T kron F_S`` of ``Q_T kron Q_S`` for one field."""

    def __init__(self, spec: FieldSpec, n_t: int):
        self.spec = spec
        self.n_t = n_t
        self.n_l = spec.mesh.n_nodes
        self.Qs = build_Qs(spec.fem, spec.spde)
        self.Qt = build_Qt(spec.ar, n_t)
        self.chol_s = SparseCholesky(self.Qs, reorder=True)
        self.chol_t = SparseCholesky(self.Qt, reorder=False)

    @property
    def size(self) -> int:
        return self.n_t * self.n_l

    def logdet(self) -> float:
        return (self.n_l * self.chol_t.logdet()
                + self.n_t * self.chol_s.logdet())

    # X has shape (n_t, n_l, ...)
    def solve_F(self, X):
        return _along(self.chol_s.solve_F, self.chol_t.solve_F(X), 1)

    def solve_Ft(self, X):
        return self.chol_t.solve_Ft(_along(self.chol_s.solve_Ft, X, 1))

    def apply_F(self, X):
        return _along(self.chol_s.apply_F, self.chol_t.apply_F(X), 1)

    def apply_Ft(self, X):
        return self.chol_t.apply_Ft(_along(self.chol_s.apply_Ft, X, 1))

    def apply_Q(self, X):
        Y = _along(lambda Z: (self.Qs @ Z.reshape(self.n_l, -1)).reshape(Z.shape),
                   X, 1)
        return (self.Qt @ Y.reshape(self.n_t, -1)).reshape(X.shape)


class PrecisionModel:
    """Block-diagonal prior precision ``Q_z`` with Kronecker field blocks.

    Parameters
    ----------
    fields : sequence of FieldSpec
    n_t : int
        Number of monthly time steps.
    p : int
        Number of regression coefficients (may be 0).
    q_beta : float
        Prior precision of each regression coefficient.
    """

    def __init__(self, fields, n_t: int, p: int = 0,
                 q_beta: float = DEFAULT_Q_BETA):
        fields = list(fields)
        if not fields:
            raise InputError("at least one field is required")
        if p < 0 or not q_beta > 0:
            raise InputError("p must be >= 0 and q_beta > 0")
        self.fields = fields
        self.n_t = int(n_t)
        self.p = int(p)
        self.q_beta = float(q_beta)
        self.factors = [FieldFactor(f, self.n_t) for f in fields]
        sizes = [fa.size for fa in self.factors]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.n_omega = int(self.offsets[-1])
        self.n = self.n_omega + self.p

    # -- block helpers -------------------------------------------------
    def split(self, v):
        """Views of ``v`` (shape ``(n, ...)``) as field arrays and beta."""
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n:
            raise InputError(f"vector has {v.shape[0]} rows, model has {self.n}")
        tail = v.shape[1:]
        parts = []
        for fa, o0, o1 in zip(self.factors, self.offsets[:-1], self.offsets[1:]):
            parts.append(v[o0:o1].reshape((fa.n_t, fa.n_l) + tail))
        return parts, v[self.n_omega:]

    def join(self, parts, beta):
        tail = beta.shape[1:]
        out = [P.reshape((-1,) + tail) for P in parts]
        out.append(beta)
        return np.concatenate(out, axis=0)

    def _blockwise(self, v, name, beta_scale):
        parts, beta = self.split(v)
        new = [getattr(fa, name)(P) for fa, P in zip(self.factors, parts)]
        return self.join(new, beta * beta_scale)

    def solve_F(self, v):
        """``F_z^{-1} v``."""
        return self._blockwise(v, "solve_F", 1.0 / np.sqrt(self.q_beta))

    def solve_Ft(self, v):
        """``F_z^{-T} v``."""
        return self._blockwise(v, "solve_Ft", 1.0 / np.sqrt(self.q_beta))

    def apply_F(self, v):
        return self._blockwise(v, "apply_F", np.sqrt(self.q_beta))

    def apply_Ft(self, v):
        return self._blockwise(v, "apply_Ft", np.sqrt(self.q_beta))

    def apply_Q(self, v):
        return self._blockwise(v, "apply_Q", self.q_beta)

    def solve(self, v):
        """``Q_z^{-1} v``."""
        return self.solve_F(self.solve_Ft(v))

    def logdet(self) -> float:
        """``log |Q_z|`` from the Kronecker determinant identity."""
        return (sum(fa.logdet() for fa in self.factors)
                + self.p * np.log(self.q_beta))

    def sample(self, seed) -> np.ndarray:
        """Draw ``z ~ N(0, Q_z^{-1})`` as ``F_z^{-1} e`` with ``e`` standard normal."""
        rng = np.random.default_rng(seed)
        return self.solve_F(rng.standard_normal(self.n))

    # -- dense/sparse views for small problems ---------------------------
    @cached_property
    def Q_sparse(self) -> sp.csr_matrix:
        blocks = [sp.kron(fa.Qt, fa.Qs) for fa in self.factors]
        if self.p:
            blocks.append(self.q_beta * sp.identity(self.p))
        return sp.block_diag(blocks, format="csr")

    def dense_F(self) -> np.ndarray:
        blocks = [np.kron(fa.chol_t.factor_matrix(), fa.chol_s.factor_matrix())
                  for fa in self.factors]
        if self.p:
            blocks.append(np.sqrt(self.q_beta) * np.eye(self.p))
        return sp.block_diag(blocks).toarray()


def assemble(fields, n_t: int, p: int = 0,
             q_beta: float = DEFAULT_Q_BETA) -> PrecisionModel:
    """Build and factor the joint prior precision."""
    return PrecisionModel(fields, n_t, p, q_beta)


def logdet_Qz(model: PrecisionModel) -> float:
    return model.logdet()


def sample_latent(model: PrecisionModel, seed) -> np.ndarray:
    return model.sample(seed)
