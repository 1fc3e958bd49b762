"""Sparse Cholesky factorization of banded-after-reordering SPD matrices.

Factorizes ``P Q P^T = R^T R`` with ``P`` a reverse Cuthill-McKee permutation
and ``R`` upper triangular in LAPACK band storage. Callers work with the
square factor ``F = R P`` (``Q = F^T F``); every solve below is expressed in
terms of ``F`` so the permutation never leaks out.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cholesky_banded, solve_triangular
from scipy.linalg.lapack import dtbtrs
from scipy.sparse.csgraph import reverse_cuthill_mckee

from .errors import NotPositiveDefinite

# factors up to this size also keep an explicit inverse: many-right-hand-side
# solves then become one matrix product, much faster than band substitution
DENSE_MAX = 600


class SparseCholesky:
    """Factor ``Q = F^T F`` of a sparse symmetric positive definite matrix.

    Parameters
    ----------
    Q : sparse or dense (n, n) matrix
    reorder : bool
        Apply reverse Cuthill-McKee before factorizing. Leave off for
        matrices that are already narrow-banded (temporal precisions).
    """

    def __init__(self, Q, reorder: bool = True):
        Q = sp.csr_matrix(Q)
        n = Q.shape[0]
        if reorder and n > 1:
            perm = reverse_cuthill_mckee(Q, symmetric_mode=True).astype(np.int64)
        else:
            perm = np.arange(n)
        Qp = Q[perm][:, perm].tocoo()
        upper = Qp.row <= Qp.col
        r, c, d = Qp.row[upper], Qp.col[upper], Qp.data[upper]
        u = int((c - r).max()) if r.size else 0
        ab = np.zeros((u + 1, n))
        np.add.at(ab, (u + r - c, c), d)
        try:
            cb = cholesky_banded(ab, lower=False, check_finite=True)
        except (LinAlgError, ValueError) as exc:
            raise NotPositiveDefinite(str(exc)) from exc
        self.n = n
        self.bandwidth = u
        self.perm = perm
        self._band = np.asfortranarray(cb)
        self._finv = None
        if n <= DENSE_MAX:
            # F^{-1} = P^T R^{-1}
            rinv = solve_triangular(self._upper_dense(), np.eye(n), check_finite=False)
            self._finv = np.empty_like(rinv)
            self._finv[perm] = rinv

    @property
    def diag(self) -> np.ndarray:
        """Diagonal of the triangular factor (permuted order)."""
        return self._band[self.bandwidth]

    def logdet(self) -> float:
        """``log |Q|``."""
        return 2.0 * float(np.sum(np.log(self.diag)))

    def _tri(self, b, trans):
        b2 = b.reshape(self.n, -1)
        x, info = dtbtrs(self._band, b2, uplo="U", trans=trans)
        if info != 0:
            raise NotPositiveDefinite(f"triangular solve failed (info={info})")
        return x.reshape(b.shape)

    def solve_F(self, b: np.ndarray) -> np.ndarray:
        """``F^{-1} b`` along axis 0 (b may carry trailing axes)."""
        b = np.asarray(b, dtype=float)
        if self._finv is not None:
            return (self._finv @ b.reshape(self.n, -1)).reshape(b.shape)
        x = self._tri(b, "N")
        out = np.empty_like(x)
        out[self.perm] = x
        return out

    def solve_Ft(self, b: np.ndarray) -> np.ndarray:
        """``F^{-T} b`` along axis 0."""
        b = np.asarray(b, dtype=float)
        if self._finv is not None:
            return (self._finv.T @ b.reshape(self.n, -1)).reshape(b.shape)
        return self._tri(np.ascontiguousarray(b[self.perm]), "T")

    def solve_Ft_rows(self, B: np.ndarray) -> np.ndarray:
        """Rows of ``B`` (shape ``(m, n)``) each replaced by ``F^{-T} b``."""
        B = np.asarray(B, dtype=float)
        if self._finv is not None:
            return B @ self._finv
        return self.solve_Ft(B.T).T

    def solve_Ft_axis(self, X: np.ndarray, axis: int) -> np.ndarray:
        """``F^{-T}`` applied along ``axis`` of ``X``."""
        X = np.asarray(X, dtype=float)
        axis = axis % X.ndim
        if self._finv is not None and axis == X.ndim - 2:
            return np.matmul(self._finv.T, X)
        Y = self.solve_Ft(np.ascontiguousarray(np.moveaxis(X, axis, 0)))
        return np.moveaxis(Y, 0, axis)

    def apply_F(self, x: np.ndarray) -> np.ndarray:
        """``F x`` along axis 0."""
        x = np.asarray(x, dtype=float)
        return self._band_matmul(x[self.perm], transpose=False)

    def apply_Ft(self, y: np.ndarray) -> np.ndarray:
        """``F^T y`` along axis 0."""
        y = np.asarray(y, dtype=float)
        z = self._band_matmul(y, transpose=True)
        out = np.empty_like(z)
        out[self.perm] = z
        return out

    def solve(self, b: np.ndarray) -> np.ndarray:
        """``Q^{-1} b``."""
        return self.solve_F(self.solve_Ft(b))

    def _band_matmul(self, x, transpose):
        u, n = self.bandwidth, self.n
        xs = x.reshape(n, -1)
        out = np.zeros_like(xs)
        for k in range(u + 1):
            # super-diagonal k of R: R[j-k, j] stored at band[u-k, j]
            d = self._band[u - k, k:]
            if transpose:
                out[k:] += d[:, None] * xs[: n - k]
            else:
                out[: n - k] += d[:, None] * xs[k:]
        return out.reshape(x.shape)

    def _upper_dense(self) -> np.ndarray:
        u, n = self.bandwidth, self.n
        R = np.zeros((n, n))
        for k in range(u + 1):
            idx = np.arange(k, n)
            R[idx - k, idx] = self._band[u - k, k:]
        return R

    def factor_matrix(self) -> np.ndarray:
        """Dense ``F = R P`` (tests and small problems only)."""
        F = np.zeros((self.n, self.n))
        F[:, self.perm] = self._upper_dense()
        return F
