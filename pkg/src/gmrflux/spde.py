"""Matérn-like spatial precision from the SPDE discretization (alpha = 2).

Distances are great-circle distances on the unit sphere, i.e. in Earth radii,
so ``kappa`` has units of inverse Earth radius.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InputError, NotPositiveDefinite
from .mesh import FemMatrices


@dataclass(frozen=True)
class SpdeParams:
    """Scale ``tau`` and squared inverse range ``kappa2`` (alpha fixed at 2)."""

    tau: float
    kappa2: float
    alpha: int = 2

    def __post_init__(self):
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise InputError(f"tau must be positive, got {self.tau}")
        if not (self.kappa2 > 0 and math.isfinite(self.kappa2)):
            raise InputError(f"kappa2 must be positive, got {self.kappa2}")
        if self.alpha != 2:
            raise InputError("only alpha = 2 is supported")

    @property
    def kappa(self) -> float:
        return math.sqrt(self.kappa2)

    @classmethod
    def from_kappa(cls, tau: float, kappa: float) -> "SpdeParams":
        return cls(tau, kappa * kappa)


def build_Qs(fem: FemMatrices, params: SpdeParams) -> sp.csr_matrix:
    """``tau (kappa^2 C + G)^T C^{-1} (kappa^2 C + G) tau`` with lumped C."""
    c = fem.mass_lumped
    if np.any(c <= 0):
        raise NotPositiveDefinite("lumped mass must be strictly positive")
    K = (params.kappa2 * sp.diags(c) + fem.stiffness).tocsr()
    Q = (K.T @ sp.diags(1.0 / c) @ K) * (params.tau ** 2)
    Q = 0.5 * (Q + Q.T)
    return Q.tocsr()


def marginal_spatial_std(params: SpdeParams) -> float:
    """Continuum marginal standard deviation ``1 / (tau kappa sqrt(4 pi))``."""
    return 1.0 / (params.tau * params.kappa * math.sqrt(4.0 * math.pi))


def spatial_range(params: SpdeParams) -> float:
    """Distance (Earth radii) where the correlation drops to about 0.1."""
    return math.sqrt(8.0) / params.kappa
