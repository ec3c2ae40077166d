"""Temporal CAR covariance, Kronecker noise and the region-specific link.

Vectors over ``J`` times of an ``m``-variate block are stacked time-major:
entry ``j*m + a`` is variable ``a`` at time ``j``, so their covariance is
``D kron Sigma`` with block ``(j, l)`` equal to ``D[j, l] * Sigma``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import (
    DimensionMismatch,
    InvalidAdjacency,
    NotPositiveDefinite,
    SingularMatrix,
    ValidationError,
)


def path_adjacency(J: int) -> np.ndarray:
    """h_jl = 1 iff |j - l| = 1."""
    H = np.zeros((J, J))
    idx = np.arange(J - 1)
    H[idx, idx + 1] = 1.0
    H[idx + 1, idx] = 1.0
    return H


@dataclass(frozen=True)
class CarSpec:
    J: int
    rho: float
    H: np.ndarray

    @classmethod
    def path(cls, J: int, rho: float) -> "CarSpec":
        return cls(J, rho, path_adjacency(J))

    def to_dict(self) -> dict:
        return {"J": self.J, "rho": self.rho, "H": np.asarray(self.H).tolist()}


def car_cov(spec: CarSpec) -> np.ndarray:
    """Temporal covariance factor ``(I - rho H)^{-1}``."""
    H = np.asarray(spec.H, dtype=np.float64)
    J = spec.J
    if H.shape != (J, J):
        raise InvalidAdjacency(f"adjacency must be {J}x{J}, got {H.shape}")
    if not np.array_equal(H, H.T) or np.any(np.diag(H) != 0) or not np.all(np.isin(H, (0.0, 1.0))):
        raise InvalidAdjacency("adjacency must be symmetric 0/1 with zero diagonal")
    A = np.eye(J) - spec.rho * H
    # I - rho H is PD iff |rho| * spectral radius < 1; anything else is
    # either singular or indefinite and useless as a covariance
    eig = np.linalg.eigvalsh(A)
    if np.min(np.abs(eig)) < 1e-12:
        raise SingularMatrix(f"I - rho H is singular for rho={spec.rho}")
    if np.min(eig) <= 0:
        raise SingularMatrix(f"I - rho H is not positive definite for rho={spec.rho}")
    D = np.linalg.inv(A)
    return 0.5 * (D + D.T)


def kron_cov(D, Sigma) -> np.ndarray:
    D = np.asarray(D, dtype=np.float64)
    Sigma = np.asarray(Sigma, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1] or Sigma.ndim != 2 or Sigma.shape[0] != Sigma.shape[1]:
        raise DimensionMismatch("D and Sigma must be square matrices")
    return np.kron(D, Sigma)


def _chol(M, name):
    try:
        return linalg.cholesky(np.asarray(M, dtype=np.float64), lower=True)
    except linalg.LinAlgError:
        raise NotPositiveDefinite(f"{name} is not positive definite") from None


def draw_temporal_noise(D, Sigma, count: int, rng) -> np.ndarray:
    """``count`` draws of N(0, D kron Sigma) as ``(count, J, m)``.

    Uses ``L_D W L_Sigma^T`` with W standard normal, which has the required
    covariance without forming the Kronecker factor.
    """
    LD = _chol(D, "D")
    LS = _chol(Sigma, "Sigma")
    J, m = LD.shape[0], LS.shape[0]
    W = rng.standard_normal((count, J, m))
    return np.einsum("jl,clb,ab->cja", LD, W, LS, optimize=True)


def sample_temporal_noise(D, Sigma, count: int, seed) -> np.ndarray:
    """``count`` draws of length ``J*m``, deterministic in ``seed``."""
    if count < 0:
        raise ValidationError("count must be non-negative")
    D = np.asarray(D, dtype=np.float64)
    Sigma = np.asarray(Sigma, dtype=np.float64)
    out = draw_temporal_noise(D, Sigma, count, np.random.default_rng(seed))
    return out.reshape(count, D.shape[0] * Sigma.shape[0])


# -- region-specific structural link -------------------------------------

LINK_FAMILIES = {
    "identity": (lambda x: x, 1),
    "poly_sin": (lambda x: np.concatenate([x, x * x, np.sin(x)], axis=-1), 3),
}


@dataclass(frozen=True)
class ConfounderLink:
    """Maps explanatory confounders to explained ones, region by region.

    ``gamma`` has shape ``(n_regions, out_dim, q)`` where ``q`` is the output
    size of the named family applied to an ``in_dim`` input.
    """

    gamma: np.ndarray
    family: str = "poly_sin"

    def __post_init__(self):
        if self.family not in LINK_FAMILIES:
            raise ValidationError(f"unknown link family {self.family!r}")
        g = np.asarray(self.gamma, dtype=np.float64)
        if g.ndim != 3:
            raise DimensionMismatch("gamma must be (regions, out_dim, q)")
        if self.q % LINK_FAMILIES[self.family][1]:
            raise DimensionMismatch("q is not a multiple of the family width")
        object.__setattr__(self, "gamma", g)

    @property
    def q(self) -> int:
        return self.gamma.shape[2]

    @property
    def in_dim(self) -> int:
        return self.q // LINK_FAMILIES[self.family][1]

    @property
    def out_dim(self) -> int:
        return self.gamma.shape[1]

    def G(self, x):
        return LINK_FAMILIES[self.family][0](np.asarray(x, dtype=np.float64))

    def to_dict(self) -> dict:
        return {"family": self.family, "gamma": self.gamma.tolist()}


def confounder_link_apply(link: ConfounderLink, region, x_c1, u_c2):
    """``Gamma_region G(x_c1) + u_c2``; ``region`` may be an index array for batches."""
    x = np.asarray(x_c1, dtype=np.float64)
    u = np.asarray(u_c2, dtype=np.float64)
    if x.shape[-1] != link.in_dim or u.shape[-1] != link.out_dim:
        raise DimensionMismatch(
            f"link expects inputs of size {link.in_dim} and {link.out_dim}, "
            f"got {x.shape[-1]} and {u.shape[-1]}"
        )
    region = np.asarray(region)
    if np.any(region < 0) or np.any(region >= link.gamma.shape[0]):
        raise ValidationError("region index out of range")
    g = link.G(x)
    gam = link.gamma[region]
    return np.einsum("...oq,...q->...o", gam, g) + u
