"""Orthonormal basis expansion of curve-valued variables.

Curves live on a grid ``t_1 < ... < t_G``; integrals use the trapezoidal
rule on that grid. The raw basis family is re-orthonormalized under the
same rule, so expansion and reconstruction are exact inverses on the
span of the basis regardless of grid spacing.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre

from .errors import DimensionMismatch, GridMismatch, TooFewGridPoints, ValidationError

BASIS_KINDS = ("fourier", "legendre")


def trapezoid_weights(grid) -> np.ndarray:
    """Quadrature weights w with sum_g w_g f(t_g) ~ integral of f over the grid."""
    grid = np.asarray(grid, dtype=np.float64)
    h = np.diff(grid)
    w = np.zeros_like(grid)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return w


def _raw_fourier(s, n_basis, length):
    cols = [np.ones_like(s)]
    freq = 1
    while len(cols) < n_basis:
        cols.append(np.sqrt(2.0) * np.sin(2 * np.pi * freq * s))
        if len(cols) < n_basis:
            cols.append(np.sqrt(2.0) * np.cos(2 * np.pi * freq * s))
        freq += 1
    return np.column_stack(cols) / np.sqrt(length)


def _raw_legendre(s, n_basis, length):
    x = 2.0 * s - 1.0
    cols = []
    for m in range(n_basis):
        c = np.zeros(m + 1)
        c[m] = 1.0
        cols.append(legendre.legval(x, c) * np.sqrt(2 * m + 1))
    return np.column_stack(cols) / np.sqrt(length)


def _orthonormalize(B, w):
    # modified Gram-Schmidt in the weighted inner product, two passes
    Q = B.copy()
    k = Q.shape[1]
    for _ in range(2):
        for j in range(k):
            for i in range(j):
                Q[:, j] -= np.dot(Q[:, i] * w, Q[:, j]) * Q[:, i]
            norm = np.sqrt(np.dot(Q[:, j] * w, Q[:, j]))
            if norm < 1e-12:
                raise ValidationError("basis is rank deficient on this grid")
            Q[:, j] /= norm
    return Q


@dataclass(frozen=True)
class BasisSystem:
    kind: str
    n_basis: int
    grid: np.ndarray
    weights: np.ndarray
    values: np.ndarray  # (G, n_basis)

    def gram(self) -> np.ndarray:
        return self.values.T @ (self.weights[:, None] * self.values)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "n_basis": self.n_basis, "grid": self.grid.tolist()}


def build_basis(kind: str = "fourier", n_basis: int = 6, grid=None) -> BasisSystem:
    if kind not in BASIS_KINDS:
        raise ValidationError(f"unknown basis kind {kind!r}; expected one of {BASIS_KINDS}")
    if n_basis < 1:
        raise ValidationError("n_basis must be at least 1")
    grid = np.linspace(0.0, 1.0, 64) if grid is None else np.asarray(grid, dtype=np.float64)
    if grid.ndim != 1 or np.any(np.diff(grid) <= 0):
        raise ValidationError("grid must be one-dimensional and strictly increasing")
    if grid.size < 2 * n_basis:
        raise TooFewGridPoints(f"{grid.size} grid points for {n_basis} basis functions")
    length = grid[-1] - grid[0]
    s = (grid - grid[0]) / length
    raw = (_raw_fourier if kind == "fourier" else _raw_legendre)(s, n_basis, length)
    w = trapezoid_weights(grid)
    values = _orthonormalize(raw, w)
    return BasisSystem(kind, n_basis, grid, w, values)


def expand(curve, basis: BasisSystem) -> np.ndarray:
    """Coefficients integral b_m(t) x(t) dt; accepts a batch ``(..., G)``."""
    curve = np.asarray(curve, dtype=np.float64)
    if curve.shape[-1] != basis.grid.size:
        raise GridMismatch(
            f"curve has {curve.shape[-1]} points, basis grid has {basis.grid.size}"
        )
    return (curve * basis.weights) @ basis.values


def reconstruct(coeffs, basis: BasisSystem) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape[-1] != basis.n_basis:
        raise DimensionMismatch(
            f"{coeffs.shape[-1]} coefficients for a {basis.n_basis}-function basis"
        )
    return coeffs @ basis.values.T
