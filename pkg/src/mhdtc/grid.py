"""Radial Chebyshev collocation for the annulus R1 <= r <= R2.

Nodes are Gauss-Lobatto points mapped affinely to the gap,

    r_j = (R1+R2)/2 + (R2-R1)/2 * cos(pi*j/Nr),    j = 0..Nr,

stored descending so r_0 = R2 and r_Nr = R1.  D1 is the dense collocation
derivative matrix (exact for polynomials of degree <= Nr); D2 = D1 @ D1.
Quadrature weights fold in the cylindrical Jacobian,

    sum_j w_j f(r_j)  ~  int_R1^R2 f(r) r dr,

via Clenshaw-Curtis weights on the gap times r_j.  All dense, all float64;
sizes here stay in the hundreds so no sparsity is worth the bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class ModeIndex(NamedTuple):
    """Fourier mode label (azimuthal m, axial k)."""

    m: int
    k: int


@dataclass
class RadialGrid:
    R1: float
    R2: float
    Nr: int
    r: np.ndarray = field(repr=False)
    D1: np.ndarray = field(repr=False)
    D2: np.ndarray = field(repr=False)
    w: np.ndarray = field(repr=False)

    @property
    def npts(self) -> int:
        return self.Nr + 1

    def refined(self, factor: int = 2) -> "RadialGrid":
        return build_radial_grid(self.R1, self.R2, factor * self.Nr)


def _cheb_diff(N: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Lobatto nodes x_j = cos(pi*j/N) (descending) and derivative matrix."""
    if N == 0:
        return np.array([1.0]), np.zeros((1, 1))
    x = np.cos(np.pi * np.arange(N + 1) / N)
    c = np.ones(N + 1)
    c[0] = c[N] = 2.0
    c *= (-1.0) ** np.arange(N + 1)
    X = np.tile(x, (N + 1, 1)).T
    dX = X - X.T
    D = np.outer(c, 1.0 / c) / (dX + np.eye(N + 1))
    # negative-sum trick: diagonal from exactness on constants
    D -= np.diag(D.sum(axis=1))
    return x, D


def _clencurt(N: int) -> np.ndarray:
    """Clenshaw-Curtis weights on [-1, 1] for the N+1 Gauss-Lobatto nodes."""
    if N == 0:
        return np.array([2.0])
    theta = np.pi * np.arange(N + 1) / N
    w = np.zeros(N + 1)
    v = np.ones(N - 1)
    t = theta[1:N]
    if N % 2 == 0:
        w[0] = w[N] = 1.0 / (N * N - 1)
        for kk in range(1, N // 2):
            v -= 2.0 * np.cos(2 * kk * t) / (4 * kk * kk - 1)
        v -= np.cos(N * t) / (N * N - 1)
    else:
        w[0] = w[N] = 1.0 / (N * N)
        for kk in range(1, (N - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * kk * t) / (4 * kk * kk - 1)
    w[1:N] = 2.0 * v / N
    return w


def build_radial_grid(R1: float, R2: float, Nr: int) -> RadialGrid:
    """Collocation grid on [R1, R2] with Nr+1 nodes.

    Parameters
    ----------
    R1, R2 : inner and outer radii, 0 < R1 < R2.
    Nr : polynomial degree; Nr >= 4 keeps D2 and the weights meaningful.
    """
    if not (0.0 < R1 < R2):
        raise ValueError(f"need 0 < R1 < R2, got R1={R1!r}, R2={R2!r}")
    if Nr < 4:
        raise ValueError(f"need Nr >= 4, got Nr={Nr}")
    x, Dx = _cheb_diff(Nr)
    half = 0.5 * (R2 - R1)
    mid = 0.5 * (R2 + R1)
    r = mid + half * x
    # r is affine in x with slope +half, so d/dr = (1/half) d/dx
    D1 = Dx / half
    D2 = D1 @ D1
    w = half * _clencurt(Nr) * r
    return RadialGrid(R1=float(R1), R2=float(R2), Nr=int(Nr), r=r, D1=D1, D2=D2, w=w)
