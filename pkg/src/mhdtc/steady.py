"""Taylor-Couette steady state of the annulus flow.

With the inner wall at rest and the outer wall moving rigidly at
(beta1, beta2) in (theta, z), the stationary velocity is the 1D profile

    u = (a1/r + a3 r) e_theta + (a2 log r + a4) e_z,

    a3 = beta1 R2 / (R2^2 - R1^2),   a1 = -a3 R1^2,
    a2 = beta2 / log(R2/R1),         a4 = -a2 log R1.

Both parts are harmonic for the cylindrical vector Laplacian, so the
viscous term vanishes identically and the only force balance left is
radial: the centripetal pressure gradient

    dp/dr = u_theta^2 / r = a1^2/r^3 + 2 a1 a3 / r + a3^2 r.

ns_residual audits this balance from the closed forms sampled at the
collocation nodes, which is why it is at roundoff level independently of
nu and Nr.  A diagnostic variant drops the 2 a1 a3 / r cross term of the
expanded square; that field is not a steady solution and its residual is
O(1), which steady-check surfaces on purpose.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import SpectralField, lp_norm
from .grid import RadialGrid


@dataclass(frozen=True)
class TCProfile:
    R1: float
    R2: float
    beta1: float
    beta2: float
    a1: float
    a2: float
    a3: float
    a4: float

    @classmethod
    def from_walls(cls, R1, R2, beta1, beta2) -> "TCProfile":
        if not (0.0 < R1 < R2):
            raise ValueError(f"need 0 < R1 < R2, got R1={R1!r}, R2={R2!r}")
        if beta1 == 0.0 or beta2 == 0.0:
            raise ValueError("wall speeds beta1, beta2 must be nonzero")
        a3 = beta1 * R2 / (R2**2 - R1**2)
        a1 = -a3 * R1**2
        a2 = beta2 / np.log(R2 / R1)
        a4 = -a2 * np.log(R1)
        return cls(R1, R2, beta1, beta2, a1, a2, a3, a4)

    # -- profile and derivatives ------------------------------------------

    def u_theta(self, r):
        return self.a1 / r + self.a3 * r

    def du_theta(self, r):
        return -self.a1 / r**2 + self.a3

    def d2u_theta(self, r):
        return 2.0 * self.a1 / r**3

    def u_z(self, r):
        return self.a2 * np.log(r) + self.a4

    def du_z(self, r):
        return self.a2 / r

    def d2u_z(self, r):
        return -self.a2 / r**2

    def omega(self, r):
        """Angular velocity u_theta / r."""
        return self.a1 / r**2 + self.a3

    def r_domega(self, r):
        """r * d(omega)/dr, the azimuthal shear that feeds stretching."""
        return -2.0 * self.a1 / r**2

    def dp_dr(self, r, cross_term=True):
        """Radial pressure gradient u_theta^2/r; set cross_term=False for the
        two-term diagnostic variant (not a steady balance)."""
        full = self.a1**2 / r**3 + self.a3**2 * r
        if cross_term:
            full = full + 2.0 * self.a1 * self.a3 / r
        return full


def evaluate_tc(profile: TCProfile, grid: RadialGrid, Mmax=0, Kmax=0, Lz=1.0) -> SpectralField:
    """The steady profile as a mode-(0,0) spectral field."""
    if grid.R1 != profile.R1 or grid.R2 != profile.R2:
        raise ValueError("grid radii do not match profile radii")
    f = SpectralField.zeros(grid, Mmax, Kmax, "none", Lz)
    f.coeffs[1, Mmax, Kmax, :] = profile.u_theta(grid.r)
    f.coeffs[2, Mmax, Kmax, :] = profile.u_z(grid.r)
    return f


def ns_residual(profile: TCProfile, grid: RadialGrid, nu: float, cross_term=True) -> float:
    """Relative L^2 residual of (u.grad)u + grad p - nu lap u at the nodes.

    All terms come from the profile's closed forms, so this audits the
    steady state as an identity, not the differentiation matrices:
    (u.grad)u = (-u_theta^2/r, 0, 0), grad p = (dp_dr, 0, 0), and the
    viscous term is assembled from the analytic derivatives (it cancels
    to roundoff since the profile is harmonic).
    """
    r = grid.r
    uth, uz = profile.u_theta(r), profile.u_z(r)
    res_r = -uth**2 / r + profile.dp_dr(r, cross_term=cross_term)
    lap_th = profile.d2u_theta(r) + profile.du_theta(r) / r - uth / r**2
    lap_z = profile.d2u_z(r) + profile.du_z(r) / r
    res_th = -nu * lap_th
    res_z = -nu * lap_z
    num = np.sqrt((grid.w * (res_r**2 + res_th**2 + res_z**2)).sum())
    den = np.sqrt((grid.w * (uth**2 + uz**2)).sum())
    return float(num / den)


def w1inf_norm(profile: TCProfile, grid: RadialGrid = None, nsample=4096) -> float:
    """max_r (|u| + |d_r u| + |u|/r), on the grid nodes or a fine sampling.

    The nodal value increases monotonically to the analytic supremum under
    refinement; the fine sampling is the grid-free route used by presets.
    """
    if grid is not None:
        r = grid.r
    else:
        r = np.linspace(profile.R1, profile.R2, nsample)
    mag = np.hypot(profile.u_theta(r), profile.u_z(r))
    dmag = np.hypot(profile.du_theta(r), profile.du_z(r))
    return float((mag + dmag + mag / r).max())


def tc_l2_norm(profile: TCProfile, Lz=1.0) -> float:
    """||u_TC||_{L^2} over the annulus, closed form.

    int u_theta^2 r dr = a1^2 log(R2/R1) + a1 a3 (R2^2-R1^2) + a3^2 (R2^4-R1^4)/4
    and the log-profile integrals use int r log r = r^2/2 log r - r^2/4,
    int r log^2 r = r^2/2 log^2 r - r^2/2 log r + r^2/4.
    """
    p = profile
    R1, R2 = p.R1, p.R2

    def F_log(r):
        return r**2 / 2 * np.log(r) - r**2 / 4

    def F_log2(r):
        return r**2 / 2 * np.log(r) ** 2 - r**2 / 2 * np.log(r) + r**2 / 4

    ith = (
        p.a1**2 * np.log(R2 / R1)
        + p.a1 * p.a3 * (R2**2 - R1**2)
        + p.a3**2 * (R2**4 - R1**4) / 4
    )
    iz = (
        p.a2**2 * (F_log2(R2) - F_log2(R1))
        + 2 * p.a2 * p.a4 * (F_log(R2) - F_log(R1))
        + p.a4**2 * (R2**2 - R1**2) / 2
    )
    return float(np.sqrt((2 * np.pi) * (2 * np.pi * Lz) * (ith + iz)))
