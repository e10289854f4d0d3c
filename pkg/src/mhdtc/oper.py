"""Linearized blocks, Leray projection and nonlinear terms.

Per Fourier mode (m, k) and with Phi(r) = m*Omega + (k/Lz)*U, the advection
by the steady profile and the stretching against it reduce to multiplication
operators; writing Omega = u_th/r and U = u_z,

    dynamo rows (B-equation, -(u.grad)B + (B.grad)u + eps lap B):
        r:  -i Phi B_r                          + eps (lap B)_r
        th: -i Phi B_th + r Omega' B_r          + eps (lap B)_th
        z:  -i Phi B_z  + U' B_r                + eps (lap B)_z

    velocity rows before projection (-(u.grad)v - (v.grad)u + nu lap v):
        r:  -i Phi v_r  + 2 Omega v_th          + nu (lap v)_r
        th: -i Phi v_th - (2 Omega + r Omega') v_r + nu (lap v)_th
        z:  -i Phi v_z  - U' v_r                + nu (lap v)_z

(the advection curvature term and stretching cancel in the dynamo r-row and
double up in the velocity rows; 2*Omega + r*Omega' = 2*a3 for the profile).

The velocity block composes the discrete Leray projector with the PDE rows,
then wall rows are replaced by the boundary conditions (tau style).  The
projector solves lap phi = div f with Neumann data phi' = f_r at the walls;
mode (0, 0) is bordered with a mean-zero constraint.  All per-mode Poisson
and Helmholtz systems share one structure, a k-independent radial matrix
plus a scalar shift on the interior rows, and are solved through a per-|m|
QZ factorization with batched shifted triangular back-substitution
(ShiftedFamily), which keeps memory in the tens of MB at production sizes.

Nonlinear terms are pseudospectral: products on a >= (3M+2) x (3K+2)
physical grid (alias-free for quadratic products), derivatives in
coefficient space.  N(a) = P div(a x a) with the cylindrical curvature
terms -T_thth/r and +T_rth/r; M(a, b) = curl(a x b), whose discrete
divergence is exactly zero because div(curl .) cancels at matrix level.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
import scipy.linalg as sla

from .field import (
    ScalarField,
    SpectralField,
    curl,
    divergence,
    from_physical,
    gradient,
    inner_l2,
    l2_norm_parseval,
    phys_sizes,
    to_physical,
    vector_laplacian,
)
from .grid import ModeIndex, RadialGrid, build_radial_grid
from .steady import TCProfile

WALLS = (0, -1)  # node indices of r=R2 and r=R1


# ---------------------------------------------------------------------------
# batched shifted-family solver

def _batched_upper_solve(S, T, c, b):
    """Solve (S[m] + c[m,k] T[m]) x = b[m,k] with S, T upper triangular."""
    nm, nk, n = b.shape
    x = np.empty_like(b)
    work = b.copy()
    for i in range(n - 1, -1, -1):
        dii = S[:, i, i][:, None] + c * T[:, i, i][:, None]
        xi = work[:, :, i] / dii
        x[:, :, i] = xi
        if i:
            work[:, :, :i] -= xi[:, :, None] * S[:, None, :i, i]
            work[:, :, :i] -= (xi * c)[:, :, None] * T[:, None, :i, i]
    return x


class ShiftedFamily:
    """Factorization of the pencil family A[m] + c[m,k] * diag(mask).

    QZ gives A = Q S Z^H and diag(mask) = Q T Z^H per m, so every shifted
    system is a pair of unitary applications around one triangular solve;
    the solves run batched over all (m, k) at once.
    """

    def __init__(self, mats, mask, shifts):
        mats = np.asarray(mats, dtype=complex)
        nm, n, _ = mats.shape
        E = np.diag(mask.astype(float)).astype(complex)
        QH = np.empty_like(mats)
        Z = np.empty_like(mats)
        S = np.empty_like(mats)
        T = np.empty_like(mats)
        for i in range(nm):
            S[i], T[i], Q, Zi = sla.qz(mats[i], E, output="complex")
            QH[i] = Q.conj().T
            Z[i] = Zi
        self.QH, self.Z, self.S, self.T = QH, Z, S, T
        self.shifts = np.asarray(shifts, dtype=complex)
        self.mats = mats
        self.mask = mask.astype(float)

    def solve(self, rhs):
        """rhs shape (nm, nk, n) -> solution of (A[m] + c[m,k] E) x = rhs."""
        y = np.matmul(self.QH, rhs.transpose(0, 2, 1)).transpose(0, 2, 1)
        w = _batched_upper_solve(self.S, self.T, self.shifts, y)
        return np.matmul(self.Z, w.transpose(0, 2, 1)).transpose(0, 2, 1)

    def apply(self, x):
        """(A[m] + c[m,k] E) x, for residual checks and refinement."""
        ax = np.matmul(self.mats, x.transpose(0, 2, 1)).transpose(0, 2, 1)
        return ax + self.shifts[:, :, None] * self.mask * x


# ---------------------------------------------------------------------------
# scalar per-mode operators

def scalar_lap_matrix(grid, msq, ksq_t):
    """D2 + (1/r)D1 - m^2/r^2 - (k/Lz)^2 as a dense matrix."""
    r = grid.r
    return grid.D2 + (grid.D1 / r[:, None]) - np.diag(msq / r**2 + ksq_t)


def poisson_neumann_matrix(grid, msq):
    """k-free part of the Poisson operator with Neumann wall rows."""
    A = scalar_lap_matrix(grid, msq, 0.0)
    for j in WALLS:
        A[j, :] = grid.D1[j, :]
    return A


class LerayProjector:
    """Discrete Leray projection for all modes of an (Mmax, Kmax) field."""

    def __init__(self, grid, Mmax, Kmax, Lz=1.0):
        self.grid, self.Mmax, self.Kmax, self.Lz = grid, Mmax, Kmax, Lz
        n = grid.npts
        mask = np.ones(n)
        mask[0] = mask[-1] = 0.0  # wall rows carry no k^2 shift
        mats = np.stack(
            [poisson_neumann_matrix(grid, float(m * m)) for m in range(Mmax + 1)]
        )[np.abs(np.arange(-Mmax, Mmax + 1))]
        kt = np.arange(-Kmax, Kmax + 1) / Lz
        shifts = np.tile(-(kt**2), (2 * Mmax + 1, 1))
        # the unshifted (0,0) pencil member is singular; park it at a harmless
        # shift, its slot is overwritten by the bordered solve below
        shifts[Mmax, Kmax] = -1.0
        self.family = ShiftedFamily(mats, mask, shifts)
        # mode (0,0): pure Neumann is singular up to constants; border the
        # interior rows with a compatibility multiplier and pin the mean
        A00 = poisson_neumann_matrix(grid, 0.0)
        B = np.zeros((n + 1, n + 1))
        B[:n, :n] = A00
        B[:n, n] = mask
        B[n, :n] = grid.w
        self.lu00 = sla.lu_factor(B)
        self._mask = mask

    def _solve_all(self, rhs):
        """Poisson solve for every mode, one refinement pass included."""
        phi = self.family.solve(rhs)
        resid = rhs - self.family.apply(phi)
        phi = phi + self.family.solve(resid)
        # overwrite the (0,0) slot with the bordered solve
        M, K = self.Mmax, self.Kmax
        n = self.grid.npts
        b = np.zeros(n + 1, dtype=complex)
        b[:n] = rhs[M, K]
        sol = sla.lu_solve(self.lu00, b)
        r0 = b - np.r_[
            self.family.mats[M] @ sol[:n] + sol[n] * self._mask,
            np.dot(self.grid.w, sol[:n]),
        ]
        sol = sol + sla.lu_solve(self.lu00, r0)
        phi[M, K] = sol[:n]
        return phi

    def project(self, f: SpectralField) -> SpectralField:
        rhs = divergence(f).coeffs.copy()
        for j in WALLS:
            rhs[:, :, j] = f.coeffs[0, :, :, j]  # Neumann data phi' = f_r
        phi = self._solve_all(rhs)
        grad = gradient(ScalarField(self.grid, self.Mmax, self.Kmax, phi, f.Lz))
        return replace(f, coeffs=f.coeffs - grad.coeffs)


@lru_cache(maxsize=8)
def _cached_projector(R1, R2, Nr, Mmax, Kmax, Lz):
    return LerayProjector(build_radial_grid(R1, R2, Nr), Mmax, Kmax, Lz)


def leray_project(f: SpectralField, projector: LerayProjector = None) -> SpectralField:
    """P f = f - grad phi, with lap phi = div f and phi' = f_r at the walls."""
    if projector is None:
        g = f.grid
        projector = _cached_projector(g.R1, g.R2, g.Nr, f.Mmax, f.Kmax, f.Lz)
    return projector.project(f)


# ---------------------------------------------------------------------------
# per-mode dense blocks

@dataclass
class ModeOperator:
    kind: str  # 'dynamo' | 'linns' | 'block'
    mode: ModeIndex
    diffusivity: object  # eps, nu, or (nu, eps) for the direct-sum block
    profile: TCProfile
    grid: RadialGrid
    Lz: float
    matrix: np.ndarray    # square, with wall rows replaced by the BCs
    constraints: np.ndarray  # BC rows, one per replaced row
    interior: np.ndarray  # bool mask of non-BC rows

    @property
    def n(self):
        return self.grid.npts

    @property
    def bc_rows(self):
        """Row indices replaced by boundary conditions, in constraint order."""
        rows = _bc_row_indices(self.grid.npts)
        if self.kind == "block":
            return rows + [3 * self.grid.npts + i for i in rows]
        return rows

    def rebuild(self, factor=2) -> "ModeOperator":
        g2 = self.grid.refined(factor)
        if self.kind == "dynamo":
            return assemble_dynamo_block(self.profile, g2, self.mode, self.diffusivity, self.Lz)
        if self.kind == "linns":
            return assemble_linns_block(self.profile, g2, self.mode, self.diffusivity, self.Lz)
        nu, eps = self.diffusivity
        return assemble_block(self.profile, g2, self.mode, nu, eps, self.Lz)


def _phi_diag(profile, r, m, kt):
    return m * profile.omega(r) + kt * profile.u_z(r)


def _vlap_blocks(grid, m, kt, eps):
    """3x3 block array of the scaled vector Laplacian for one mode."""
    r = grid.r
    lap = scalar_lap_matrix(grid, float(m * m), kt * kt)
    zero = np.zeros_like(lap)
    brr = eps * (lap - np.diag(1.0 / r**2))
    bzz = eps * lap
    coup = eps * np.diag(2.0 * m / r**2)
    return [
        [brr, -1j * coup, zero],
        [1j * coup, brr, zero],
        [zero, zero, bzz],
    ]


def dynamo_matrix(profile, grid, mode, eps, Lz=1.0):
    """Dense (3n, 3n) dynamo PDE rows, no boundary rows yet."""
    m, k = mode
    kt = k / Lz
    r = grid.r
    blocks = _vlap_blocks(grid, m, kt, eps)
    adv = np.diag(-1j * _phi_diag(profile, r, m, kt))
    blocks[0][0] = blocks[0][0] + adv
    blocks[1][1] = blocks[1][1] + adv
    blocks[2][2] = blocks[2][2] + adv
    blocks[1][0] = blocks[1][0] + np.diag(profile.r_domega(r))
    blocks[2][0] = blocks[2][0] + np.diag(profile.du_z(r))
    return np.block(blocks)


def linns_matrix(profile, grid, mode, nu, Lz=1.0):
    """Dense velocity PDE rows before projection, no boundary rows."""
    m, k = mode
    kt = k / Lz
    r = grid.r
    blocks = _vlap_blocks(grid, m, kt, nu)
    adv = np.diag(-1j * _phi_diag(profile, r, m, kt))
    blocks[0][0] = blocks[0][0] + adv
    blocks[1][1] = blocks[1][1] + adv
    blocks[2][2] = blocks[2][2] + adv
    blocks[0][1] = blocks[0][1] + np.diag(2.0 * profile.omega(r))
    blocks[1][0] = blocks[1][0] - np.diag(2.0 * profile.omega(r) + profile.r_domega(r))
    blocks[2][0] = blocks[2][0] - np.diag(profile.du_z(r))
    return np.block(blocks)


def constraint_rows(grid, kind):
    """(6, 3n) boundary rows: Dirichlet for 'linns', conducting for 'dynamo'."""
    n = grid.npts
    C = np.zeros((6, 3 * n))
    walls = (0, n - 1)
    i = 0
    for j in walls:
        if kind == "linns":
            for c in range(3):
                C[i, c * n + j] = 1.0
                i += 1
        else:
            C[i, j] = 1.0                              # B_r = 0
            i += 1
            C[i + 0, n : 2 * n] = grid.r[j] * grid.D1[j, :]
            C[i + 0, n + j] += 1.0                     # d_r(r B_th) = 0
            i += 1
            C[i + 0, 2 * n :] = grid.D1[j, :]          # d_r B_z = 0
            i += 1
    return C


def _bc_row_indices(n):
    # walls outer, components inner: must match the constraint_rows ordering
    return [c * n + j for j in (0, n - 1) for c in range(3)]


def divergence_matrix(grid, mode, Lz=1.0):
    """Dense (n, 3n) per-mode divergence acting on stacked components."""
    m, k = mode
    kt = k / Lz
    n, r = grid.npts, grid.r
    D = np.zeros((n, 3 * n), dtype=complex)
    D[:, :n] = (grid.D1 * r[None, :]) / r[:, None]
    D[:, n : 2 * n] = np.diag(1j * m / r)
    D[:, 2 * n :] = 1j * kt * np.eye(n)
    return D


def gradient_matrix(grid, mode, Lz=1.0):
    """Dense (3n, n) per-mode gradient of a scalar."""
    m, k = mode
    kt = k / Lz
    r = grid.r
    return np.vstack(
        [grid.D1, np.diag(1j * m / r), 1j * kt * np.eye(grid.npts)]
    ).astype(complex)


def projector_matrix(grid, mode, Lz=1.0):
    """Dense (3n, 3n) realization of the per-mode Leray projector."""
    m, k = mode
    kt = k / Lz
    n = grid.npts
    Pois = poisson_neumann_matrix(grid, float(m * m)).astype(complex)
    mask = np.ones(n)
    mask[0] = mask[-1] = 0.0
    Pois -= np.diag(kt * kt * mask)
    # rhs map: interior rows take div f, wall rows take f_r
    Rmap = divergence_matrix(grid, mode, Lz)
    for j in WALLS:
        Rmap[j, :] = 0.0
        Rmap[j, (0 if j == 0 else n - 1)] = 1.0
    G = gradient_matrix(grid, mode, Lz)
    if m == 0 and k == 0:
        B = np.zeros((n + 1, n + 1), dtype=complex)
        B[:n, :n] = Pois
        B[:n, n] = mask
        B[n, :n] = grid.w
        Rext = np.zeros((n + 1, 3 * n), dtype=complex)
        Rext[:n] = Rmap
        sol = np.linalg.solve(B, Rext)[:n]
    else:
        sol = np.linalg.solve(Pois, Rmap)
    return np.eye(3 * n, dtype=complex) - G @ sol


def _finalize_block(kind, mode, diffusivity, profile, grid, Lz, L):
    n = grid.npts
    C = constraint_rows(grid, kind)
    interior = np.ones(3 * n, dtype=bool)
    rows = _bc_row_indices(n)
    interior[rows] = False
    A = L.copy()
    A[rows, :] = C
    return ModeOperator(kind, ModeIndex(*mode), diffusivity, profile, grid, Lz, A, C, interior)


def assemble_dynamo_block(profile, grid, mode, eps, Lz=1.0) -> ModeOperator:
    if eps <= 0:
        raise ValueError(f"need eps > 0, got {eps}")
    L = dynamo_matrix(profile, grid, mode, eps, Lz)
    return _finalize_block("dynamo", mode, eps, profile, grid, Lz, L)


def assemble_linns_block(profile, grid, mode, nu, Lz=1.0) -> ModeOperator:
    if nu <= 0:
        raise ValueError(f"need nu > 0, got {nu}")
    L = linns_matrix(profile, grid, mode, nu, Lz)
    P = projector_matrix(grid, mode, Lz)
    return _finalize_block("linns", mode, nu, profile, grid, Lz, P @ L)


def assemble_block(profile, grid, mode, nu, eps, Lz=1.0) -> ModeOperator:
    """Direct sum A = A1 (velocity) + A2 (dynamo); no linear cross coupling."""
    a1 = assemble_linns_block(profile, grid, mode, nu, Lz)
    a2 = assemble_dynamo_block(profile, grid, mode, eps, Lz)
    n3 = 3 * grid.npts
    M = np.zeros((2 * n3, 2 * n3), dtype=complex)
    M[:n3, :n3] = a1.matrix
    M[n3:, n3:] = a2.matrix
    C = np.zeros((12, 2 * n3), dtype=complex)
    C[:6, :n3] = a1.constraints
    C[6:, n3:] = a2.constraints
    interior = np.concatenate([a1.interior, a2.interior])
    return ModeOperator(
        "block", ModeIndex(*mode), (nu, eps), profile, grid, Lz, M, C, interior
    )


# ---------------------------------------------------------------------------
# vectorized linear terms (the eps/nu-free rows, used by evolve and tests)

def advection_stretching(profile, f: SpectralField, kind) -> SpectralField:
    """-(u.grad)f + (f.grad)u for 'dynamo', -(u.grad)f - (f.grad)u for 'linns'."""
    r = f.grid.r
    m = np.arange(-f.Mmax, f.Mmax + 1)[:, None, None]
    kt = np.arange(-f.Kmax, f.Kmax + 1)[None, :, None] / f.Lz
    phi = m * profile.omega(r) + kt * profile.u_z(r)
    fr, fth, fz = f.coeffs
    if kind == "dynamo":
        out = np.stack(
            [
                -1j * phi * fr,
                -1j * phi * fth + profile.r_domega(r) * fr,
                -1j * phi * fz + profile.du_z(r) * fr,
            ]
        )
    elif kind == "linns":
        two_om = 2.0 * profile.omega(r)
        out = np.stack(
            [
                -1j * phi * fr + two_om * fth,
                -1j * phi * fth - (two_om + profile.r_domega(r)) * fr,
                -1j * phi * fz - profile.du_z(r) * fr,
            ]
        )
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return replace(f, coeffs=out)


# ---------------------------------------------------------------------------
# nonlinear terms, pseudospectral with padded products

def _phys(f: SpectralField):
    nt, nz = phys_sizes(f.Mmax, f.Kmax)
    return to_physical(f.coeffs, f.Mmax, f.Kmax, nt, nz)


def apply_nonlinear_N(
    a: SpectralField, projector: LerayProjector = None, project=True
) -> SpectralField:
    """N(a) = P div(a x a), tensor divergence with curvature terms.

    project=False returns the raw divergence so a caller combining several
    terms can project their sum once.
    """
    g = a.grid
    r = g.r
    va = _phys(a)
    ar, ath, az = va
    prods = np.stack([ar * ar, ar * ath, ar * az, ath * ath, ath * az, az * az])
    Trr, Trth, Trz, Tthth, Tthz, Tzz = from_physical(prods, a.Mmax, a.Kmax)
    m = np.arange(-a.Mmax, a.Mmax + 1)[:, None, None]
    kt = np.arange(-a.Kmax, a.Kmax + 1)[None, :, None] / a.Lz

    def ddr(x):
        return x @ g.D1.T

    div_r = ddr(r * Trr) / r + 1j * m / r * Trth + 1j * kt * Trz - Tthth / r
    div_th = ddr(r * Trth) / r + 1j * m / r * Tthth + 1j * kt * Tthz + Trth / r
    div_z = ddr(r * Trz) / r + 1j * m / r * Tthz + 1j * kt * Tzz
    out = SpectralField(g, a.Mmax, a.Kmax, np.stack([div_r, div_th, div_z]), "none", a.Lz)
    if not project:
        return out
    return leray_project(out, projector)


def apply_nonlinear_M(v: SpectralField, B: SpectralField) -> SpectralField:
    """M(v, B) = curl(v x B); solenoidal by construction of the discrete curl."""
    vv = _phys(v)
    vb = _phys(B)
    cx = np.stack(
        [
            vv[1] * vb[2] - vv[2] * vb[1],
            vv[2] * vb[0] - vv[0] * vb[2],
            vv[0] * vb[1] - vv[1] * vb[0],
        ]
    )
    coeffs = from_physical(cx, v.Mmax, v.Kmax)
    inter = SpectralField(v.grid, v.Mmax, v.Kmax, coeffs, "none", v.Lz)
    return curl(inter, bc_tag=B.bc_tag)


# ---------------------------------------------------------------------------
# energy identities

def hodge_dissipativity(B: SpectralField):
    """(<lap B, B>, -||curl B||^2): equal for solenoidal conducting fields."""
    lhs = inner_l2(vector_laplacian(B), B).real
    rhs = -(l2_norm_parseval(curl(B)) ** 2)
    return lhs, rhs
