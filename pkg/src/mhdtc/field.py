"""Fields on the periodic annulus: Fourier in (theta, z), collocation in r.

A vector field is stored as complex coefficients

    f(r, theta, z) = sum_{m,k} fhat[c, m, k](r) exp(i(m*theta + k*z/Lz)),

with m = -Mmax..Mmax, k = -Kmax..Kmax, coefficient array of shape
(3, 2*Mmax+1, 2*Kmax+1, Nr+1) ordered (component, m, k, radial node) and
component order (r, theta, z).  Real fields obey fhat(-m,-k) = conj(fhat(m,k)).

Per-mode calculus, with D the radial derivative and kt = k/Lz:

    div  f = (1/r) d_r(r f_r) + (i m/r) f_th + i kt f_z
    grad p = (d_r p, (i m/r) p, i kt p)
    curl f = ((i m/r) f_z - i kt f_th,
              i kt f_r - d_r f_z,
              (1/r) d_r(r f_th) - (i m/r) f_r)
    lap  f = (L f_r - f_r/r^2 - (2 i m/r^2) f_th,
              L f_th - f_th/r^2 + (2 i m/r^2) f_r,
              L f_z),      L = d_rr + (1/r) d_r - m^2/r^2 - kt^2.

div(curl f) and curl(grad p) vanish identically at the discrete level (the
D-products cancel pairwise), which random_divfree exploits: it returns the
curl of a windowed random potential, so its divergence is machine zero and
the wall conditions hold by construction.

Boundary tags: 'dirichlet_velocity' means f = 0 at both walls;
'conducting_magnetic' means f_r = 0, d_r(r f_th) = 0, d_r f_z = 0 at both
walls; 'none' imposes nothing.

p-norms are evaluated on an oversampled physical grid (>= 3/2 dealiasing
factor, exact for the quadratic products that appear here); l2_norm_parseval
is the independent coefficient-space route kept for cross-checking.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np
from numpy.polynomial import chebyshev as npcheb
from scipy.fft import next_fast_len

from .grid import RadialGrid, build_radial_grid

MAGIC = b"MHDTC1"

BC_TAGS = ("dirichlet_velocity", "conducting_magnetic", "none")

COMP_R, COMP_TH, COMP_Z = 0, 1, 2


@dataclass
class SpectralField:
    grid: RadialGrid
    Mmax: int
    Kmax: int
    coeffs: np.ndarray  # (3, 2*Mmax+1, 2*Kmax+1, Nr+1) complex
    bc_tag: str = "none"
    Lz: float = 1.0

    def __post_init__(self):
        if self.bc_tag not in BC_TAGS:
            raise ValueError(f"unknown bc_tag {self.bc_tag!r}, expected one of {BC_TAGS}")
        want = (3, 2 * self.Mmax + 1, 2 * self.Kmax + 1, self.grid.npts)
        if self.coeffs.shape != want:
            raise ValueError(f"coeffs shape {self.coeffs.shape} != {want}")

    @classmethod
    def zeros(cls, grid, Mmax, Kmax, bc_tag="none", Lz=1.0):
        c = np.zeros((3, 2 * Mmax + 1, 2 * Kmax + 1, grid.npts), dtype=complex)
        return cls(grid, Mmax, Kmax, c, bc_tag, Lz)

    @property
    def m_values(self):
        return np.arange(-self.Mmax, self.Mmax + 1)

    @property
    def k_values(self):
        return np.arange(-self.Kmax, self.Kmax + 1)

    def mode(self, m, k):
        """View of the (3, Nr+1) coefficient block of one Fourier mode."""
        return self.coeffs[:, m + self.Mmax, k + self.Kmax, :]

    def copy(self):
        return replace(self, coeffs=self.coeffs.copy())

    def __add__(self, other):
        return replace(self, coeffs=self.coeffs + other.coeffs)

    def __sub__(self, other):
        return replace(self, coeffs=self.coeffs - other.coeffs)

    def __mul__(self, a):
        return replace(self, coeffs=self.coeffs * a)

    __rmul__ = __mul__


@dataclass
class ScalarField:
    grid: RadialGrid
    Mmax: int
    Kmax: int
    coeffs: np.ndarray  # (2*Mmax+1, 2*Kmax+1, Nr+1) complex
    Lz: float = 1.0

    @classmethod
    def zeros(cls, grid, Mmax, Kmax, Lz=1.0):
        c = np.zeros((2 * Mmax + 1, 2 * Kmax + 1, grid.npts), dtype=complex)
        return cls(grid, Mmax, Kmax, c, Lz)

    def mode(self, m, k):
        return self.coeffs[m + self.Mmax, k + self.Kmax, :]


def _wavenumbers(f):
    """Broadcastable i*m and i*kt arrays for the (..., m, k, r) coefficient axes."""
    im = 1j * np.arange(-f.Mmax, f.Mmax + 1)[:, None, None]
    ikt = 1j * np.arange(-f.Kmax, f.Kmax + 1)[None, :, None] / f.Lz
    return im, ikt


def _dr(grid, a):
    """Radial derivative along the last axis."""
    return a @ grid.D1.T


def divergence(f: SpectralField) -> ScalarField:
    g, r = f.grid, f.grid.r
    im, ikt = _wavenumbers(f)
    fr, fth, fz = f.coeffs
    out = _dr(g, r * fr) / r + im / r * fth + ikt * fz
    return ScalarField(g, f.Mmax, f.Kmax, out, f.Lz)


def gradient(p: ScalarField, bc_tag="none") -> SpectralField:
    g, r = p.grid, p.grid.r
    im = 1j * np.arange(-p.Mmax, p.Mmax + 1)[:, None, None]
    ikt = 1j * np.arange(-p.Kmax, p.Kmax + 1)[None, :, None] / p.Lz
    c = np.stack([_dr(g, p.coeffs), im / r * p.coeffs, ikt * p.coeffs])
    return SpectralField(g, p.Mmax, p.Kmax, c, bc_tag, p.Lz)


def curl(f: SpectralField, bc_tag="none") -> SpectralField:
    g, r = f.grid, f.grid.r
    im, ikt = _wavenumbers(f)
    fr, fth, fz = f.coeffs
    cr = im / r * fz - ikt * fth
    cth = ikt * fr - _dr(g, fz)
    cz = _dr(g, r * fth) / r - im / r * fr
    return SpectralField(g, f.Mmax, f.Kmax, np.stack([cr, cth, cz]), bc_tag, f.Lz)


def scalar_laplacian(p: ScalarField) -> ScalarField:
    g, r = p.grid, p.grid.r
    im = 1j * np.arange(-p.Mmax, p.Mmax + 1)[:, None, None]
    ikt = 1j * np.arange(-p.Kmax, p.Kmax + 1)[None, :, None] / p.Lz
    a = p.coeffs
    out = a @ g.D2.T + _dr(g, a) / r + (im**2 / r**2 + ikt**2) * a
    return ScalarField(g, p.Mmax, p.Kmax, out, p.Lz)


def vector_laplacian(f: SpectralField) -> SpectralField:
    g, r = f.grid, f.grid.r
    im, ikt = _wavenumbers(f)
    fr, fth, fz = f.coeffs

    def L(a):
        return a @ g.D2.T + _dr(g, a) / r + (im**2 / r**2 + ikt**2) * a

    out = np.stack(
        [
            L(fr) - fr / r**2 - 2.0 * im / r**2 * fth,
            L(fth) - fth / r**2 + 2.0 * im / r**2 * fr,
            L(fz),
        ]
    )
    return SpectralField(g, f.Mmax, f.Kmax, out, f.bc_tag, f.Lz)


# ---------------------------------------------------------------------------
# physical-space transforms

def phys_sizes(Mmax, Kmax):
    """Grid sizes that dealias quadratic products (>= 3*M+2 rule)."""
    return next_fast_len(max(3 * Mmax + 2, 8)), next_fast_len(max(3 * Kmax + 2, 8))


def _pack_modes(coeffs, Mmax, Kmax, ntheta, nz):
    """Scatter two-sided (m, k) coefficients into wrapped FFT layout."""
    lead = coeffs.shape[:-3]
    n = coeffs.shape[-1]
    a = np.zeros(lead + (ntheta, nz, n), dtype=complex)
    ms = np.arange(-Mmax, Mmax + 1) % ntheta
    ks = np.arange(-Kmax, Kmax + 1) % nz
    a[..., ms[:, None], ks[None, :], :] = coeffs
    return a


def _unpack_modes(a, Mmax, Kmax):
    ntheta, nz = a.shape[-3], a.shape[-2]
    ms = np.arange(-Mmax, Mmax + 1) % ntheta
    ks = np.arange(-Kmax, Kmax + 1) % nz
    return a[..., ms[:, None], ks[None, :], :]


def to_physical(coeffs, Mmax, Kmax, ntheta=None, nz=None):
    """Evaluate coefficients on the (theta, z) collocation grid.

    Accepts any (..., 2*Mmax+1, 2*Kmax+1, Nr+1) array; returns complex values
    of shape (..., ntheta, nz, Nr+1) at theta_i = 2*pi*i/ntheta,
    z_l = 2*pi*Lz*l/nz.  Real-symmetric coefficients give values that are
    real up to roundoff; the imaginary part is kept so genuinely complex
    fields (eigenmodes) pass through unchanged.
    """
    if ntheta is None or nz is None:
        ntheta, nz = phys_sizes(Mmax, Kmax)
    a = _pack_modes(coeffs, Mmax, Kmax, ntheta, nz)
    return np.fft.ifft2(a, axes=(-3, -2)) * (ntheta * nz)


def from_physical(vals, Mmax, Kmax):
    """Inverse of to_physical, truncating to |m| <= Mmax, |k| <= Kmax."""
    ntheta, nz = vals.shape[-3], vals.shape[-2]
    a = np.fft.fft2(vals, axes=(-3, -2)) / (ntheta * nz)
    return _unpack_modes(a, Mmax, Kmax)


# ---------------------------------------------------------------------------
# norms

def lp_norm(f: SpectralField, p=2) -> float:
    """L^p norm of the pointwise vector magnitude, physical-space quadrature."""
    return _lp_of_stack(f.coeffs, f, p)


def _lp_of_stack(stack, f, p):
    g = f.grid
    vals = to_physical(stack, f.Mmax, f.Kmax)
    mag2 = np.sum(np.abs(vals) ** 2, axis=0)
    if p == np.inf or p == "inf":
        return float(np.sqrt(mag2.max()))
    p = float(p)
    ntheta, nz = mag2.shape[0], mag2.shape[1]
    dA = (2 * np.pi / ntheta) * (2 * np.pi * f.Lz / nz)
    integ = (mag2 ** (p / 2.0) * g.w).sum() * dA
    return float(integ ** (1.0 / p))


def l2_norm_parseval(f: SpectralField) -> float:
    """Coefficient-space L^2 norm; independent of the physical-space route."""
    s = np.sum(np.abs(f.coeffs) ** 2 * f.grid.w, axis=(0, 1, 2, 3))
    return float(np.sqrt((2 * np.pi) * (2 * np.pi * f.Lz) * s))


def inner_l2(f: SpectralField, g: SpectralField) -> complex:
    """Quadrature inner product <f, g> = int f . conj(g) dV."""
    s = np.sum(f.coeffs * np.conj(g.coeffs) * f.grid.w)
    return complex((2 * np.pi) * (2 * np.pi * f.Lz) * s)


def scalar_lp_norm(p_field: ScalarField, p=2) -> float:
    vals = to_physical(p_field.coeffs, p_field.Mmax, p_field.Kmax)
    mag = np.abs(vals)
    if p == np.inf:
        return float(mag.max())
    p = float(p)
    ntheta, nz = mag.shape[0], mag.shape[1]
    dA = (2 * np.pi / ntheta) * (2 * np.pi * p_field.Lz / nz)
    return float(((mag**p * p_field.grid.w).sum() * dA) ** (1.0 / p))


# ---------------------------------------------------------------------------
# Sobolev norms through Cartesian components
#
# f_x = f_r cos(th) - f_th sin(th) and f_y = f_r sin(th) + f_th cos(th) are
# mode shifts m -> m +- 1 of (f_r -+ i f_th)/2, so Cartesian components and
# the derivatives d_x = cos d_r - (sin/r) d_th, d_y = sin d_r + (cos/r) d_th
# stay inside the Fourier representation exactly; the m-range is padded by
# s+1 before shifting so nothing is truncated.

def _shift_m(a, d):
    """Shift coefficients m -> m + d (zero-fill), a indexed (m, k, r)."""
    out = np.zeros_like(a)
    if d == 0:
        out[...] = a
    elif d > 0:
        out[d:, :, :] = a[:-d, :, :]
    else:
        out[:d, :, :] = a[-d:, :, :]
    return out


def _cartesian_scalars(f: SpectralField, pad):
    """Return (fx, fy, fz) coefficient arrays padded to Mmax + pad."""
    M, K = f.Mmax, f.Kmax
    Mp = M + pad
    ext = np.zeros((3, 2 * Mp + 1, 2 * K + 1, f.grid.npts), dtype=complex)
    ext[:, pad : pad + 2 * M + 1] = f.coeffs
    fr, fth, fz = ext
    plus = 0.5 * (fr + 1j * fth)   # travels to m+1
    minus = 0.5 * (fr - 1j * fth)  # travels to m-1
    fx = _shift_m(plus, 1) + _shift_m(minus, -1)
    fy = -1j * _shift_m(plus, 1) + 1j * _shift_m(minus, -1)
    return np.stack([fx, fy, fz]), Mp


def _cart_dx(a, grid, Mp, Kmax, Lz, which):
    """d/dx or d/dy of a scalar coefficient array a (m, k, r), m-padded."""
    r = grid.r
    m = np.arange(-Mp, Mp + 1)[:, None, None]
    da = _dr(grid, a)
    A = da - m / r * a  # -> m+1
    B = da + m / r * a  # -> m-1
    if which == "x":
        return 0.5 * (_shift_m(A, 1) + _shift_m(B, -1))
    return -0.5j * _shift_m(A, 1) + 0.5j * _shift_m(B, -1)


def sobolev_norm(f: SpectralField, s: int, p=2) -> float:
    """W^{s,p} norm: sum of lp norms of all Cartesian derivatives |alpha| <= s."""
    if s < 0 or s != int(s):
        raise ValueError(f"need integer s >= 0, got {s}")
    s = int(s)
    stack, Mp = _cartesian_scalars(f, s + 1)
    fwide = SpectralField.zeros(f.grid, Mp, f.Kmax, "none", f.Lz)
    ikt = 1j * np.arange(-f.Kmax, f.Kmax + 1)[None, :, None] / f.Lz

    def d_op(a, axis):
        if axis == 2:
            return ikt * a
        return _cart_dx(a, f.grid, Mp, f.Kmax, f.Lz, "x" if axis == 0 else "y")

    total = 0.0
    # multi-indices (ax, ay, az) with |alpha| <= s, each applied once
    for ax in range(s + 1):
        for ay in range(s + 1 - ax):
            for az in range(s + 1 - ax - ay):
                d = stack
                for _ in range(ax):
                    d = np.stack([d_op(c, 0) for c in d])
                for _ in range(ay):
                    d = np.stack([d_op(c, 1) for c in d])
                for _ in range(az):
                    d = np.stack([d_op(c, 2) for c in d])
                total += _lp_of_stack(d, fwide, p)
    return float(total)


# ---------------------------------------------------------------------------
# reality, boundary residuals

def reality_error(f: SpectralField) -> float:
    """max |c(m,k) - conj(c(-m,-k))| over all coefficients."""
    mirror = np.conj(f.coeffs[:, ::-1, ::-1, :])
    return float(np.abs(f.coeffs - mirror).max())


def symmetrize_reality(f: SpectralField) -> SpectralField:
    mirror = np.conj(f.coeffs[:, ::-1, ::-1, :])
    return replace(f, coeffs=0.5 * (f.coeffs + mirror))


def boundary_residual(f: SpectralField) -> float:
    """Largest absolute violation of the field's own wall conditions.

    Walls are nodes 0 (r=R2) and Nr (r=R1).  Returns 0 for tag 'none'.
    """
    g = f.grid
    walls = (0, g.Nr)
    if f.bc_tag == "none":
        return 0.0
    fr, fth, fz = f.coeffs
    if f.bc_tag == "dirichlet_velocity":
        vals = [np.abs(f.coeffs[..., j]).max() for j in walls]
        return float(max(vals))
    # conducting: f_r = 0, d_r(r f_th) = 0, d_r f_z = 0.  The product rule
    # form r f_th' + f_th avoids differentiating r*f_th, whose degree
    # exceeds the grid by one and would alias the top coefficient into
    # the measurement.
    drth = g.r * _dr(g, fth) + fth
    drz = _dr(g, fz)
    vals = []
    for j in walls:
        vals += [np.abs(fr[..., j]).max(), np.abs(drth[..., j]).max(), np.abs(drz[..., j]).max()]
    return float(max(vals))


# ---------------------------------------------------------------------------
# random solenoidal fields

def _random_radial_poly(rng, grid, deg):
    """Random Chebyshev polynomial on the gap with geometrically fading tail."""
    coef = rng.standard_normal(deg + 1) * 0.6 ** np.arange(deg + 1)
    x = (2.0 * grid.r - (grid.R1 + grid.R2)) / (grid.R2 - grid.R1)
    return npcheb.chebval(x, coef)


def random_divfree(grid, Mmax, Kmax, bc_tag, seed, Lz=1.0) -> SpectralField:
    """Curl of a windowed random potential: exactly solenoidal, BCs built in.

    Potential components get polynomial windows with enough wall zeros that
    the curl satisfies the requested conditions identically:
    dirichlet -> (W, W^2, W^2), conducting -> (W^2, W^3, W^3) with
    W = (r - R1)(R2 - r).  Coefficients fade geometrically in |m| + |k|,
    reality symmetry is enforced, and the result has unit L^2 norm.
    """
    if bc_tag not in ("dirichlet_velocity", "conducting_magnetic"):
        raise ValueError(f"random_divfree needs a wall tag, got {bc_tag!r}")
    win_deg = 4 if bc_tag == "dirichlet_velocity" else 6
    deg = min(8, grid.Nr - win_deg - 1)
    if deg < 1:
        raise ValueError(f"Nr={grid.Nr} too small for bc_tag {bc_tag!r} windows")
    rng = np.random.default_rng(seed)
    r = grid.r
    W = (r - grid.R1) * (grid.R2 - r)
    if bc_tag == "dirichlet_velocity":
        wins = (W, W**2, W**2)
    else:
        wins = (W**2, W**3, W**3)

    psi = SpectralField.zeros(grid, Mmax, Kmax, "none", Lz)
    decay = 0.5
    for mi, m in enumerate(range(-Mmax, Mmax + 1)):
        for ki, k in enumerate(range(-Kmax, Kmax + 1)):
            amp = decay ** (abs(m) + abs(k))
            for c in range(3):
                q = _random_radial_poly(rng, grid, deg)
                phase = rng.standard_normal(2)
                psi.coeffs[c, mi, ki] = amp * (phase[0] + 1j * phase[1]) * wins[c] * q
    f = curl(psi, bc_tag=bc_tag)
    f = symmetrize_reality(f)
    nrm = l2_norm_parseval(f)
    if nrm == 0.0:
        raise RuntimeError("degenerate random field (zero norm)")
    f.coeffs /= nrm
    return f


# ---------------------------------------------------------------------------
# checkpoint files
#
# layout: magic "MHDTC1" | u32 Nr, Mmax, Kmax, ncomp | f64 R1, R2, time |
# f64 (re, im) interleaved, component-major, m outer, k inner, radial last.
# All little-endian; round-trip is bit exact.

def save_checkpoint(path, f: SpectralField, time: float) -> None:
    c = np.ascontiguousarray(f.coeffs)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<4I", f.grid.Nr, f.Mmax, f.Kmax, c.shape[0]))
        fh.write(struct.pack("<3d", f.grid.R1, f.grid.R2, float(time)))
        inter = np.empty(c.shape + (2,), dtype="<f8")
        inter[..., 0] = c.real
        inter[..., 1] = c.imag
        fh.write(inter.tobytes())


def load_checkpoint(path, grid=None, bc_tag="none", Lz=1.0):
    """Read a checkpoint; returns (SpectralField, time).

    If grid is given it must match the stored header; otherwise the grid is
    rebuilt from the header.
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        Nr, Mmax, Kmax, ncomp = struct.unpack("<4I", fh.read(16))
        R1, R2, time = struct.unpack("<3d", fh.read(24))
        if grid is None:
            grid = build_radial_grid(R1, R2, Nr)
        elif grid.Nr != Nr or grid.R1 != R1 or grid.R2 != R2:
            raise ValueError(
                f"{path}: header (Nr={Nr}, R1={R1}, R2={R2}) does not match "
                f"grid (Nr={grid.Nr}, R1={grid.R1}, R2={grid.R2})"
            )
        shape = (ncomp, 2 * Mmax + 1, 2 * Kmax + 1, Nr + 1)
        count = int(np.prod(shape)) * 2
        raw = np.fromfile(fh, dtype="<f8", count=count)
        if raw.size != count:
            raise ValueError(f"{path}: truncated payload")
    inter = raw.reshape(shape + (2,))
    coeffs = inter[..., 0] + 1j * inter[..., 1]
    return SpectralField(grid, Mmax, Kmax, coeffs, bc_tag, Lz), time
