"""IMEX time integration of the linear dynamo and the nonlinear system.

Scheme: Crank-Nicolson on the diffusion (with the BC rows inside the
implicit matrix), Adams-Bashforth 2 on advection, stretching and the
nonlinear terms, bootstrapped by one Heun predictor-corrector substep with
the same implicit treatment.  The fixed step must respect an advective
bound dt <= C / (Mmax max|Omega| + (Kmax/Lz) max|U|); AB2 has no stability
margin on the imaginary axis, so the bound is on the largest advective
phase speed in mode space, not on a physical grid spacing (the steady
profile has no radial velocity).

The magnetic implicit solve factors one dense matrix per (|m|, |k|) pair:
k enters only through kt^2 and the matrix for -m is the conjugate of the
one for m, so each factor serves up to four modes (conjugate the
right-hand side for m < 0).  The r and theta components couple through the
+-2im/r^2 terms of the vector Laplacian and are solved as one exact 2n
block; z is scalar.  B is re-projected after the step; the projection
preserves the conducting conditions because its Neumann data vanishes at
the walls once B_r does.

The velocity cannot be treated the same way: re-projecting a no-slip field
pollutes the tangential wall values at the order of the divergence being
removed, so the v-step solves the coupled 4n saddle system in (v, phi)
per mode instead (momentum rows at interior nodes, divergence at every
node, wall rows for v = 0).  The mean mode (0,0) is handled separately:
its radial velocity vanishes identically and its pressure decouples.
Divergence and boundary conditions then hold to solver precision with no
correction afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field, replace
from functools import lru_cache
from io import StringIO

import numpy as np
import scipy.linalg as sla

from .field import (
    SpectralField,
    boundary_residual,
    divergence,
    from_physical,
    inner_l2,
    l2_norm_parseval,
    lp_norm,
    phys_sizes,
    scalar_lp_norm,
    to_physical,
    vector_laplacian,
)
from .grid import build_radial_grid
from .oper import (
    LerayProjector,
    _vlap_blocks,
    advection_stretching,
    apply_nonlinear_M,
    apply_nonlinear_N,
    divergence_matrix,
    gradient_matrix,
    scalar_lap_matrix,
)
from .steady import TCProfile


class NoEscapeError(RuntimeError):
    """Raised when a trace never crosses the escape threshold."""

    def __init__(self, chi, t_end, last_norm):
        super().__init__(
            f"norm never reached chi={chi:.6g} before T_end={t_end:.6g} "
            f"(last value {last_norm:.6g}); extend the run"
        )
        self.chi, self.t_end, self.last_norm = chi, t_end, last_norm


# ---------------------------------------------------------------------------
# time-step bound

def cfl_dt(profile: TCProfile, Mmax, Kmax, Lz=1.0, c_cfl=0.5, nsample=2048):
    """Largest stable step for the explicit advective terms."""
    r = np.linspace(profile.R1, profile.R2, nsample)
    rate = Mmax * np.abs(profile.omega(r)).max() + (Kmax / Lz) * np.abs(
        profile.u_z(r)
    ).max()
    if rate == 0.0:
        return np.inf
    return c_cfl / rate


def _check_dt(dt, profile, Mmax, Kmax, Lz):
    bound = cfl_dt(profile, Mmax, Kmax, Lz)
    if dt > bound * (1.0 + 1e-9):
        raise ValueError(
            f"dt={dt:.6g} exceeds the advective stability bound {bound:.6g} "
            f"for (Mmax={Mmax}, Kmax={Kmax}); suggested dt = {0.9 * bound:.6g}"
        )


# ---------------------------------------------------------------------------
# implicit Helmholtz solves

def _wall_rows_z(grid, kind):
    n = grid.npts
    rows = np.zeros((2, n))
    for i, j in enumerate((0, n - 1)):
        if kind == "conducting_magnetic":
            rows[i] = grid.D1[j, :]       # d_r B_z = 0
        else:
            rows[i, j] = 1.0              # v_z = 0
    return rows


def _wall_rows_rth(grid, kind):
    """(4, 2n) BC rows for the stacked (f_r, f_theta) block."""
    n = grid.npts
    rows = np.zeros((4, 2 * n))
    i = 0
    for j in (0, n - 1):
        rows[i, j] = 1.0                  # f_r = 0 at both walls, both kinds
        i += 1
        if kind == "conducting_magnetic":
            rows[i, n : 2 * n] = grid.r[j] * grid.D1[j, :]
            rows[i, n + j] += 1.0         # d_r(r B_theta) = 0
        else:
            rows[i, n + j] = 1.0          # v_theta = 0
        i += 1
    return rows


class ImplicitSolver:
    """Factored (I - gamma*diff*Laplacian) solves with homogeneous BCs."""

    def __init__(self, grid, Mmax, Kmax, Lz, diff, gamma, kind):
        self.grid, self.Mmax, self.Kmax, self.Lz = grid, Mmax, Kmax, Lz
        self.kind = kind
        n = grid.npts
        r = grid.r
        g = gamma * diff
        eye = np.eye(n)
        rows_z = _wall_rows_z(grid, kind)
        rows_rth = _wall_rows_rth(grid, kind)
        self.lu_rth, self.lu_z = {}, {}
        for m in range(Mmax + 1):
            for k in range(Kmax + 1):
                kt = k / Lz
                L = scalar_lap_matrix(grid, float(m * m), kt * kt)
                coup = np.diag(2.0 * m / r**2)
                Arr = eye - g * (L - np.diag(1.0 / r**2))
                A = np.zeros((2 * n, 2 * n), dtype=complex)
                A[:n, :n] = Arr
                A[n:, n:] = Arr
                A[:n, n:] = g * 1j * coup    # -gamma*d*(-2im/r^2)
                A[n:, :n] = -g * 1j * coup
                for i, j in enumerate((0, n - 1)):
                    A[j, :] = rows_rth[2 * i]
                    A[n + j, :] = rows_rth[2 * i + 1]
                self.lu_rth[(m, k)] = sla.lu_factor(A)
                Az = (eye - g * L).astype(complex)
                Az[0, :] = rows_z[0]
                Az[n - 1, :] = rows_z[1]
                self.lu_z[(m, k)] = sla.lu_factor(Az)

    def solve(self, coeffs):
        """Solve for all modes of a (3, 2M+1, 2K+1, n) coefficient array."""
        M, K, n = self.Mmax, self.Kmax, self.grid.npts
        out = np.empty_like(coeffs)
        rhs = coeffs.copy()
        rhs[:, :, :, 0] = 0.0
        rhs[:, :, :, -1] = 0.0  # homogeneous BC rows
        for m in range(M + 1):
            for k in range(K + 1):
                sibs = {(m, k), (m, -k), (-m, k), (-m, -k)}
                cols, conj = [], []
                for sm, sk in sorted(sibs):
                    cols.append((sm + M, sk + K))
                    conj.append(sm < 0)
                b2 = np.empty((2 * n, len(cols)), dtype=complex)
                bz = np.empty((n, len(cols)), dtype=complex)
                for i, (ci, cj) in enumerate(cols):
                    br = rhs[0, ci, cj]
                    bt = rhs[1, ci, cj]
                    bz[:, i] = rhs[2, ci, cj]
                    if conj[i]:
                        br, bt = np.conj(br), np.conj(bt)
                        bz[:, i] = np.conj(bz[:, i])
                    b2[:n, i] = br
                    b2[n:, i] = bt
                x2 = sla.lu_solve(self.lu_rth[(m, k)], b2, check_finite=False)
                xz = sla.lu_solve(self.lu_z[(m, k)], bz, check_finite=False)
                for i, (ci, cj) in enumerate(cols):
                    xr, xt, xzz = x2[:n, i], x2[n:, i], xz[:, i]
                    if conj[i]:
                        xr, xt, xzz = np.conj(xr), np.conj(xt), np.conj(xzz)
                    out[0, ci, cj] = xr
                    out[1, ci, cj] = xt
                    out[2, ci, cj] = xzz
        return out


class StokesSolver:
    """Coupled implicit v-step: (I - gamma*nu*Lap) v + grad phi = rhs with
    div v = 0 at every node and v = 0 at the walls, solved as one dense 4n
    system per mode.  phi is a multiplier absorbing the non-solenoidal
    content of the right-hand side; it is discarded.

    Factors live per (m, k) with m >= 0 (and k >= 0 when m = 0); the
    remaining modes are conjugates because the matrix entries are real
    apart from factors of i(m, kt).  The mean mode (0,0) bypasses the
    saddle system entirely (see __init__).
    """

    def __init__(self, grid, Mmax, Kmax, Lz, nu, gamma):
        self.grid, self.Mmax, self.Kmax, self.Lz = grid, Mmax, Kmax, Lz
        n = grid.npts
        g = gamma * nu
        eye3 = np.eye(3 * n)
        self.lu = {}
        for m in range(Mmax + 1):
            ks = range(Kmax + 1) if m == 0 else range(-Kmax, Kmax + 1)
            for k in ks:
                if m == 0 and k == 0:
                    continue
                A = np.zeros((4 * n, 4 * n), dtype=complex)
                A[: 3 * n, : 3 * n] = eye3 - g * np.block(
                    _vlap_blocks(grid, m, k / Lz, 1.0)
                )
                A[: 3 * n, 3 * n :] = gradient_matrix(grid, (m, k), Lz)
                for c in range(3):
                    for j in (0, n - 1):
                        A[c * n + j, :] = 0.0
                        A[c * n + j, c * n + j] = 1.0
                A[3 * n :, : 3 * n] = divergence_matrix(grid, (m, k), Lz)
                self.lu[(m, k)] = sla.lu_factor(A)
        # The mean mode decouples: between solid walls the net radial flux
        # vanishes, so v_r(0,0) = 0 identically and the mean pressure
        # gradient absorbs the whole radial forcing; only the theta and z
        # Helmholtz problems remain (the saddle matrix would be singular
        # in the phi directions their collocation cannot see).
        L = scalar_lap_matrix(grid, 0.0, 0.0)
        Ath = np.eye(n) - g * (L - np.diag(1.0 / grid.r**2))
        Az = np.eye(n) - g * L
        for A in (Ath, Az):
            A[0, :] = 0.0
            A[0, 0] = 1.0
            A[-1, :] = 0.0
            A[-1, -1] = 1.0
        self.lu00 = (sla.lu_factor(Ath), sla.lu_factor(Az))

    def solve(self, coeffs):
        M, K, n = self.Mmax, self.Kmax, self.grid.npts
        out = np.empty_like(coeffs)
        out[0, M, K] = 0.0
        for c in (1, 2):
            b = coeffs[c, M, K].copy()
            b[0] = 0.0
            b[-1] = 0.0
            out[c, M, K] = sla.lu_solve(self.lu00[c - 1], b, check_finite=False)
        b4 = np.zeros((4 * n, 2), dtype=complex)
        for (m, k), lu in self.lu.items():
            sibs = [(m, k), (-m, -k)]
            b4[:] = 0.0
            for i, (sm, sk) in enumerate(sibs):
                b = coeffs[:, sm + M, sk + K].reshape(3 * n)
                b4[: 3 * n, i] = np.conj(b) if i == 1 else b
            for c in range(3):
                b4[c * n] = 0.0
                b4[c * n + n - 1] = 0.0
            x = sla.lu_solve(lu, b4, check_finite=False)
            for i, (sm, sk) in enumerate(sibs):
                xi = x[: 3 * n, i]
                if i == 1:
                    xi = np.conj(xi)
                out[:, sm + M, sk + K] = xi.reshape(3, n)
        return out


@lru_cache(maxsize=16)
def _cached_solver(R1, R2, Nr, Mmax, Kmax, Lz, diff, gamma, kind):
    return ImplicitSolver(build_radial_grid(R1, R2, Nr), Mmax, Kmax, Lz, diff, gamma, kind)


@lru_cache(maxsize=16)
def _cached_stokes(R1, R2, Nr, Mmax, Kmax, Lz, nu, gamma):
    return StokesSolver(build_radial_grid(R1, R2, Nr), Mmax, Kmax, Lz, nu, gamma)


def _stokes_for(f: SpectralField, nu, gamma):
    g = f.grid
    return _cached_stokes(g.R1, g.R2, g.Nr, f.Mmax, f.Kmax, f.Lz, nu, gamma)


def _solver_for(f: SpectralField, diff, gamma):
    g = f.grid
    return _cached_solver(g.R1, g.R2, g.Nr, f.Mmax, f.Kmax, f.Lz, diff, gamma, f.bc_tag)


@lru_cache(maxsize=16)
def _cached_leray(R1, R2, Nr, Mmax, Kmax, Lz):
    return LerayProjector(build_radial_grid(R1, R2, Nr), Mmax, Kmax, Lz)


def _leray_for(f: SpectralField):
    g = f.grid
    return _cached_leray(g.R1, g.R2, g.Nr, f.Mmax, f.Kmax, f.Lz)


# ---------------------------------------------------------------------------
# state and elementary steps

@dataclass
class EvolveState:
    t: float
    v: SpectralField
    B: SpectralField
    dt: float
    prev_ev: SpectralField = None  # AB2 history: previous explicit slopes
    prev_eb: SpectralField = None
    nstep: int = 0


def _cn_rhs(f, slope_new, slope_old, dt, diff):
    """B + dt*(3/2 E_n - 1/2 E_{n-1}) + (dt/2) diff lap(B)."""
    lap = vector_laplacian(f)
    c = f.coeffs + dt * (1.5 * slope_new.coeffs - 0.5 * slope_old.coeffs)
    return c + (0.5 * dt * diff) * lap.coeffs


def _heun_start(f, explicit, diff, dt):
    """One IMEX Heun substep; returns (new field, slope at start)."""
    solver = _solver_for(f, diff, 0.5 * dt)
    e0 = explicit(f)
    half_lap = (0.5 * dt * diff) * vector_laplacian(f).coeffs
    pred = replace(f, coeffs=solver.solve(f.coeffs + dt * e0.coeffs + half_lap))
    e1 = explicit(pred)
    new = replace(
        f,
        coeffs=solver.solve(
            f.coeffs + 0.5 * dt * (e0.coeffs + e1.coeffs) + half_lap
        ),
    )
    return new, e0


def step_linear_dynamo(state: EvolveState, eps, profile) -> EvolveState:
    """One CNAB2 step of the kinematic dynamo equation for B."""
    B, dt = state.B, state.dt
    _check_dt(dt, profile, B.Mmax, B.Kmax, B.Lz)
    explicit = lambda f: advection_stretching(profile, f, "dynamo")
    solver = _solver_for(B, eps, 0.5 * dt)
    if state.prev_eb is None:
        newB, e_here = _heun_start(B, explicit, eps, dt)
        prev = explicit(B)  # slope at t^n for the next AB2 step
    else:
        e_here = explicit(B)
        rhs = _cn_rhs(B, e_here, state.prev_eb, dt, eps)
        newB = replace(B, coeffs=solver.solve(rhs))
        prev = e_here
    newB = _leray_for(newB).project(newB)
    if not np.isfinite(newB.coeffs).all():
        raise RuntimeError(
            f"non-finite magnetic field after step {state.nstep + 1} at t={state.t + dt:.6g}"
        )
    return replace(
        state, t=state.t + dt, B=newB, prev_eb=prev, nstep=state.nstep + 1
    )


def _nonlinear_slopes(v, B, projector, with_nonlinear, profile):
    """Explicit slopes (Ev, Eb) of the perturbation system.

    Ev = P[ -(u.grad)v - (v.grad)u - div(v x v) + div(B x B) ]
    Eb =    -(u.grad)B + (B.grad)u + curl(v x B)
    with one projection over the summed v-equation content.
    """
    ev = advection_stretching(profile, v, "linns")
    eb = advection_stretching(profile, B, "dynamo")
    if with_nonlinear:
        nb = apply_nonlinear_N(B, project=False)
        nv = apply_nonlinear_N(v, project=False)
        ev = replace(ev, coeffs=ev.coeffs + nb.coeffs - nv.coeffs)
        mb = apply_nonlinear_M(v, B)
        eb = replace(eb, coeffs=eb.coeffs + mb.coeffs)
    ev = projector.project(ev)
    return ev, eb


def step_nonlinear_mhd(state: EvolveState, nu, eps, profile, with_nonlinear=True) -> EvolveState:
    """One CNAB2 step of the coupled perturbation system."""
    v, B, dt = state.v, state.B, state.dt
    _check_dt(dt, profile, B.Mmax, B.Kmax, B.Lz)
    proj = _leray_for(v)
    solver_v = _stokes_for(v, nu, 0.5 * dt)
    solver_b = _solver_for(B, eps, 0.5 * dt)

    ev, eb = _nonlinear_slopes(v, B, proj, with_nonlinear, profile)
    if state.prev_ev is None:
        # Heun bootstrap on the coupled system
        half_lv = (0.5 * dt * nu) * vector_laplacian(v).coeffs
        half_lb = (0.5 * dt * eps) * vector_laplacian(B).coeffs
        v1 = replace(v, coeffs=solver_v.solve(v.coeffs + dt * ev.coeffs + half_lv))
        b1 = replace(B, coeffs=solver_b.solve(B.coeffs + dt * eb.coeffs + half_lb))
        ev1, eb1 = _nonlinear_slopes(v1, b1, proj, with_nonlinear, profile)
        newv = replace(
            v, coeffs=solver_v.solve(v.coeffs + 0.5 * dt * (ev.coeffs + ev1.coeffs) + half_lv)
        )
        newB = replace(
            B, coeffs=solver_b.solve(B.coeffs + 0.5 * dt * (eb.coeffs + eb1.coeffs) + half_lb)
        )
    else:
        newv = replace(v, coeffs=solver_v.solve(_cn_rhs(v, ev, state.prev_ev, dt, nu)))
        newB = replace(B, coeffs=solver_b.solve(_cn_rhs(B, eb, state.prev_eb, dt, eps)))
    newB = _leray_for(newB).project(newB)
    if not (np.isfinite(newv.coeffs).all() and np.isfinite(newB.coeffs).all()):
        raise RuntimeError(
            f"non-finite state after step {state.nstep + 1} at t={state.t + dt:.6g}: "
            f"|v|={np.abs(newv.coeffs).max():.3g} |B|={np.abs(newB.coeffs).max():.3g}"
        )
    return EvolveState(
        t=state.t + dt, v=newv, B=newB, dt=dt, prev_ev=ev, prev_eb=eb,
        nstep=state.nstep + 1,
    )


# ---------------------------------------------------------------------------
# traces

TRACE_COLUMNS = ("t", "Ev", "EB", "v_Lp", "B_Lp", "w_Lp", "div_v", "div_B", "dt")


@dataclass
class EnergyTrace:
    p: float
    columns: tuple = TRACE_COLUMNS
    rows: list = dc_field(default_factory=list)
    production: list = dc_field(default_factory=list)
    dissipation: list = dc_field(default_factory=list)

    @property
    def t(self):
        return np.array([r[0] for r in self.rows])

    def col(self, name):
        return np.array([r[self.columns.index(name)] for r in self.rows])

    def to_csv(self):
        buf = StringIO()
        buf.write(",".join(self.columns) + "\n")
        for r in self.rows:
            buf.write(",".join(f"{x:.17g}" for x in r) + "\n")
        return buf.getvalue()

    def check(self):
        ts = self.t
        if not np.all(np.diff(ts) > 0):
            raise ValueError("trace times not strictly increasing")
        if not all(np.isfinite(r).all() for r in map(np.asarray, self.rows)):
            raise ValueError("non-finite trace entries")


def _combined_lp(v, B, p):
    """L^p norm of the stacked 6-component field w = (v, B)."""
    nt, nz = phys_sizes(v.Mmax, v.Kmax)
    pv = to_physical(v.coeffs, v.Mmax, v.Kmax, nt, nz)
    pb = to_physical(B.coeffs, B.Mmax, B.Kmax, nt, nz)
    mag2 = np.sum(np.abs(pv) ** 2 + np.abs(pb) ** 2, axis=0)
    if np.isinf(p):
        return float(np.sqrt(mag2.max()))
    g = v.grid
    dA = (2 * np.pi / nt) * (2 * np.pi * v.Lz / nz)
    s = np.sum(mag2 ** (p / 2.0) * g.w)
    return float((s * dA) ** (1.0 / p))


def _div_rel(f):
    nrm = l2_norm_parseval(f)
    if nrm == 0.0:
        return 0.0
    return scalar_lp_norm(divergence(f), 2) / nrm


def _sample(state, p, profile, nu, eps, budget):
    v, B = state.v, state.B
    nv = l2_norm_parseval(v)
    nb = l2_norm_parseval(B)
    row = (
        state.t,
        0.5 * nv**2,
        0.5 * nb**2,
        lp_norm(v, p),
        lp_norm(B, p),
        _combined_lp(v, B, p),
        _div_rel(v),
        _div_rel(B),
        state.dt,
    )
    extra = ()
    if budget:
        prod = (
            inner_l2(advection_stretching(profile, v, "linns"), v).real
            + inner_l2(advection_stretching(profile, B, "dynamo"), B).real
        )
        diss = -nu * inner_l2(vector_laplacian(v), v).real - eps * inner_l2(
            vector_laplacian(B), B
        ).real
        extra = (prod, diss)
    return row, extra


def run_linear(B0, eps, profile, T_end, dt, sample_every=10, p=2.0) -> EnergyTrace:
    """Integrate the kinematic dynamo from B0; v stays zero."""
    v0 = SpectralField.zeros(B0.grid, B0.Mmax, B0.Kmax, "dirichlet_velocity", B0.Lz)
    state = EvolveState(t=0.0, v=v0, B=B0.copy(), dt=dt)
    trace = EnergyTrace(p=p)
    row, _ = _sample(state, p, profile, 0.0, eps, False)
    trace.rows.append(row)
    nsteps = int(round(T_end / dt))
    for i in range(nsteps):
        state = step_linear_dynamo(state, eps, profile)
        if (i + 1) % sample_every == 0 or i == nsteps - 1:
            row, _ = _sample(state, p, profile, 0.0, eps, False)
            trace.rows.append(row)
    trace.check()
    return trace


def run_nonlinear(
    v0,
    B0,
    nu,
    eps,
    profile,
    T_end,
    dt,
    sample_every=10,
    p=2.0,
    with_nonlinear=True,
    budget=False,
    stop_at=None,
    callback=None,
):
    """Integrate the perturbation system; returns (trace, final state).

    stop_at: optional threshold on the combined L^p norm; the run ends at
    the first sample crossing it (escape detected downstream on the trace).
    """
    state = EvolveState(t=0.0, v=v0.copy(), B=B0.copy(), dt=dt)
    trace = EnergyTrace(p=p)
    row, extra = _sample(state, p, profile, nu, eps, budget)
    trace.rows.append(row)
    if budget:
        trace.production.append(extra[0])
        trace.dissipation.append(extra[1])
    nsteps = int(round(T_end / dt))
    for i in range(nsteps):
        state = step_nonlinear_mhd(state, nu, eps, profile, with_nonlinear)
        if (i + 1) % sample_every == 0 or i == nsteps - 1:
            row, extra = _sample(state, p, profile, nu, eps, budget)
            trace.rows.append(row)
            if budget:
                trace.production.append(extra[0])
                trace.dissipation.append(extra[1])
            if callback is not None:
                callback(state, trace)
            if stop_at is not None and row[5] >= stop_at:
                break
    trace.check()
    return trace, state


# ---------------------------------------------------------------------------
# measurements on traces

def measured_growth_rate(trace: EnergyTrace, window):
    """Least-squares slope of log ||B||_L2 over a time window."""
    t0, t1 = window
    ts = trace.t
    eb = trace.col("EB")
    mask = (ts >= t0) & (ts <= t1)
    if mask.sum() < 10:
        raise ValueError(f"window [{t0}, {t1}] holds {mask.sum()} samples, need >= 10")
    if np.any(eb[mask] <= 0):
        raise ValueError("non-positive magnetic energy inside the fit window")
    x = ts[mask]
    y = 0.5 * np.log(2.0 * eb[mask])  # log ||B||_L2
    coef, cov = np.polyfit(x, y, 1, cov=True)
    return {"lambda_fit": float(coef[0]), "stderr": float(np.sqrt(cov[0, 0]))}


def detect_escape_time(trace: EnergyTrace, chi, col="w_Lp"):
    """First crossing of chi, log-linear interpolation between samples."""
    w = trace.col(col)
    ts = trace.t
    if chi <= w[0]:
        raise ValueError(f"chi={chi:.6g} not above the initial norm {w[0]:.6g}")
    above = np.nonzero(w >= chi)[0]
    if len(above) == 0:
        raise NoEscapeError(chi, ts[-1], w[-1])
    i = int(above[0])
    t0, t1 = ts[i - 1], ts[i]
    w0, w1 = w[i - 1], w[i]
    f = (np.log(chi) - np.log(w0)) / (np.log(w1) - np.log(w0))
    return float(t0 + f * (t1 - t0))


def budget_closure(trace: EnergyTrace):
    """Max relative defect of dE/dt = production - dissipation at interior samples."""
    if not trace.production:
        raise ValueError("trace recorded without budget terms")
    ts = trace.t
    E = trace.col("Ev") + trace.col("EB")
    prod = np.asarray(trace.production)
    diss = np.asarray(trace.dissipation)
    worst = 0.0
    for i in range(1, len(ts) - 1):
        dEdt = (E[i + 1] - E[i - 1]) / (ts[i + 1] - ts[i - 1])
        rhs = prod[i] - diss[i]
        scale = max(abs(dEdt), abs(prod[i]), abs(diss[i]), 1e-300)
        worst = max(worst, abs(dEdt - rhs) / scale)
    return worst


def constraint_worst(trace: EnergyTrace):
    """Largest relative divergence residual recorded along a run."""
    return float(max(trace.col("div_v").max(), trace.col("div_B").max()))


def boundary_worst(state: EvolveState):
    """Boundary-condition residuals of the current state, relative to scale."""
    out = {}
    for name, f in (("v", state.v), ("B", state.B)):
        scale = max(np.abs(f.coeffs).max(), 1e-300)
        out[name] = boundary_residual(f) / scale
    return out
