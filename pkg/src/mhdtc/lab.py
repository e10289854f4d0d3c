"""Experiment front-end: configuration, orchestration, emission, CLI.

A SimConfig is a nested frozen dataclass mirroring a single JSON document;
command-line flags name dotted paths into it (--physics.eps 1e-3) and
override file values.  Defaults are the paper-default preset; three fields
are derived when left null: nu = 10 * ||u||_W1inf, chi = 0.01 * ||u||_L2,
dt = cfl * advective bound.

Experiments return (report, tables, traces); emit_results writes the
tables and traces as CSVs plus one JSON manifest per run id, idempotently
and deterministically (the manifest timestamp is the only varying byte).
Each report carries a "checks" dict; the CLI exits 0 iff every check of
the invoked command passes.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import pathlib
import platform
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field, replace

import numpy as np
import scipy

from . import __version__
from .evolve import (
    NoEscapeError,
    boundary_worst,
    budget_closure,
    cfl_dt,
    constraint_worst,
    detect_escape_time,
    measured_growth_rate,
    run_linear,
    run_nonlinear,
)
from .field import SpectralField, sobolev_norm
from .grid import build_radial_grid
from .oper import assemble_dynamo_block
from .spectra import (
    eigenvector_field,
    epsilon_scaling_sweep,
    inverse_frac_grad_check,
    rightmost_eigen,
    semigroup_smoothing_check,
)
from .steady import TCProfile, ns_residual, tc_l2_norm, w1inf_norm

log = logging.getLogger("mhdtc")


class ConfigError(ValueError):
    """Schema violation; the message names the offending dotted field."""


# ---------------------------------------------------------------------------
# configuration schema

@dataclass(frozen=True)
class GeometryConfig:
    R1: float = 1.0
    R2: float = 2.0


@dataclass(frozen=True)
class WallConfig:
    beta1: float = 3.0
    beta2: float = 1.0


@dataclass(frozen=True)
class PhysicsConfig:
    nu: float = None  # null -> 10 * ||u||_W1inf of the configured profile
    eps: float = 1e-3


@dataclass(frozen=True)
class ResolutionConfig:
    Nr: int = 96
    Mmax: int = 16
    Kmax: int = 16


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = None  # null -> cfl * advective stability bound
    cfl: float = 0.95
    T_end: float = 4000.0
    sample_every: int = 10


@dataclass(frozen=True)
class ExperimentConfig:
    delta_list: tuple = (1e-3, 1e-4, 1e-5, 1e-6)
    eps_list: tuple = (1e-2, 10**-2.5, 1e-3, 10**-3.5, 1e-4)
    delta: float = 1e-5  # amplitude for single nonlinear runs
    chi: float = None  # null -> 0.01 * ||u||_L2
    p: float = 2.0
    alpha: float = 0.75
    eta: object = "auto"
    seed: int = 0
    allow_small_nu: bool = False


@dataclass(frozen=True)
class SimConfig:
    geometry: GeometryConfig = dc_field(default_factory=GeometryConfig)
    wall: WallConfig = dc_field(default_factory=WallConfig)
    physics: PhysicsConfig = dc_field(default_factory=PhysicsConfig)
    resolution: ResolutionConfig = dc_field(default_factory=ResolutionConfig)
    integrator: IntegratorConfig = dc_field(default_factory=IntegratorConfig)
    experiment: ExperimentConfig = dc_field(default_factory=ExperimentConfig)
    outdir: str = "results"

    # -- derived objects ---------------------------------------------------
    def profile(self) -> TCProfile:
        g, w = self.geometry, self.wall
        return TCProfile.from_walls(g.R1, g.R2, w.beta1, w.beta2)

    def grid(self):
        return build_radial_grid(self.geometry.R1, self.geometry.R2, self.resolution.Nr)

    def nu(self) -> float:
        if self.physics.nu is not None:
            return self.physics.nu
        return 10.0 * w1inf_norm(self.profile())

    def chi(self) -> float:
        if self.experiment.chi is not None:
            return self.experiment.chi
        return 0.01 * tc_l2_norm(self.profile())

    def dt(self) -> float:
        if self.integrator.dt is not None:
            return self.integrator.dt
        bound = cfl_dt(self.profile(), self.resolution.Mmax, self.resolution.Kmax)
        if not np.isfinite(bound):
            raise ConfigError(
                "integrator.dt must be set explicitly for a zero profile "
                "(no advective bound to derive it from)"
            )
        return self.integrator.cfl * bound

    def to_dict(self) -> dict:
        return _section_dict(self)


_SECTIONS = (
    ("geometry", GeometryConfig),
    ("wall", WallConfig),
    ("physics", PhysicsConfig),
    ("resolution", ResolutionConfig),
    ("integrator", IntegratorConfig),
    ("experiment", ExperimentConfig),
)

# fields not plainly float-valued; everything else parses as float
_INT_FIELDS = {"Nr", "Mmax", "Kmax", "sample_every", "seed"}
_OPTIONAL_FLOATS = {"nu", "dt", "chi"}  # JSON null / flag "none" allowed
_LIST_FIELDS = {"delta_list", "eps_list"}
_BOOL_FIELDS = {"allow_small_nu"}
_AUTO_FLOATS = {"eta"}  # "auto" or a positive float


def _section_dict(cfg: SimConfig) -> dict:
    out = {}
    for name, _ in _SECTIONS:
        sec = getattr(cfg, name)
        d = dataclasses.asdict(sec)
        for key in _LIST_FIELDS & d.keys():
            d[key] = list(d[key])
        out[name] = d
    out["outdir"] = cfg.outdir
    return out


def _convert(path, name, raw):
    """Parse one scalar config value from JSON or a flag string."""
    try:
        if name in _BOOL_FIELDS:
            if isinstance(raw, bool):
                return raw
            if str(raw).lower() in ("true", "1", "yes"):
                return True
            if str(raw).lower() in ("false", "0", "no"):
                return False
            raise ValueError("not a boolean")
        if name in _LIST_FIELDS:
            if isinstance(raw, str):
                raw = [s for s in raw.split(",") if s]
            return tuple(float(x) for x in raw)
        if name in _OPTIONAL_FLOATS:
            if raw is None or (isinstance(raw, str) and raw.lower() in ("none", "null")):
                return None
            return float(raw)
        if name in _AUTO_FLOATS:
            if isinstance(raw, str) and raw.lower() == "auto":
                return "auto"
            return float(raw)
        if name in _INT_FIELDS:
            v = int(raw)
            if v != float(raw):
                raise ValueError("not an integer")
            return v
        return float(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path} = {raw!r}: {exc}") from None


def config_from_dict(doc: dict) -> SimConfig:
    """Build a SimConfig from a nested dict, rejecting unknown keys."""
    if not isinstance(doc, dict):
        raise ConfigError(f"config document must be an object, got {type(doc).__name__}")
    known = {name for name, _ in _SECTIONS} | {"outdir"}
    for key in doc:
        if key not in known:
            raise ConfigError(f"unknown config section {key!r}")
    kwargs = {}
    for name, cls in _SECTIONS:
        sec_doc = doc.get(name, {})
        if not isinstance(sec_doc, dict):
            raise ConfigError(f"{name} must be an object, got {type(sec_doc).__name__}")
        valid = {f.name for f in dataclasses.fields(cls)}
        for key in sec_doc:
            if key not in valid:
                raise ConfigError(f"unknown key {name}.{key}")
        vals = {
            key: _convert(f"{name}.{key}", key, raw) for key, raw in sec_doc.items()
        }
        kwargs[name] = cls(**vals)
    outdir = doc.get("outdir", SimConfig.outdir)
    if not isinstance(outdir, str):
        raise ConfigError(f"outdir must be a string, got {outdir!r}")
    return validate(SimConfig(outdir=outdir, **kwargs))


def validate(cfg: SimConfig) -> SimConfig:
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    g, w, ph = cfg.geometry, cfg.wall, cfg.physics
    rs, it, ex = cfg.resolution, cfg.integrator, cfg.experiment
    need(0 < g.R1 < g.R2, f"geometry: need 0 < R1 < R2, got R1={g.R1}, R2={g.R2}")
    need(np.isfinite(w.beta1) and np.isfinite(w.beta2), "wall: beta1/beta2 must be finite")
    if ph.nu is not None:
        need(ph.nu > 0, f"physics.nu must be positive, got {ph.nu}")
    need(ph.eps > 0, f"physics.eps must be positive, got {ph.eps}")
    need(rs.Nr >= 8, f"resolution.Nr must be >= 8, got {rs.Nr}")
    need(rs.Mmax >= 0 and rs.Kmax >= 0, "resolution.Mmax/Kmax must be >= 0")
    if it.dt is not None:
        need(it.dt > 0, f"integrator.dt must be positive, got {it.dt}")
    need(0 < it.cfl <= 1, f"integrator.cfl must be in (0, 1], got {it.cfl}")
    need(it.T_end > 0, f"integrator.T_end must be positive, got {it.T_end}")
    need(it.sample_every >= 1, f"integrator.sample_every must be >= 1, got {it.sample_every}")
    need(all(d > 0 for d in ex.delta_list), "experiment.delta_list entries must be positive")
    need(all(e > 0 for e in ex.eps_list), "experiment.eps_list entries must be positive")
    need(ex.delta >= 0, f"experiment.delta must be >= 0, got {ex.delta}")
    if ex.chi is not None:
        need(ex.chi > 0, f"experiment.chi must be positive, got {ex.chi}")
    need(ex.p >= 1, f"experiment.p must be >= 1, got {ex.p}")
    need(0 <= ex.alpha < 1, f"experiment.alpha must be in [0, 1), got {ex.alpha}")
    if ex.eta != "auto":
        need(ex.eta > 0, f"experiment.eta must be 'auto' or positive, got {ex.eta}")
    need(ex.seed >= 0, f"experiment.seed must be >= 0, got {ex.seed}")
    return cfg


PRESETS = {"paper-default": {}}  # the dataclass defaults are the preset


def parse_config(path=None, overrides=(), preset=None) -> SimConfig:
    """Config from preset defaults, then a JSON file, then dotted overrides.

    overrides: iterable of ("section.key", raw value) pairs.
    """
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; available: {sorted(PRESETS)}")
    doc = json.loads(json.dumps(PRESETS.get(preset, {})))
    if path is not None:
        p = pathlib.Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            loaded = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON: {exc}") from None
        _deep_update(doc, loaded)
    for dotted, raw in overrides:
        parts = dotted.split(".")
        if len(parts) == 1 and parts[0] == "outdir":
            doc["outdir"] = str(raw)
            continue
        if len(parts) != 2:
            raise ConfigError(f"override {dotted!r}: expected section.key or outdir")
        doc.setdefault(parts[0], {})
        if not isinstance(doc[parts[0]], dict):
            raise ConfigError(f"override {dotted!r}: {parts[0]} is not a section")
        doc[parts[0]][parts[1]] = raw
    return config_from_dict(doc)


def _deep_update(base: dict, extra: dict):
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], val)
        else:
            base[key] = val


def config_hash(cfg: SimConfig) -> str:
    canon = json.dumps(cfg.to_dict(), sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()


# ---------------------------------------------------------------------------
# shared machinery

def worker_count() -> int:
    env = os.environ.get("MHDTC_WORKERS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"MHDTC_WORKERS = {env!r} is not an integer") from None
        if n < 1:
            raise ConfigError(f"MHDTC_WORKERS must be >= 1, got {n}")
        return n
    return os.cpu_count() or 1


def _map_indexed(fn, items):
    """Apply fn over items on a bounded pool; results ordered by index."""
    items = list(items)
    nw = min(worker_count(), len(items)) or 1
    if nw == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=nw) as pool:
        futs = [pool.submit(fn, x) for x in items]
        return [f.result() for f in futs]


_leader_cache = {}


def leader_report(cfg: SimConfig, kind="dynamo", diffusivity=None):
    """Rightmost retained leader over the configured mode window, cached.

    The cache key is the (profile, diffusivity, window, Nr) tuple, so
    sweeps sharing a leader do not repeat the eigensolve.  The neutral
    (0,0) flux pair is omitted: experiments here want dynamics, not the
    conserved fluxes.
    """
    if diffusivity is None:
        diffusivity = cfg.physics.eps if kind == "dynamo" else cfg.nu()
    g, w, rs = cfg.geometry, cfg.wall, cfg.resolution
    key = (kind, g.R1, g.R2, w.beta1, w.beta2, diffusivity, rs.Nr, rs.Mmax, rs.Kmax)
    if key not in _leader_cache:
        log.info("eigensolve: %s leader at diffusivity %.3g (Nr=%d, m<=%d, |k|<=%d)",
                 kind, diffusivity, rs.Nr, rs.Mmax, rs.Kmax)
        _leader_cache[key] = rightmost_eigen(
            kind,
            cfg.profile(),
            diffusivity,
            range(0, rs.Mmax + 1),
            range(-rs.Kmax, rs.Kmax + 1),
            cfg.grid(),
            omit_modes=((0, 0),),
        )
    return _leader_cache[key]


def _column_slope(trace, col, window):
    """Least-squares slope of log(column) over a time window."""
    t0, t1 = window
    ts = trace.t
    ys = trace.col(col)
    mask = (ts >= t0) & (ts <= t1) & (ys > 0)
    if mask.sum() < 10:
        raise ValueError(
            f"window [{t0:.3g}, {t1:.3g}] holds {int(mask.sum())} usable samples of "
            f"{col}, need >= 10"
        )
    coef, cov = np.polyfit(ts[mask], np.log(ys[mask]), 1, cov=True)
    return float(coef[0]), float(np.sqrt(cov[0, 0]))


def _zeros_v(cfg):
    rs = cfg.resolution
    return SpectralField.zeros(cfg.grid(), rs.Mmax, rs.Kmax, "dirichlet_velocity")


# ---------------------------------------------------------------------------
# experiments

def steady_report(cfg: SimConfig) -> dict:
    """Coefficients, wall residuals, and the momentum-balance audit,
    including the broken pressure variant that drops the cross term."""
    prof = cfg.profile()
    g = cfg.grid()
    nu = cfg.nu()
    w = cfg.wall
    bc = {
        "u_theta_inner": abs(float(prof.u_theta(prof.R1))),
        "u_theta_outer_minus_beta1": abs(float(prof.u_theta(prof.R2) - w.beta1)),
        "u_z_inner": abs(float(prof.u_z(prof.R1))),
        "u_z_outer_minus_beta2": abs(float(prof.u_z(prof.R2) - w.beta2)),
    }
    res = ns_residual(prof, g, nu)
    res_broken = ns_residual(prof, g, nu, cross_term=False)
    return {
        "coefficients": {"a1": prof.a1, "a2": prof.a2, "a3": prof.a3, "a4": prof.a4},
        "bc_residuals": bc,
        "nu": nu,
        "ns_residual": res,
        "ns_residual_without_cross_term": res_broken,
        "w1inf_norm": w1inf_norm(prof),
        "l2_norm": tc_l2_norm(prof),
        "checks": {
            "momentum_balance": bool(res <= 1e-10),
            "walls": bool(max(bc.values()) <= 1e-12),
            "cross_term_matters": bool(res_broken > 1e-2),
        },
    }


def spectrum_report(cfg: SimConfig, kind="dynamo"):
    """Leader scan; the table lists every retained eigenvalue of the
    winning mode (m, k, Re, Im, residual, div_score, drift)."""
    diffusivity = cfg.physics.eps if kind == "dynamo" else cfg.nu()
    rep = leader_report(cfg, kind, diffusivity)
    rows = np.asarray(rep.rows(), dtype=float)
    report = {
        "kind": kind,
        "diffusivity": diffusivity,
        "Nr": cfg.resolution.Nr,
        "mode": [int(rep.mode.m), int(rep.mode.k)],
        "leader": complex(rep.leader),
        "retained": int(len(rep.eigenvalues)),
        "checks": {"leader_retained": True},
    }
    tables = {"spectrum": (("m", "k", "Re_lambda", "Im_lambda", "residual", "div_score", "drift"), rows)}
    return report, tables


def scaling_report(cfg: SimConfig):
    """Growth-rate power law over the configured epsilon ladder."""
    rs = cfg.resolution
    try:
        fit = epsilon_scaling_sweep(
            cfg.profile(),
            cfg.experiment.eps_list,
            cfg.grid(),
            range(0, rs.Mmax + 1),
            range(-rs.Kmax, rs.Kmax + 1),
        )
    except RuntimeError as exc:
        return {
            "error": str(exc),
            "checks": {"slope_band": False, "stderr": False},
        }, {}
    rows = []
    for eps in sorted(fit["leaders"]):
        lam = fit["leaders"][eps]
        m, k = fit["modes"][eps]
        rows.append((eps, m, k, lam.real, lam.imag))
    report = {
        "slope": fit["slope"],
        "stderr": fit["stderr"],
        "intercept": fit["intercept"],
        "fit_points": fit["fit_points"],
        "leaders": {f"{e:.6g}": complex(fit["leaders"][e]) for e in sorted(fit["leaders"])},
        "modes": {f"{e:.6g}": list(fit["modes"][e]) for e in sorted(fit["modes"])},
        "checks": {
            "slope_band": bool(0.23 <= fit["slope"] <= 0.43),
            "stderr": bool(fit["stderr"] < 0.05),
        },
    }
    tables = {"scaling": (("eps", "m", "k", "Re_lambda", "Im_lambda"), np.asarray(rows, dtype=float))}
    return report, tables


def semigroup_report(cfg: SimConfig):
    """Fractional smoothing envelope of the dynamo leader block."""
    ex = cfg.experiment
    rep = leader_report(cfg)
    op = assemble_dynamo_block(
        cfg.profile(), cfg.grid(), tuple(rep.mode), cfg.physics.eps
    )
    t_grid = np.logspace(-3, 1, 25)
    out = semigroup_smoothing_check(op, ex.alpha, ex.eta, t_grid, lam=rep.leader)
    report = {
        "alpha": ex.alpha,
        "eta": out["eta"],
        "lambda": complex(out["lambda"]),
        "omega": out["omega"],
        "sup_envelope": out["sup"],
        "eigvec_cond": out["eigvec_cond"],
        "used_fallback": bool(out["used_fallback"]),
        "checks": {"envelope_finite": bool(np.isfinite(out["sup"]))},
    }
    if 0.5 < ex.alpha < 1:
        inv = inverse_frac_grad_check(op, ex.alpha, ex.eta, lam=rep.leader)
        report["inverse_frac_grad_norm"] = inv["norm"]
        report["checks"]["inverse_grad_finite"] = bool(np.isfinite(inv["norm"]))
    tables = {
        "semigroup": (
            ("t", "norm", "envelope"),
            np.column_stack([out["t"], out["norm"], out["envelope"]]),
        )
    }
    return report, tables


def linear_report(cfg: SimConfig):
    """Kinematic run from the leader eigenmode; growth vs the eigensolve."""
    rep = leader_report(cfg)
    rs, it = cfg.resolution, cfg.integrator
    B0 = eigenvector_field(rep, cfg.grid(), rs.Mmax, rs.Kmax)
    dt = cfg.dt()
    trace = run_linear(
        B0, cfg.physics.eps, cfg.profile(), it.T_end, dt,
        sample_every=it.sample_every, p=cfg.experiment.p,
    )
    fit = measured_growth_rate(trace, (0.2 * it.T_end, it.T_end))
    lam = rep.leader
    rel = abs(fit["lambda_fit"] - lam.real) / abs(lam.real)
    report = {
        "leader": complex(lam),
        "mode": [int(rep.mode.m), int(rep.mode.k)],
        "dt": dt,
        "T_end": it.T_end,
        "lambda_fit": fit["lambda_fit"],
        "stderr": fit["stderr"],
        "relative_error": rel,
        "checks": {"growth_matches_eigenvalue": bool(rel <= 0.01)},
    }
    return report, {"linear_trace": trace}


def nonlinear_report(cfg: SimConfig, budget=False, with_nonlinear=True):
    """Perturbation run from delta * (0, leader eigenmode), stopped just
    past the escape threshold."""
    rep = leader_report(cfg)
    rs, it, ex = cfg.resolution, cfg.integrator, cfg.experiment
    chi = cfg.chi()
    B0 = eigenvector_field(rep, cfg.grid(), rs.Mmax, rs.Kmax)
    B0 = replace(B0, coeffs=ex.delta * B0.coeffs)
    dt = cfg.dt()
    trace, state = run_nonlinear(
        _zeros_v(cfg), B0, cfg.nu(), cfg.physics.eps, cfg.profile(),
        it.T_end, dt, sample_every=it.sample_every, p=ex.p,
        with_nonlinear=with_nonlinear, budget=budget, stop_at=1.05 * chi,
    )
    report = {
        "delta": ex.delta,
        "chi": chi,
        "dt": dt,
        "leader": complex(rep.leader),
        "final_w": float(trace.col("w_Lp")[-1]),
        "checks": {},
    }
    try:
        report["t_star"] = detect_escape_time(trace, chi)
        report["escaped"] = True
    except NoEscapeError as exc:
        report["t_star"] = None
        report["escaped"] = False
        report["no_escape"] = str(exc)
    # eigenmode initial data is smooth, so solver-precision constraint
    # levels apply (rough user fields would sit at the tau wall residual)
    div_worst = constraint_worst(trace)
    bw = boundary_worst(state)
    report["div_worst"] = div_worst
    report["bc_residuals"] = bw
    report["checks"]["constraints"] = bool(div_worst <= 1e-9)
    report["checks"]["boundaries"] = bool(max(bw.values()) <= 1e-8)
    if budget:
        closure = budget_closure(trace)
        report["budget_defect"] = closure
        report["checks"]["budget"] = bool(closure <= 0.05)
    return report, {"nonlinear_trace": trace}


def instability_sweep(cfg: SimConfig):
    """Escape time vs log(1/delta) over the configured amplitude ladder.

    Each row also reports the W^{s,p} size of the initial perturbation for
    s in {0, 1, 2}.  Rows that never cross chi are marked and left out of
    the fit.  The fitted slope is compared to 1/Re(lambda) of the leader.
    """
    ex = cfg.experiment
    deltas = list(ex.delta_list)
    if len(deltas) < 4:
        raise ConfigError(
            f"experiment.delta_list needs >= 4 entries for the fit, got {len(deltas)}"
        )
    ratios = [deltas[i + 1] / deltas[i] for i in range(len(deltas) - 1)]
    if max(ratios) / min(ratios) > 1 + 1e-9 or ratios[0] >= 1:
        raise ConfigError(
            "experiment.delta_list must be geometric and decreasing, got "
            + ", ".join(f"{d:.3g}" for d in deltas)
        )
    rep = leader_report(cfg)
    lam = rep.leader
    if lam.real <= 0:
        raise RuntimeError(
            f"leader Re(lambda) = {lam.real:.3g} <= 0: no instability to sweep"
        )
    rs, it = cfg.resolution, cfg.integrator
    chi = cfg.chi()
    prof = cfg.profile()
    nu = cfg.nu()
    unit = eigenvector_field(rep, cfg.grid(), rs.Mmax, rs.Kmax)
    dt = cfg.dt()
    v0 = _zeros_v(cfg)

    def one(delta):
        B0 = replace(unit, coeffs=delta * unit.coeffs)
        sizes = [sobolev_norm(B0, s, ex.p) for s in (0, 1, 2)]
        log.info("sweep: delta=%.3g starting", delta)
        trace, _ = run_nonlinear(
            v0, B0, nu, cfg.physics.eps, prof, it.T_end, dt,
            sample_every=it.sample_every, p=ex.p, stop_at=chi,
        )
        try:
            t_star = detect_escape_time(trace, chi)
            escaped = True
        except NoEscapeError:
            t_star, escaped = np.nan, False
        log.info("sweep: delta=%.3g t_star=%s", delta, f"{t_star:.6g}")
        return {
            "delta": delta,
            "t_star": t_star,
            "escaped": escaped,
            "W0p": sizes[0],
            "W1p": sizes[1],
            "W2p": sizes[2],
        }

    rows = _map_indexed(one, deltas)
    fitted = [r for r in rows if r["escaped"]]
    report = {
        "leader": complex(lam),
        "mode": [int(rep.mode.m), int(rep.mode.k)],
        "chi": chi,
        "nu": nu,
        "dt": dt,
        "rows": rows,
        "checks": {},
    }
    if len(fitted) >= 2:
        x = np.log(1.0 / np.array([r["delta"] for r in fitted]))
        y = np.array([r["t_star"] for r in fitted])
        if len(fitted) > 2:
            coef, cov = np.polyfit(x, y, 1, cov=True)
            stderr = float(np.sqrt(cov[0, 0]))
        else:
            coef = np.polyfit(x, y, 1)
            stderr = np.nan
        slope = float(coef[0])
        ratio = slope * lam.real  # slope / (1/Re lambda)
        report["fit"] = {
            "slope": slope,
            "stderr": stderr,
            "lambda_ref": lam.real,
            "ratio": ratio,
        }
        tvals = [r["t_star"] for r in fitted]
        report["checks"]["slope_ratio"] = bool(0.85 <= ratio <= 1.15)
        report["checks"]["t_star_monotone"] = bool(
            all(b > a for a, b in zip(tvals, tvals[1:]))
        )
    else:
        report["fit"] = None
        report["checks"]["slope_ratio"] = False
        report["checks"]["t_star_monotone"] = False
    report["checks"]["all_escaped"] = bool(all(r["escaped"] for r in rows))
    table = np.array(
        [
            (r["delta"], r["t_star"], float(r["escaped"]), r["W0p"], r["W1p"], r["W2p"])
            for r in rows
        ]
    )
    tables = {"sweep": (("delta", "t_star", "escaped", "W0p", "W1p", "W2p"), table)}
    return report, tables


def energy_transfer_experiment(cfg: SimConfig):
    """Velocity-to-magnetic transfer at stabilizing viscosity.

    Verifies the velocity half is spectrally stable and the magnetic half
    growing, runs from delta * (0, B_leader), and measures the slope of
    log ||v|| against log ||B|| inside the growth window (the Lorentz
    force is quadratic in B, so the ratio should sit near 2).
    """
    ex, it, rs = cfg.experiment, cfg.integrator, cfg.resolution
    nu = cfg.nu()
    prof = cfg.profile()
    w1 = w1inf_norm(prof)
    if nu < 10.0 * w1:
        msg = (
            f"physics.nu = {nu:.6g} is below 10*||u||_W1inf = {10 * w1:.6g}; "
            "the stabilizing-viscosity regime is not guaranteed"
        )
        if not ex.allow_small_nu:
            raise ConfigError(msg + " (set experiment.allow_small_nu to proceed)")
        warnings.warn(msg)
    rep_v = leader_report(cfg, "linns", nu)
    rep_b = leader_report(cfg, "dynamo", cfg.physics.eps)
    report = {
        "nu": nu,
        "w1inf": w1,
        "A1_leader": complex(rep_v.leader),
        "A2_leader": complex(rep_b.leader),
        "chi": cfg.chi(),
        "delta": ex.delta,
        "checks": {
            "A1_stable": bool(rep_v.leader.real < 0),
            "A2_growing": bool(rep_b.leader.real > 0),
        },
    }
    if ex.delta == 0.0:
        # nothing evolves from nothing; the threshold clause is vacuous
        report["vacuous"] = True
        report["checks"]["B_reaches_chi"] = True
        report["checks"]["slope_ratio"] = True
        return report, {}
    if not report["checks"]["A2_growing"]:
        report["error"] = (
            f"no growing magnetic mode at eps = {cfg.physics.eps:.3g}; "
            "energy-transfer experiment not applicable"
        )
        report["checks"]["B_reaches_chi"] = False
        report["checks"]["slope_ratio"] = False
        return report, {}
    chi = cfg.chi()
    B0 = eigenvector_field(rep_b, cfg.grid(), rs.Mmax, rs.Kmax)
    B0 = replace(B0, coeffs=ex.delta * B0.coeffs)
    dt = cfg.dt()
    trace, _ = run_nonlinear(
        _zeros_v(cfg), B0, nu, cfg.physics.eps, prof, it.T_end, dt,
        sample_every=it.sample_every, p=ex.p, stop_at=1.05 * chi,
    )
    b_col = trace.col("B_Lp")
    report["B_growth_factor"] = float(b_col.max() / b_col[0])
    report["checks"]["B_reaches_chi"] = bool(b_col.max() >= chi)
    try:
        t_star = detect_escape_time(trace, chi)
        report["t_star"] = t_star
        report["escaped"] = True
    except NoEscapeError as exc:
        report["t_star"] = None
        report["escaped"] = False
        report["no_escape"] = str(exc)
        report["checks"]["slope_ratio"] = False
        return report, {"transfer_trace": trace}
    window = (0.3 * t_star, 0.9 * t_star)
    slope_b, _ = _column_slope(trace, "B_Lp", window)
    slope_v, _ = _column_slope(trace, "v_Lp", window)
    ratio = slope_v / slope_b
    report["slope_B"] = slope_b
    report["slope_v"] = slope_v
    report["slope_ratio"] = ratio
    report["fit_window"] = list(window)
    report["checks"]["slope_ratio"] = bool(1.7 <= ratio <= 2.3)
    return report, {"transfer_trace": trace}


# ---------------------------------------------------------------------------
# emission

def _format_cell(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{x:.17g}"


def _table_csv(header, rows):
    lines = [",".join(header)]
    for row in np.atleast_2d(np.asarray(rows)):
        lines.append(",".join(_format_cell(x) for x in row))
    return "\n".join(lines) + "\n"


def _json_default(obj):
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def emit_results(run_id, cfg: SimConfig, report: dict, traces=None, timings=None):
    """Write per-run CSVs and a JSON manifest into cfg.outdir.

    File names derive only from run_id and artifact names, so rerunning
    overwrites in place.  CSV bytes depend only on the data; the manifest
    carries the config, its hash, library versions, timings, and the
    check outcomes (its timestamp is the one non-reproducible field).
    """
    outdir = pathlib.Path(cfg.outdir)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise RuntimeError(f"cannot create output directory {outdir}: {exc}") from None
    written = []

    def _write(path, text):
        try:
            path.write_text(text)
        except OSError as exc:
            raise RuntimeError(f"cannot write {path}: {exc}") from None
        written.append(str(path))

    for name, obj in (traces or {}).items():
        path = outdir / f"{run_id}_{name}.csv"
        if hasattr(obj, "to_csv"):
            _write(path, obj.to_csv())
        else:
            header, rows = obj
            _write(path, _table_csv(header, rows))
    import datetime

    manifest = {
        "run_id": run_id,
        "config": cfg.to_dict(),
        "config_sha256": config_hash(cfg),
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "mhdtc": __version__,
        },
        "timings_s": timings or {},
        "report": report,
        "checks": report.get("checks", {}),
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    _write(
        outdir / f"{run_id}_manifest.json",
        json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n",
    )
    return written


# ---------------------------------------------------------------------------
# CLI

_COMMANDS = {}


def _command(name):
    def deco(fn):
        _COMMANDS[name] = fn
        return fn

    return deco


@_command("steady-check")
def _cmd_steady(cfg, args):
    return steady_report(cfg), {}


@_command("spectrum")
def _cmd_spectrum(cfg, args):
    return spectrum_report(cfg, kind=args.kind)


@_command("scaling")
def _cmd_scaling(cfg, args):
    return scaling_report(cfg)


@_command("semigroup-check")
def _cmd_semigroup(cfg, args):
    return semigroup_report(cfg)


@_command("evolve-linear")
def _cmd_evolve_linear(cfg, args):
    return linear_report(cfg)


@_command("evolve-nonlinear")
def _cmd_evolve_nonlinear(cfg, args):
    return nonlinear_report(cfg, budget=args.budget, with_nonlinear=not args.linear_only)


@_command("instability-sweep")
def _cmd_sweep(cfg, args):
    return instability_sweep(cfg)


@_command("energy-transfer")
def _cmd_transfer(cfg, args):
    return energy_transfer_experiment(cfg)


def _add_config_flags(parser):
    parser.add_argument("--config", metavar="FILE", help="JSON config document")
    parser.add_argument(
        "--preset", choices=sorted(PRESETS), help="named preset to start from"
    )
    parser.add_argument("--outdir", help="output directory (overrides config)")
    for name, cls in _SECTIONS:
        for f in dataclasses.fields(cls):
            parser.add_argument(
                f"--{name}.{f.name}",
                dest=f"{name}.{f.name}",
                default=argparse.SUPPRESS,
                metavar="V",
                help=argparse.SUPPRESS,
            )


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="mhdtc",
        description=(
            "Numerical laboratory for the magnetized Taylor-Couette "
            "instability: steady state, spectra, and nonlinear runs."
        ),
        epilog=(
            "Config flags mirror dotted JSON paths, e.g. --physics.eps 1e-3 "
            "--resolution.Nr 48.  Null-able fields (physics.nu, "
            "integrator.dt, experiment.chi) derive their defaults from the "
            "profile when unset."
        ),
    )
    parser.add_argument("--verbose", action="store_true", help="progress on stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "steady-check": "audit the steady profile (walls, momentum balance)",
        "spectrum": "rightmost retained eigenvalues over the mode window",
        "scaling": "growth-rate power law over the epsilon ladder",
        "semigroup-check": "fractional smoothing envelope of the leader block",
        "evolve-linear": "kinematic run from the leader eigenmode",
        "evolve-nonlinear": "perturbation run from delta * (0, leader)",
        "instability-sweep": "escape time vs log(1/delta)",
        "energy-transfer": "velocity-to-magnetic transfer at large nu",
    }
    for name in _COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        _add_config_flags(p)
        if name == "spectrum":
            p.add_argument(
                "--kind", choices=("dynamo", "linns"), default="dynamo",
                help="which half of the block operator to scan",
            )
        if name == "evolve-nonlinear":
            p.add_argument(
                "--budget", action="store_true",
                help="record production/dissipation at each sample",
            )
            p.add_argument(
                "--linear-only", action="store_true",
                help="disable the nonlinear terms (consistency runs)",
            )
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    overrides = [
        (key, val)
        for key, val in vars(args).items()
        if "." in key
    ]
    if args.outdir:
        overrides.append(("outdir", args.outdir))
    try:
        cfg = parse_config(args.config, overrides, args.preset)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    import time

    t0 = time.perf_counter()
    try:
        report, traces = _COMMANDS[args.command](cfg, args)
    except (ConfigError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    timings = {args.command: time.perf_counter() - t0}
    run_id = args.command.replace("-", "_")
    emit_results(run_id, cfg, report, traces, timings)
    print(json.dumps(report, indent=2, sort_keys=True, default=_json_default))
    checks = report.get("checks", {})
    ok = all(bool(v) for v in checks.values())
    for name, val in checks.items():
        print(f"[{'PASS' if val else 'FAIL'}] {name}", file=sys.stderr)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
