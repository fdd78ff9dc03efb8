"""Absorbing-ball bounds, trace majorant, dimension bound and parameter scaling."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.linalg as la

from . import assembly as asm
from .evolution import (ProblemConfig, Trajectory, build_problem_system, run_trajectory)
from .laws import linear_slip, linear_stress
from .linearized import TraceResult, lieb_thirring_curve, trace_qN
from .mesh import build_disk_mesh
from .spectrum import solve_eigenbasis

log = logging.getLogger(__name__)

TRANSIENT = 0.2
LT_RANGE = 30


@dataclass(frozen=True)
class RegimeConstants:
    m_alpha: float
    M_beta: float
    m: float
    grashof: float


def disk_area(ell: float) -> float:
    return math.pi * ell * ell / 4.0


def forcing_norm(config: ProblemConfig, space=None) -> float:
    """||F||_H = (int |f|^2 + beta * boundary |h|^2)^(1/2) on the configuration's mesh."""
    if config.time_profile is not None:
        raise ValueError("bounds require time-independent forcing")
    if space is None:
        from .fem import build_fe_space
        space = build_fe_space(build_disk_mesh(config.refinement, config.ell))
    return asm.forcing_h_norm(space, config.f, config.h, config.beta)


def regime_constants(config: ProblemConfig, F_norm: float | None = None) -> RegimeConstants:
    nu, ell = config.nu, config.ell
    m_alpha = min(1.0, config.alpha * ell / nu)
    M_beta = max(1.0, config.beta / ell)
    stress = config.stress or linear_stress(nu)
    slip = config.boundary or linear_slip(config.alpha)
    m = min(stress.c1 / nu, slip.c3)
    F = forcing_norm(config) if F_norm is None else F_norm
    return RegimeConstants(m_alpha, M_beta, m, disk_area(ell) * F / nu ** 2)


def b0_bound(config: ProblemConfig, F_norm: float | None = None) -> float:
    """(1/m)(M_beta/m_alpha)||F~|| in rescaled variables, mapped back to the H norm.

    With nu = ell = 1 this is the rescaled value itself.
    """
    F = forcing_norm(config) if F_norm is None else F_norm
    rc = regime_constants(config, F)
    F_scaled = config.ell ** 2 * F / config.nu ** 2
    return config.nu * (rc.M_beta / rc.m_alpha) * F_scaled / rc.m


def b1_bound(config: ProblemConfig, F_norm: float | None = None) -> float:
    """(1/(m c1))(M_beta/m_alpha)||F~||^2 rescaled, mapped back to ||Du||^2 units."""
    F = forcing_norm(config) if F_norm is None else F_norm
    rc = regime_constants(config, F)
    stress = config.stress or linear_stress(config.nu)
    c1 = stress.c1 / config.nu
    F_scaled = config.ell ** 2 * F / config.nu ** 2
    return (config.nu / config.ell) ** 2 * (rc.M_beta / rc.m_alpha) * F_scaled ** 2 / (rc.m * c1)


def tail_indices(traj: Trajectory, transient: float = TRANSIENT) -> np.ndarray:
    n = len(traj.times)
    return np.arange(int(np.ceil(transient * (n - 1))), n)


def b0_empirical(traj: Trajectory, transient: float = TRANSIENT) -> float:
    return float(np.sqrt(np.max(traj.H_norm_sq[tail_indices(traj, transient)])))


@dataclass
class B1Estimate:
    empirical: float
    bound: float
    drift: float
    converged: bool
    running: np.ndarray


def b1_estimate(traj: Trajectory, F_norm: float | None = None,
                transient: float = TRANSIENT) -> B1Estimate:
    """Running time average of ||Du||^2 after the transient, with a drift diagnostic."""
    idx = tail_indices(traj, transient)
    if len(idx) < 4:
        raise ValueError("trajectory too short for a time average")
    vals = traj.Du_sq[idx]
    running = np.cumsum(vals) / np.arange(1, len(vals) + 1)
    ref = running[int(0.75 * (len(vals) - 1))]
    final = running[-1]
    drift = abs(final - ref) / final if final > 0 else 0.0
    bound = b1_bound(traj.config, F_norm)
    return B1Estimate(float(final), float(bound), float(drift), bool(drift < 0.05), running)


# ---- reference constants ------------------------------------------------------

@dataclass(frozen=True)
class ReferenceConstants:
    """Shape constants on the unit-diameter disk with alpha = beta = nu = 1."""

    korn: float
    kappa: float
    eig_slope: float
    kappa_curve: tuple
    refinement: int
    kappa_raw_curve: tuple = ()

    @property
    def c0(self) -> float:
        return math.sqrt(2.0 * self.kappa * self.korn / self.eig_slope)


@lru_cache(maxsize=8)
def reference_constants(refinement: int, n_lt: int = LT_RANGE) -> ReferenceConstants:
    mesh = build_disk_mesh(refinement, 1.0)
    sys = asm.build_system(mesh, 1.0, 1.0, 1.0)
    korn = asm.korn_constant(sys.inner)
    n_ev = min(max(n_lt, 60), sys.reduced.dim)
    basis = solve_eigenbasis(sys, n_ev)
    Ns = range(1, min(n_lt, n_ev) + 1)
    curve = lieb_thirring_curve(basis.omega, sys.inner, Ns, orthonormalize=True)
    raw = lieb_thirring_curve(basis.omega, sys.inner, Ns, orthonormalize=False)
    slope = float(np.min(basis.mu / np.arange(1, n_ev + 1)))
    kappa = float(max(curve.max(), raw.max()))
    return ReferenceConstants(korn, kappa, slope, tuple(curve), refinement, tuple(raw))


def stokes_eigenvalues(sys, n: int) -> np.ndarray:
    """Leading eigenvalues of the Stokes operator nu int Du:Dphi + alpha boundary term in H."""
    Az = sys.A_reduced
    n = min(n, Az.shape[0])
    return la.eigh(Az, eigvals_only=True, subset_by_index=[0, n - 1], driver="evr")


# ---- majorant and report ------------------------------------------------------

def majorant(lam: np.ndarray, Du_avg: float, nu: float, m_alpha: float,
             consts: ReferenceConstants) -> np.ndarray:
    """f(N) = -1/2 sum_{j<=N} lambda_j + kappa C_K / (2 nu m_alpha) * avg ||Du||^2."""
    return -0.5 * np.cumsum(lam) + consts.kappa * consts.korn * Du_avg / (2.0 * nu * m_alpha)


def first_nonpositive(values, strict=False):
    v = np.asarray(values)
    hit = np.flatnonzero(v < 0 if strict else v <= 0)
    return int(hit[0]) + 1 if len(hit) else None


@dataclass
class DimensionReport:
    b0_bound: float
    b0_emp: float
    b1_bound: float
    b1_emp: float
    qN: np.ndarray
    analytic: np.ndarray
    n_star_numeric: int | None
    n_star_formula: int | None
    formula_bound: float
    c0_parts: dict
    regime: dict
    chain_holds: bool
    notes: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "b0_bound": self.b0_bound, "b0_emp": self.b0_emp,
            "b1_bound": self.b1_bound, "b1_emp": self.b1_emp,
            "n_star_numeric": self.n_star_numeric, "n_star_formula": self.n_star_formula,
            "formula_bound": self.formula_bound,
            "c0_parts": dict(self.c0_parts),
            "regime": dict(self.regime),
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2, sort_keys=False) + "\n")


def formula_bound(config: ProblemConfig, F_norm: float, consts: ReferenceConstants) -> float:
    rc = regime_constants(config, F_norm)
    return consts.c0 * rc.M_beta / rc.m_alpha ** 1.5 * config.ell ** 2 * F_norm / config.nu ** 2


def dimension_bound(config: ProblemConfig, traj: Trajectory, basis=None,
                    N_max: int = 20, stride: int = 10, trace: TraceResult | None = None,
                    consts: ReferenceConstants | None = None,
                    n_formula: int = 400) -> DimensionReport:
    """Assemble the bound report from a trajectory, its trace sums and the shape constants."""
    sys = traj.sys
    F = forcing_norm(config, sys.space)
    rc = regime_constants(config, F)
    consts = reference_constants(config.refinement) if consts is None else consts
    trace = trace_qN(traj, N_max, stride) if trace is None else trace
    lam = stokes_eigenvalues(sys, max(n_formula, N_max))
    f = majorant(lam, trace.Du_avg, config.nu, rc.m_alpha, consts)
    notes = []
    n_num = first_nonpositive(trace.qN, strict=True)
    if n_num is None:
        notes.append("N_star exceeds desk-scale window")
    n_form = first_nonpositive(f)
    chain = bool(np.all(trace.qN <= f[:len(trace.qN)] + 1e-10 * np.abs(f[:len(trace.qN)]).max()))
    b1 = b1_estimate(traj, F)
    return DimensionReport(
        b0_bound=b0_bound(config, F), b0_emp=b0_empirical(traj),
        b1_bound=b1.bound, b1_emp=b1.empirical,
        qN=trace.qN, analytic=f[:len(trace.qN)],
        n_star_numeric=n_num, n_star_formula=n_form,
        formula_bound=formula_bound(config, F, consts),
        c0_parts={"korn": consts.korn, "kappa": consts.kappa, "eig_slope": consts.eig_slope},
        regime={"m_alpha": rc.m_alpha, "m_beta": rc.M_beta, "grashof": rc.grashof},
        chain_holds=chain, notes=notes)


# ---- scaling -------------------------------------------------------------------

@dataclass(frozen=True)
class ScalingRecord:
    a: float      # velocity scale nu / ell
    tau: float    # time scale ell^2 / nu
    ell: float
    nu: float

    def velocity_to_physical(self, u_scaled):
        return self.a * np.asarray(u_scaled)

    def time_to_physical(self, t_scaled):
        return self.tau * np.asarray(t_scaled)


def _scale_field(fn, ell, factor):
    if fn is None:
        return None
    if callable(fn):
        def g(x, y):
            fx, fy = fn(ell * x, ell * y)
            return factor * np.asarray(fx, dtype=float), factor * np.asarray(fy, dtype=float)
        return g
    if isinstance(fn, tuple) and isinstance(fn[0], str):
        return (fn[0], factor * fn[1])
    return factor * np.asarray(fn, dtype=float)


def nondimensionalize(config: ProblemConfig):
    """Map to nu = ell = 1 with alpha ell/nu, beta/ell and forcing times ell^3/nu^2."""
    nu, ell = config.nu, config.ell
    for law in (config.stress, config.boundary):
        if law is not None and not law.linear:
            raise ValueError("scaling is implemented for linear laws only")
    rec = ScalingRecord(nu / ell, ell ** 2 / nu, ell, nu)
    k = ell ** 3 / nu ** 2
    u0 = config.u0
    if u0 is not None:
        if callable(u0):
            u0 = _scale_field(u0, ell, 1.0 / rec.a)
        else:
            u0 = np.asarray(u0) / rec.a
    prof = config.time_profile
    if prof is not None:
        prof = (lambda g, tau: (lambda t: g(tau * t)))(prof, rec.tau)
    alpha = config.alpha * ell / nu
    scaled = replace(config, nu=1.0, ell=1.0, alpha=alpha, beta=config.beta / ell,
                     f=_scale_field(config.f, ell, k), h=_scale_field(config.h, ell, k),
                     stress=None if config.stress is None else linear_stress(1.0),
                     boundary=None if config.boundary is None else linear_slip(alpha),
                     u0=u0, dt=config.dt / rec.tau, t_end=config.t_end / rec.tau,
                     time_profile=prof)
    return scaled, rec


@dataclass
class ScaleCheck:
    gap: float
    passed: bool
    report_gap: float | None = None


def scale_roundtrip(config: ProblemConfig, tol: float = 1e-8) -> ScaleCheck:
    """Solve directly and through the scaled problem; compare back-mapped trajectories."""
    direct = run_trajectory(config)
    scaled, rec = nondimensionalize(config)
    twin = run_trajectory(scaled)
    back = rec.velocity_to_physical(twin.states)
    M = direct.sys.inner.M_H
    diff = back - direct.states
    num = np.sqrt(np.einsum("ij,ij->i", diff, (M @ diff.T).T))
    den = np.sqrt(np.einsum("ij,ij->i", direct.states, (M @ direct.states.T).T))
    scale = max(den.max(), 1e-300)
    gap = float(num.max() / scale)
    return ScaleCheck(gap, gap < tol)


def report_roundtrip(config: ProblemConfig, N_max: int = 20, stride: int = 10,
                     tol: float = 1e-8) -> ScaleCheck:
    """Dimension report computed directly and through the scaled problem.

    Quantities are mapped back with their units (H norm a*ell, ||Du||^2 a^2,
    trace sums 1/tau) and the largest relative difference is returned.
    """
    direct = run_trajectory(config)
    rep = dimension_bound(config, direct, N_max=N_max, stride=stride)
    scaled, rec = nondimensionalize(config)
    twin = run_trajectory(scaled)
    rep_s = dimension_bound(scaled, twin, N_max=N_max, stride=stride)
    av, a2, rate = rec.a * rec.ell, rec.a ** 2, 1.0 / rec.tau
    pairs = [(rep.b0_bound, av * rep_s.b0_bound), (rep.b0_emp, av * rep_s.b0_emp),
             (rep.b1_bound, a2 * rep_s.b1_bound), (rep.b1_emp, a2 * rep_s.b1_emp),
             (rep.formula_bound, rep_s.formula_bound)]
    pairs += list(zip(rep.qN, rate * rep_s.qN)) + list(zip(rep.analytic, rate * rep_s.analytic))
    pairs += [(rep.regime[k], rep_s.regime[k]) for k in rep.regime]
    gap = max(abs(x - y) / max(abs(x), abs(y), 1e-300) for x, y in pairs)
    same_n = (rep.n_star_numeric == rep_s.n_star_numeric
              and rep.n_star_formula == rep_s.n_star_formula)
    return ScaleCheck(float(gap), bool(gap < tol and same_n), float(gap))


# ---- regime table ---------------------------------------------------------------

@dataclass
class RegimeRow:
    alpha: float
    beta: float
    nu: float
    F_norm: float
    m_alpha: float
    M_beta: float
    formula_bound: float
    n_star_numeric: int | None
    status: str = "ok"


def regime_table(alphas, betas, nus, F_norms, base: ProblemConfig, shape=None,
                 numeric: bool = True, N_max: int = 20, stride: int = 10):
    """Formula bound and measured N_star over a parameter grid.

    ``shape`` is an interior forcing of unit L^2 norm; each cell scales it to the
    requested ||F||_H (no boundary forcing, so the norm does not depend on beta).
    """
    if len(alphas) > 5 or len(betas) > 5 or len(nus) > 3 or len(F_norms) > 3:
        raise ValueError("grid exceeds desk-scale limit 5x5x3x3")
    consts = reference_constants(base.refinement)
    rows = []
    for nu in nus:
        for Fn in F_norms:
            for beta in betas:
                for alpha in alphas:
                    cfg = replace(base, nu=nu, alpha=alpha, beta=beta, h=None,
                                  f=_scale_field(shape, 1.0, Fn) if shape is not None else None)
                    rc = regime_constants(cfg, Fn)
                    fb = formula_bound(cfg, Fn, consts)
                    n_star, status = None, "ok"
                    if numeric:
                        try:
                            traj = run_trajectory(cfg)
                            tr = trace_qN(traj, N_max, stride)
                            n_star = first_nonpositive(tr.qN, strict=True)
                            if n_star is None:
                                status = "n_star beyond window"
                        except Exception as exc:  # recorded per cell, not fatal
                            status = f"failed: {exc}"
                    rows.append(RegimeRow(alpha, beta, nu, Fn, rc.m_alpha, rc.M_beta, fb,
                                          n_star, status))
    return rows, regime_flags(rows, base.ell)


def regime_flags(rows, ell: float, rtol: float = 1e-12) -> dict:
    """Monotonicity of the formula bound along the alpha and beta axes."""
    groups_a, groups_b = {}, {}
    for r in rows:
        groups_a.setdefault((r.beta, r.nu, r.F_norm), []).append(r)
        groups_b.setdefault((r.alpha, r.nu, r.F_norm), []).append(r)
    ok_alpha = True
    for g in groups_a.values():
        g = sorted(g, key=lambda r: r.alpha)
        for p, q in zip(g, g[1:]):
            if q.formula_bound > p.formula_bound * (1 + rtol) + 1e-300:
                ok_alpha = False
            if p.alpha * ell / p.nu >= 1 and abs(q.formula_bound - p.formula_bound) > rtol * max(p.formula_bound, 1e-300):
                ok_alpha = False
    ok_beta = True
    for g in groups_b.values():
        g = sorted(g, key=lambda r: r.beta)
        flat = [r for r in g if r.beta <= ell]
        for p, q in zip(flat, flat[1:]):
            if abs(q.formula_bound - p.formula_bound) > rtol * max(p.formula_bound, 1e-300):
                ok_beta = False
        lin = [r for r in g if r.beta >= ell]
        for p in lin:
            if p.formula_bound > 0:
                ratio = p.formula_bound / p.beta
                ref = lin[0].formula_bound / lin[0].beta
                if abs(ratio - ref) > 1e-9 * ref:
                    ok_beta = False
    zero_ok = all(r.formula_bound == 0 for r in rows if r.F_norm == 0)
    return {"alpha_monotone_then_flat": ok_alpha, "beta_flat_then_linear": ok_beta,
            "zero_forcing_zero_bound": zero_ok}


def write_regime_csv(rows, path) -> None:
    head = "alpha,beta,nu,F_norm,m_alpha,M_beta,formula_bound,n_star_numeric,status"
    lines = [head]
    for r in rows:
        ns = "" if r.n_star_numeric is None else str(r.n_star_numeric)
        lines.append(",".join([repr(float(r.alpha)), repr(float(r.beta)), repr(float(r.nu)),
                               repr(float(r.F_norm)), repr(float(r.m_alpha)),
                               repr(float(r.M_beta)), repr(float(r.formula_bound)), ns,
                               r.status]))
    Path(path).write_text("\n".join(lines) + "\n")
