"""Time integration of the slip Stokes and Navier-Stokes systems with energy diagnostics."""
from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg as la

from . import assembly as asm
from .assembly import DiscreteSystem, build_system
from .laws import BoundaryLaw, ConstitutiveLaw
from .mesh import build_disk_mesh

log = logging.getLogger(__name__)

PICARD_TOL = 1e-10
PICARD_MAX = 50


class NumericalFailure(RuntimeError):
    """Raised when a solver step breaks down; carries the step index."""

    def __init__(self, message, step=None, operation="step"):
        super().__init__(message)
        self.step = step
        self.operation = operation


@dataclass
class ProblemConfig:
    nu: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    ell: float = 1.0
    f: object = None
    h: object = None
    stress: ConstitutiveLaw | None = None
    boundary: BoundaryLaw | None = None
    u0: object = None             # constrained coefficients or callable (x, y) -> (ux, uy)
    dt: float = 0.01
    t_end: float = 1.0
    model: str = "nse"            # "stokes" or "nse"
    theta: float = 1.0
    picard: bool = False
    convection: str = "emac"
    refinement: int = 2
    time_profile: Callable | None = None   # scalar factor g(t) multiplying the forcing

    def validate(self):
        for k in ("nu", "alpha", "beta", "ell", "dt"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be non-negative")
        if self.theta not in (0.5, 1.0):
            raise ValueError("theta must be 1 or 0.5")
        if self.model not in ("stokes", "nse"):
            raise ValueError("model must be 'stokes' or 'nse'")
        if self.convection not in asm.CONVECTION_FORMS:
            raise ValueError(f"unknown convection form {self.convection!r}")


def build_problem_system(cfg: ProblemConfig, space=None) -> DiscreteSystem:
    cfg.validate()
    mesh = space.mesh if space is not None else build_disk_mesh(cfg.refinement, cfg.ell)
    return build_system(mesh, cfg.nu, cfg.alpha, cfg.beta, cfg.f, cfg.h,
                        stress=cfg.stress, boundary=cfg.boundary, space=space)


def initial_state(sys: DiscreteSystem, u0) -> np.ndarray:
    """M_H-orthogonal projection of the initial data onto the constrained div-free space."""
    if u0 is None:
        return np.zeros(sys.n)
    if callable(u0):
        u0 = sys.interpolate(u0)
    return sys.project(np.asarray(u0, dtype=float))


class Stepper:
    """theta-scheme in the M_H-orthonormal divergence-free coordinates."""

    def __init__(self, sys: DiscreteSystem, dt: float, theta: float = 1.0, model="nse",
                 picard=False, form="emac", time_profile=None):
        if theta not in (0.5, 1.0):
            raise ValueError("theta must be 1 or 0.5")
        self.sys, self.dt, self.theta = sys, float(dt), float(theta)
        self.model, self.picard, self.form = model, picard, form
        self.time_profile = time_profile
        Az = sys.A_reduced
        n = Az.shape[0]
        self.lhs = np.eye(n) + self.theta * self.dt * Az
        self.rhs_op = np.eye(n) - (1.0 - self.theta) * self.dt * Az
        try:
            self.chol = la.cho_factor(self.lhs, lower=True)
        except la.LinAlgError as exc:
            raise NumericalFailure(f"implicit matrix not definite: {exc}") from exc
        self.W = sys.reduced.W
        self.Fz = self.W.T @ sys.load
        self.last_residual = 0.0
        self.last_iterations = 0

    def forcing(self, t):
        g = 1.0 if self.time_profile is None else float(self.time_profile(t))
        return g * self.Fz

    def nonlinear(self, y) -> np.ndarray:
        """Reduced explicit remainder: convection plus stress and slip deviations."""
        sys = self.sys
        uf = sys.P @ (self.W @ y)
        g = np.zeros(sys.space.n_full)
        if self.model == "nse":
            g += asm.trilinear_full(sys.space, uf, uf, self.form)
        if not sys.stress.linear:
            g += asm.stress_deviation_full(sys.space, sys.stress, uf)
        if not sys.boundary.linear:
            g += asm.slip_deviation_full(sys.space, sys.boundary, uf)
        return self.W.T @ (sys.P.T @ g)

    @property
    def has_remainder(self) -> bool:
        return self.model == "nse" or not self.sys.is_linear

    def _solve(self, rhs, step_index=None):
        if not np.all(np.isfinite(rhs)):
            raise NumericalFailure("non-finite right-hand side", step_index, "evolution.step")
        y = la.cho_solve(self.chol, rhs)
        r = np.linalg.norm(self.lhs @ y - rhs) / max(np.linalg.norm(rhs), 1e-300)
        self.last_residual = r
        return y

    def step(self, y, t, step_index=None):
        th, dt = self.theta, self.dt
        base = self.rhs_op @ y + dt * self.forcing(t + th * dt)
        if not self.has_remainder:
            y1 = self._solve(base, step_index)
        elif not self.picard:
            y1 = self._solve(base - dt * self.nonlinear(y), step_index)
        else:
            y1 = self._solve(base - dt * self.nonlinear(y), step_index)
            for it in range(PICARD_MAX):
                ym = th * y1 + (1 - th) * y
                y_new = self._solve(base - dt * self.nonlinear(ym), step_index)
                delta = np.linalg.norm(y_new - y1)
                y1 = y_new
                if delta <= PICARD_TOL * max(1.0, np.linalg.norm(y1)):
                    self.last_iterations = it + 1
                    break
            else:
                raise NumericalFailure("Picard iteration did not converge", step_index,
                                       "evolution.step_navier_stokes")
        if not np.all(np.isfinite(y1)):
            raise NumericalFailure("non-finite state", step_index, "evolution.step")
        return y1


def _cached_stepper(sys, dt, theta, model, picard=False, form="emac", time_profile=None):
    key = ("stepper", float(dt), float(theta), model, picard, form, id(time_profile))
    st = sys._cache.get(key)
    if st is None:
        st = Stepper(sys, dt, theta, model, picard, form, time_profile)
        sys._cache[key] = st
    return st


def step_stokes(sys: DiscreteSystem, state, dt: float, theta: float = 1.0, t: float = 0.0):
    """One theta-step of the linear evolutionary Stokes system."""
    st = _cached_stepper(sys, dt, theta, "stokes")
    y = sys.reduce(state)
    return sys.reduced.W @ st.step(y, t)


def step_navier_stokes(sys: DiscreteSystem, state, dt: float, theta: float = 1.0,
                       picard: bool = False, form: str = "emac", t: float = 0.0):
    """One semi-implicit (or Picard) step of the nonlinear system."""
    st = _cached_stepper(sys, dt, theta, "nse", picard, form)
    y = sys.reduce(state)
    return sys.reduced.W @ st.step(y, t)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray            # (n_records, n_constrained)
    H_norm_sq: np.ndarray
    Du_sq: np.ndarray
    stress_dissipation: np.ndarray
    boundary_dissipation: np.ndarray
    work: np.ndarray
    sys: DiscreteSystem
    config: ProblemConfig
    energy_residual: np.ndarray = field(default=None)
    grad_sq: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.times)
        for name in ("states", "H_norm_sq", "Du_sq", "boundary_dissipation", "work"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"inconsistent trajectory length for {name}")
        if self.energy_residual is None:
            self.energy_residual = energy_budget(self)[1]

    @property
    def dt(self) -> float:
        return self.config.dt


def _diagnostics(sys: DiscreteSystem, u, load):
    uf = sys.P @ u
    space = sys.space
    return (sys.inner.h_inner(u, u),
            float(u @ (sys.inner.K_D @ u)),
            asm.stress_power(space, sys.stress, uf),
            asm.slip_power(space, sys.boundary, uf),
            float(load @ u),
            float(uf @ (sys.inner.full.grad @ uf)))


def run_trajectory(config: ProblemConfig, sys: DiscreteSystem | None = None,
                   u0=None) -> Trajectory:
    """Integrate from the projected initial data and record diagnostics every step."""
    config.validate()
    sys = build_problem_system(config) if sys is None else sys
    y = sys.reduce(initial_state(sys, config.u0 if u0 is None else u0))
    n_steps = int(round(config.t_end / config.dt))
    st = _cached_stepper(sys, config.dt, config.theta, config.model, config.picard,
                         config.convection, config.time_profile)
    W = sys.reduced.W
    states = np.empty((n_steps + 1, sys.n))
    diag = np.empty((n_steps + 1, 6))
    times = config.dt * np.arange(n_steps + 1)

    def record(i, yv):
        u = W @ yv
        states[i] = u
        g = 1.0 if config.time_profile is None else float(config.time_profile(times[i]))
        diag[i] = _diagnostics(sys, u, g * sys.load)

    record(0, y)
    for i in range(n_steps):
        y = st.step(y, times[i], step_index=i + 1)
        record(i + 1, y)
    return Trajectory(times, states, diag[:, 0], diag[:, 1], diag[:, 2], diag[:, 3],
                      diag[:, 4], sys, config, grad_sq=diag[:, 5])


def energy_budget(traj: Trajectory):
    """Per-step and cumulative residual of the energy equality.

    Time integrals use the right endpoint for implicit Euler and the trapezoid
    rule for Crank-Nicolson, matching the consistency of each scheme.
    """
    if len(traj.times) == 0:
        raise ValueError("empty trajectory")
    E = 0.5 * traj.H_norm_sq
    rate = traj.stress_dissipation + traj.boundary_dissipation - traj.work
    dt = np.diff(traj.times)
    if traj.config.theta == 1.0:
        flux = dt * rate[1:]
    else:
        flux = 0.5 * dt * (rate[1:] + rate[:-1])
    per_step = np.diff(E) + flux
    cumulative = np.concatenate([[0.0], np.cumsum(per_step)])
    return per_step, cumulative


def write_trajectory_csv(traj: Trajectory, path) -> None:
    rows = ["t,H_norm_sq,Du_sq,boundary_dissipation,work,energy_residual"]
    for vals in zip(traj.times, traj.H_norm_sq, traj.Du_sq, traj.boundary_dissipation,
                    traj.work, traj.energy_residual):
        rows.append(",".join(repr(float(v)) for v in vals))
    Path(path).write_text("\n".join(rows) + "\n")


_CKPT_MAGIC = b"DSCK"


def config_digest(payload: str | bytes) -> bytes:
    if isinstance(payload, str):
        payload = payload.encode()
    return hashlib.sha256(payload).digest()


def write_checkpoint(path, u, digest: bytes) -> None:
    """Magic, 32-byte config digest, uint64 length, then little-endian float64 data."""
    data = np.ascontiguousarray(u, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC + digest + struct.pack("<Q", len(data)) + data.tobytes())


def read_checkpoint(path, digest: bytes | None = None) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != _CKPT_MAGIC:
        raise ValueError("not a checkpoint file")
    stored = raw[4:36]
    if digest is not None and stored != digest:
        raise ValueError("checkpoint was written for a different configuration")
    (n,) = struct.unpack("<Q", raw[36:44])
    return np.frombuffer(raw[44:44 + 8 * n], dtype="<f8").copy()


@dataclass
class DependenceResult:
    eps: float
    C_sup: float       # max_t ||w(t)||_H^2 / ||w(0)||_H^2
    C_grad: float      # int_0^T ||grad w||^2 / ||w(0)||_H^2


def continuous_dependence(config: ProblemConfig, direction, eps_list, sys=None,
                          base: Trajectory | None = None):
    """Measure the constants of ||w(t)||^2 <= C ||w0||^2 and int ||grad w||^2 <= C ||w0||^2."""
    sys = build_problem_system(config) if sys is None else sys
    base = run_trajectory(config, sys) if base is None else base
    d = sys.project(sys.interpolate(direction) if callable(direction) else direction)
    d = d / sys.inner.h_norm(d)
    out = []
    G = sys.inner.full.grad
    for eps in eps_list:
        pert = run_trajectory(config, sys, u0=base.states[0] + eps * d)
        wdiff = pert.states - base.states
        h2 = np.einsum("ij,ij->i", wdiff, (sys.inner.M_H @ wdiff.T).T)
        wf = (sys.P @ wdiff.T)
        g2 = np.einsum("ij,ij->j", wf, G @ wf)
        dt = np.diff(base.times)
        integral = float(np.sum(0.5 * dt * (g2[1:] + g2[:-1])))
        w0 = h2[0]
        out.append(DependenceResult(float(eps), float(h2.max() / w0), integral / w0))
    return out
