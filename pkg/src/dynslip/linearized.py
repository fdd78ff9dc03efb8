"""Equation of variations, quasidifferentiability, trace sums and Lieb-Thirring ratios."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as la

from . import assembly as asm
from .assembly import DiscreteSystem
from .evolution import (NumericalFailure, ProblemConfig, Stepper, Trajectory,
                        _cached_stepper, build_problem_system, run_trajectory)


def remainder_jacobian(sys: DiscreteSystem, uf, model="nse", form="emac",
                       first_slot=True):
    """Constrained sparse derivative of the explicit remainder at the Cartesian field uf."""
    space = sys.space
    J = None
    if model == "nse":
        J = asm.convection_jacobian_full(space, uf, form, first_slot=first_slot)
    if not sys.stress.linear:
        Js = asm.stress_tangent_deviation_full(space, sys.stress, uf)
        J = Js if J is None else J + Js
    if not sys.boundary.linear:
        Jb = asm.slip_tangent_deviation_full(space, sys.boundary, uf)
        J = Jb if J is None else J + Jb
    if J is None:
        return None
    return (sys.P.T @ J @ sys.P).tocsr()


@dataclass
class LinearizedOperator:
    """U -> L(u) U on the divergence-free subspace, paired with the H inner product."""

    sys: DiscreteSystem
    u: np.ndarray
    J: object           # constrained sparse Jacobian of A u + remainder(u)
    time_index: int = 0

    def apply(self, U) -> np.ndarray:
        """Coordinates of L U, defined by (L U, phi)_H = -<J U, phi> on div-free phi."""
        W = self.sys.reduced.W
        return -W @ (W.T @ (self.J @ U))

    @property
    def reduced(self) -> np.ndarray:
        W = self.sys.reduced.W
        return -(W.T @ (self.J @ W))

    @property
    def symmetric_part(self) -> np.ndarray:
        cached = getattr(self, "_sym", None)
        if cached is None:
            L = self.reduced
            cached = 0.5 * (L + L.T)
            self._sym = cached
        return cached


def linearized_operator(sys: DiscreteSystem, u, model="nse", form="emac",
                        time_index=0) -> LinearizedOperator:
    Jr = remainder_jacobian(sys, sys.P @ u, model, form)
    J = sys.A if Jr is None else (sys.A + Jr).tocsr()
    return LinearizedOperator(sys, np.asarray(u), J, time_index)


class LinearizedStepper:
    """Tangent of the discrete solution map along a stored trajectory."""

    def __init__(self, traj: Trajectory, first_slot=True):
        cfg = traj.config
        self.traj = traj
        self.sys = traj.sys
        self.first_slot = first_slot
        self.base = _cached_stepper(self.sys, cfg.dt, cfg.theta, cfg.model, cfg.picard,
                                    cfg.convection, cfg.time_profile)

    def _jac_reduced(self, u):
        sys, cfg = self.sys, self.traj.config
        Jr = remainder_jacobian(sys, sys.P @ u, cfg.model, cfg.convection, self.first_slot)
        if Jr is None:
            return None
        W = sys.reduced.W
        return W.T @ (Jr @ W)

    def step(self, Y, n: int):
        """Advance reduced perturbation coordinates from record n to n + 1."""
        if not 0 <= n < len(self.traj.times) - 1:
            raise IndexError(f"time index {n} outside trajectory")
        st: Stepper = self.base
        cfg = self.traj.config
        rhs = st.rhs_op @ Y
        if not st.has_remainder:
            return st._solve(rhs)
        if not cfg.picard:
            G = self._jac_reduced(self.traj.states[n])
            return st._solve(rhs - st.dt * (G @ Y))
        th = cfg.theta
        um = th * self.traj.states[n + 1] + (1 - th) * self.traj.states[n]
        G = self._jac_reduced(um)
        lhs = st.lhs + th * st.dt * G
        return la.solve(lhs, rhs - (1 - th) * st.dt * (G @ Y))


def linearized_step(traj: Trajectory, U, n: int, first_slot=True):
    """One step of the equation of variations from record n (constrained coordinates)."""
    ls = LinearizedStepper(traj, first_slot)
    sys = traj.sys
    return sys.reduced.W @ ls.step(sys.reduce(U), n)


def linearized_flow(traj: Trajectory, U0, first_slot=True) -> np.ndarray:
    """Perturbation states U(t_n) for all records of the trajectory."""
    ls = LinearizedStepper(traj, first_slot)
    sys = traj.sys
    Y = sys.reduce(U0)
    out = np.empty((len(traj.times), sys.n))
    out[0] = sys.reduced.W @ Y
    for n in range(len(traj.times) - 1):
        Y = ls.step(Y, n)
        out[n + 1] = sys.reduced.W @ Y
    return out


@dataclass
class QuasiDiffResult:
    eps: np.ndarray
    residuals: np.ndarray
    slope: float
    used: np.ndarray

    @property
    def superlinear(self) -> bool:
        return bool(np.isfinite(self.slope) and self.slope > 1.0)


NOISE_FLOOR = 1e-12


def quasidifferential_order(config: ProblemConfig, u0, direction, epsilons,
                            sys: DiscreteSystem | None = None, first_slot=True,
                            base: Trajectory | None = None) -> QuasiDiffResult:
    """Fit the log-log slope of sup_t ||v(t) - u(t) - U(t)||_H against eps."""
    eps = np.asarray(epsilons, dtype=float)
    if len(eps) < 3 or np.any(np.diff(eps) >= 0):
        raise ValueError("need at least three decreasing epsilons")
    sys = build_problem_system(config) if sys is None else sys
    base = run_trajectory(config, sys, u0=u0) if base is None else base
    d = sys.project(sys.interpolate(direction) if callable(direction) else direction)
    d = d / sys.inner.h_norm(d)
    U1 = linearized_flow(base, d, first_slot)
    res = []
    for e in eps:
        pert = run_trajectory(config, sys, u0=base.states[0] + e * d)
        gap = pert.states - base.states - e * U1
        g = np.sqrt(np.maximum(np.einsum("ij,ij->i", gap, (sys.inner.M_H @ gap.T).T), 0))
        res.append(g.max())
    res = np.array(res)
    used = res > NOISE_FLOOR
    if used.sum() >= 2:
        slope = float(np.polyfit(np.log(eps[used]), np.log(res[used]), 1)[0])
    else:
        slope = float("nan")
    return QuasiDiffResult(eps, res, slope, used)


# ---- trace sums --------------------------------------------------------------

@dataclass
class TraceResult:
    N: np.ndarray              # 1..N_max
    qN: np.ndarray             # time-averaged top-N sums
    sample_indices: np.ndarray
    partial_sums: np.ndarray   # (n_samples, N_max)
    running: np.ndarray        # running averages (n_samples, N_max)
    Du_avg: float              # average of ||Du||^2 over the same samples
    grad_avg: float


def sample_indices(n_records: int, stride: int = 10, transient: float = 0.2) -> np.ndarray:
    first = int(np.ceil(transient * (n_records - 1)))
    idx = np.arange(first, n_records, max(1, stride))
    return idx if len(idx) else np.array([n_records - 1])


def top_eigen_sums(S: np.ndarray, N_max: int) -> np.ndarray:
    """Partial sums of the N_max largest eigenvalues of a symmetric matrix."""
    n = S.shape[0]
    N_max = min(N_max, n)
    ev = la.eigh(S, eigvals_only=True, subset_by_index=[n - N_max, n - 1], driver="evr")
    return np.cumsum(ev[::-1])


def trace_qN(traj: Trajectory, N_max: int, stride: int = 10, transient: float = 0.2,
             indices=None) -> TraceResult:
    """Time average of the supremum of sum (L phi_j, phi_j)_H over H-orthonormal N-families."""
    if N_max > 60:
        raise ValueError("N_max above desk-scale limit 60")
    sys, cfg = traj.sys, traj.config
    idx = sample_indices(len(traj.times), stride, transient) if indices is None else np.asarray(indices)
    sums = np.empty((len(idx), N_max))
    for i, n in enumerate(idx):
        L = linearized_operator(sys, traj.states[n], cfg.model, cfg.convection, int(n))
        try:
            sums[i] = top_eigen_sums(L.symmetric_part, N_max)
        except la.LinAlgError as exc:
            raise NumericalFailure(f"eigensolver failed at sample {n}: {exc}", int(n),
                                   "trace_qN") from exc
    running = np.cumsum(sums, axis=0) / np.arange(1, len(idx) + 1)[:, None]
    return TraceResult(np.arange(1, N_max + 1), running[-1], idx, sums, running,
                       float(np.mean(traj.Du_sq[idx])),
                       float(np.mean(traj.grad_sq[idx])) if traj.grad_sq is not None else np.nan)


# ---- suborthonormal families and Lieb-Thirring -----------------------------------

@dataclass
class SubOrthoFamily:
    vectors: np.ndarray       # (n_constrained, N)
    metric: str = "H"


@dataclass
class Verdict:
    passed: bool
    value: float


def check_suborthonormal(family: SubOrthoFamily, inner: asm.InnerProducts,
                         tol: float = 1e-10) -> Verdict:
    """Largest eigenvalue of the interior L^2 Gram matrix must not exceed one."""
    V = np.atleast_2d(family.vectors.T).T
    G = V.T @ (inner.M_int @ V)
    top = float(np.linalg.eigvalsh(0.5 * (G + G.T)).max())
    return Verdict(top <= 1.0 + tol, top)


def lieb_thirring_ratio(family: SubOrthoFamily, inner: asm.InnerProducts) -> float:
    """int rho^2 / sum(||grad phi||^2 + ||phi||^2 / diam), rho = sum |phi_j|^2."""
    v = check_suborthonormal(family, inner)
    if not v.passed:
        raise ValueError(f"family is not suborthonormal (Gram max {v.value:.6g})")
    space = inner.space
    V = np.atleast_2d(family.vectors.T).T
    Vf = space.prolongation @ V
    _, w = space.quad
    val, _, _ = space.tables
    rho = np.zeros(w.shape)
    for j in range(Vf.shape[1]):
        U = np.einsum("eqa,eac->eqc", val, Vf[:, j].reshape(-1, 2)[space.elem_nodes])
        rho += np.sum(U * U, axis=-1)
    lhs = float(np.sum(w * rho * rho))
    diam = space.mesh.char_length
    grad = np.einsum("ij,ij->j", Vf, inner.full.grad @ Vf)
    l2 = np.einsum("ij,ij->j", V, inner.M_int @ V)
    return lhs / float(np.sum(grad + l2 / diam))


def l2_orthonormal_span(vectors, inner: asm.InnerProducts) -> np.ndarray:
    """Interior-L^2-orthonormal basis of span(vectors) (symmetric orthonormalization)."""
    V = np.atleast_2d(vectors.T).T
    G = V.T @ (inner.M_int @ V)
    w, U = np.linalg.eigh(0.5 * (G + G.T))
    return V @ (U / np.sqrt(w))


def lieb_thirring_curve(vectors, inner: asm.InnerProducts, N_values,
                        orthonormalize: bool = True) -> np.ndarray:
    """kappa(N) from the first N vectors, optionally made L^2(interior)-orthonormal."""
    out = []
    for N in N_values:
        V = vectors[:, :N]
        if orthonormalize:
            V = l2_orthonormal_span(V, inner)
        out.append(lieb_thirring_ratio(SubOrthoFamily(V, "L2" if orthonormalize else "H"), inner))
    return np.array(out)


def write_qn_csv(N, qN, bound, path) -> None:
    rows = ["N,qN,analytic_bound"] + [f"{int(n)},{float(q)!r},{float(b)!r}"
                                      for n, q, b in zip(N, qN, bound)]
    Path(path).write_text("\n".join(rows) + "\n")


def write_lt_csv(N, ratios, path) -> None:
    rows = ["N,ratio"] + [f"{int(n)},{float(r)!r}" for n, r in zip(N, ratios)]
    Path(path).write_text("\n".join(rows) + "\n")
