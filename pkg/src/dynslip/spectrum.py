"""Eigenpairs of the slip Stokes operator on the divergence-free subspace."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as la

from .assembly import DiscreteSystem, build_system


@dataclass
class StokesBasis:
    """(omega_k, phi)_V = mu_k (omega_k, phi)_H, omega_k orthonormal in H."""

    mu: np.ndarray
    omega: np.ndarray          # (n_constrained, count) coefficient columns
    sys: DiscreteSystem

    @property
    def count(self) -> int:
        return len(self.mu)

    def coefficients(self, u) -> np.ndarray:
        """H inner products (u, omega_k)_H."""
        return self.omega.T @ (self.sys.inner.M_H @ u)


def _fix_signs(vecs):
    idx = np.argmax(np.abs(vecs), axis=0)
    s = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    s[s == 0] = 1.0
    return vecs * s


def solve_eigenbasis(sys: DiscreteSystem, n_ev: int) -> StokesBasis:
    """Leading ``n_ev`` eigenpairs of the V form against the H form."""
    Kz = sys.KV_reduced
    dim = Kz.shape[0]
    if not 1 <= n_ev <= dim:
        raise ValueError(f"n_ev must be in [1, {dim}]")
    mu, Y = la.eigh(Kz, subset_by_index=[0, n_ev - 1], driver="evr")
    order = np.argsort(mu, kind="stable")
    mu, Y = mu[order], _fix_signs(Y[:, order])
    if not mu[0] > 0:
        raise ArithmeticError(f"non-positive first eigenvalue {mu[0]:.3e}")
    return StokesBasis(mu, sys.reduced.W @ Y, sys)


def spectral_residuals(basis: StokesBasis) -> np.ndarray:
    """Saddle residual min_p |K w - mu M w - B^T p| / (mu |w|) per pair."""
    sys = basis.sys
    Z = sys.reduced.Z
    R = sys.inner.K_V @ basis.omega - (sys.inner.M_H @ basis.omega) * basis.mu
    return np.linalg.norm(Z.T @ R, axis=0) / (basis.mu * np.linalg.norm(basis.omega, axis=0))


def project_PN(basis: StokesBasis, u, N: int) -> np.ndarray:
    """P^N u = sum_{k <= N} (u, omega_k)_H omega_k."""
    if not 0 <= N <= basis.count:
        raise ValueError("N exceeds basis size")
    c = basis.coefficients(u)[:N]
    return basis.omega[:, :N] @ c


def linear_fit(mu, kmin: int, kmax: int):
    """Least-squares slope of mu_k ~ a k through the origin and its R^2."""
    k = np.arange(kmin, kmax + 1, dtype=float)
    y = np.asarray(mu)[kmin - 1:kmax]
    a = float(k @ y / (k @ k))
    ss_res = float(np.sum((y - a * k) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return a, 1.0 - ss_res / ss_tot


@dataclass
class FloorReport:
    ratios: np.ndarray
    M_beta: float
    passed: bool


def steklov_floor(basis: StokesBasis, beta: float, proxy: StokesBasis | None = None,
                  tol: float = 1e-8) -> FloorReport:
    """Check mu_j(beta) * M_beta / sigma_j >= 1, sigma_j from the beta = 1 problem."""
    sys = basis.sys
    if proxy is None:
        twin = build_system(sys.mesh, sys.nu, sys.alpha, 1.0, space=sys.space)
        proxy = solve_eigenbasis(twin, basis.count)
    if proxy.sys.space.n_nodes != sys.space.n_nodes or not np.array_equal(
            proxy.sys.space.nodes, sys.space.nodes):
        raise ValueError("proxy basis computed on a different mesh")
    n = min(basis.count, proxy.count)
    M_beta = max(1.0, beta)
    ratios = basis.mu[:n] * M_beta / proxy.mu[:n]
    return FloorReport(ratios, M_beta, bool(np.all(ratios >= 1 - tol)))


def write_eigen_csv(basis: StokesBasis, path) -> None:
    lines = ["k,mu"] + [f"{k + 1},{float(m)!r}" for k, m in enumerate(basis.mu)]
    Path(path).write_text("\n".join(lines) + "\n")


def write_basis_bin(basis: StokesBasis, path) -> None:
    """Header: two little-endian uint64 (count, n_dofs); payload float64 row-major."""
    data = np.ascontiguousarray(basis.omega.T, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<QQ", *data.shape))
        fh.write(data.tobytes())


def read_basis_bin(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    count, n = struct.unpack("<QQ", raw[:16])
    return np.frombuffer(raw[16:], dtype="<f8").reshape(count, n)
