"""Discrete inner products, divergence constraint, forcing and nonlinear forms."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .fem import FESpace, build_fe_space
from .laws import (BoundaryLaw, ConstitutiveLaw, check_boundary_law,  # noqa: F401
                   check_constitutive, linear_slip, linear_stress)
from .mesh import Mesh

log = logging.getLogger(__name__)

# coefficients (b-part, curl-part) of the convective trilinear forms
CONVECTION_FORMS = {"skew": (0.5, 0.0), "emac": (1.0, 1.0)}


def _vec_block(m):
    """Scalar local matrix (E, 6, 6) -> vector block-diagonal (E, 12, 12)."""
    E = m.shape[0]
    out = np.zeros((E, 6, 2, 6, 2))
    out[:, :, 0, :, 0] = m
    out[:, :, 1, :, 1] = m
    return out.reshape(E, 12, 12)


def _sym_grad_block(w, grad):
    """Local matrix of int w Du:Dphi."""
    S = np.einsum("eq,eqad,eqbd->eab", w, grad, grad)
    X = np.einsum("eq,eqap,eqbc->eapbc", w, grad, grad)
    out = 0.5 * X.transpose(0, 1, 4, 3, 2)
    out[:, :, 0, :, 0] += 0.5 * S
    out[:, :, 1, :, 1] += 0.5 * S
    return out.reshape(-1, 12, 12)


@dataclass
class FullMatrices:
    """Cartesian (unconstrained) matrices of the basic forms."""

    mass: sp.csr_matrix
    bmass: sp.csr_matrix
    symgrad: sp.csr_matrix
    grad: sp.csr_matrix
    div: sp.csr_matrix


def assemble_full(space: FESpace) -> FullMatrices:
    val, grad, pval = space.tables
    _, w = space.quad
    mass = space.assemble_matrix(_vec_block(np.einsum("eq,eqa,eqb->eab", w, val, val)))
    G = np.einsum("eq,eqad,eqbd->eab", w, grad, grad)
    gradm = space.assemble_matrix(_vec_block(G))
    symg = space.assemble_matrix(_sym_grad_block(w, grad))
    _, bw, _, bval = space.bquad
    bm = space.assemble_matrix(_vec_block(np.einsum("eq,eqa,eqb->eab", bw, bval, bval)),
                               elems=space.bnd_elem)
    # pressure rows: int psi_k div phi
    loc = np.einsum("eq,eqk,eqbp->ekbp", w, pval, grad).reshape(len(w), 3, 12)
    rows = np.repeat(space.mesh.triangles, 12, axis=1).ravel()
    cols = np.tile(space.local_dofs, (1, 3)).ravel()
    div = sp.coo_matrix((loc.ravel(), (rows, cols)),
                        shape=(space.n_pressure, space.n_full)).tocsr()
    return FullMatrices(mass, bm, symg, gradm, div)


@dataclass
class InnerProducts:
    """H and V inner products on the constrained velocity space."""

    M_H: sp.csr_matrix
    K_V: sp.csr_matrix
    beta: float
    alpha: float
    M_int: sp.csr_matrix
    M_bdry: sp.csr_matrix
    K_D: sp.csr_matrix
    space: FESpace
    full: FullMatrices

    def h_inner(self, u, v):
        return float(u @ (self.M_H @ v))

    def h_norm(self, u):
        return float(np.sqrt(max(self.h_inner(u, u), 0.0)))

    def v_inner(self, u, v):
        return float(u @ (self.K_V @ v))

    def v_norm(self, u):
        return float(np.sqrt(max(self.v_inner(u, u), 0.0)))


def _restrict(P, A):
    out = (P.T @ A @ P).tocsr()
    out.sum_duplicates()
    return out


def build_spaces(mesh: Mesh, alpha: float, beta: float, space: FESpace | None = None,
                 full: FullMatrices | None = None) -> InnerProducts:
    """Constrained quadratic velocity space with H and V Gram matrices."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if not beta > 0:
        raise ValueError("beta must be positive")
    space = build_fe_space(mesh) if space is None else space
    full = assemble_full(space) if full is None else full
    P = space.prolongation
    Mi = _restrict(P, full.mass)
    Mb = _restrict(P, full.bmass)
    Kd = _restrict(P, full.symgrad)
    M_H = (Mi + beta * Mb).tocsr()
    K_V = (Kd + alpha * Mb).tocsr()
    return InnerProducts(M_H, K_V, float(beta), float(alpha), Mi, Mb, Kd, space, full)


def _as_field(space: FESpace, fn, pts):
    """Evaluate a forcing given as callable, constant pair, or nodal samples."""
    if fn is None:
        return np.zeros(pts.shape)
    if callable(fn):
        fx, fy = fn(pts[..., 0], pts[..., 1])
        out = np.empty(pts.shape)
        out[..., 0] = fx
        out[..., 1] = fy
        return out
    arr = np.asarray(fn, dtype=float)
    if arr.shape == (2,):
        return np.broadcast_to(arr, pts.shape).copy()
    raise TypeError("nodal samples must be interpolated through `nodal_field`")


def nodal_field(space: FESpace, samples):
    """Wrap nodal samples (n_nodes, 2) as a marker understood by the load assembly."""
    return ("nodal", np.asarray(samples, dtype=float).reshape(space.n_nodes, 2))


def load_full(space: FESpace, f, h, beta: float) -> np.ndarray:
    """Cartesian vector of int f.phi + beta * boundary h.phi."""
    pts, w = space.quad
    val, _, _ = space.tables
    bpts, bw, _, bval = space.bquad
    if isinstance(f, tuple) and len(f) == 2 and isinstance(f[0], str):
        fq = np.einsum("eqa,eac->eqc", val, f[1][space.elem_nodes])
    else:
        fq = _as_field(space, f, pts)
    if isinstance(h, tuple) and len(h) == 2 and isinstance(h[0], str):
        hq = np.einsum("eqa,eac->eqc", bval, h[1][space.elem_nodes[space.bnd_elem]])
    else:
        hq = _as_field(space, h, bpts)
    out = space.scatter(np.einsum("eq,eqa,eqc->eac", w, val, fq))
    out += beta * space.scatter(np.einsum("eq,eqa,eqc->eac", bw, bval, hq),
                                elems=space.bnd_elem)
    return out


@dataclass
class Reduced:
    """M_H-orthonormal basis W of the discretely divergence-free subspace."""

    W: np.ndarray
    Z: np.ndarray

    @property
    def dim(self) -> int:
        return self.W.shape[1]


@dataclass
class DiscreteSystem:
    inner: InnerProducts
    Bdiv: sp.csr_matrix
    load: np.ndarray
    nu: float
    stress: ConstitutiveLaw
    boundary: BoundaryLaw
    f: object = None
    h: object = None
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def space(self) -> FESpace:
        return self.inner.space

    @property
    def mesh(self) -> Mesh:
        return self.inner.space.mesh

    @property
    def alpha(self) -> float:
        return self.inner.alpha

    @property
    def beta(self) -> float:
        return self.inner.beta

    @property
    def P(self):
        return self.space.prolongation

    @property
    def n(self) -> int:
        return self.inner.M_H.shape[0]

    @cached_property
    def A(self) -> sp.csr_matrix:
        """Implicit linear operator: nu_ref * int Du:Dphi + alpha_law * boundary mass."""
        return (self.stress.nu_ref * self.inner.K_D
                + self.boundary.alpha * self.inner.M_bdry).tocsr()

    @property
    def is_linear(self) -> bool:
        return self.stress.linear and self.boundary.linear

    @cached_property
    def reduced(self) -> Reduced:
        B = self.Bdiv.toarray()
        n, m = self.n, B.shape[0]
        Q, R = la.qr(B.T, mode="full")
        d = np.abs(np.diag(R))
        rank = int(np.sum(d > 1e-10 * d.max()))
        if rank < m:
            log.warning("divergence matrix rank %d < %d", rank, m)
        Z = np.ascontiguousarray(Q[:, rank:])
        del Q
        Mz = Z.T @ (self.inner.M_H @ Z)
        L = la.cholesky(0.5 * (Mz + Mz.T), lower=True)
        W = la.solve_triangular(L, Z.T, lower=True).T
        return Reduced(np.ascontiguousarray(W), Z)

    @cached_property
    def A_reduced(self) -> np.ndarray:
        W = self.reduced.W
        Az = W.T @ (self.A @ W)
        return 0.5 * (Az + Az.T)

    @cached_property
    def KV_reduced(self) -> np.ndarray:
        W = self.reduced.W
        Kz = W.T @ (self.inner.K_V @ W)
        return 0.5 * (Kz + Kz.T)

    def to_full(self, u) -> np.ndarray:
        return self.P @ u

    def project(self, u) -> np.ndarray:
        """M_H-orthogonal projection of constrained coordinates onto the div-free subspace."""
        W = self.reduced.W
        return W @ (W.T @ (self.inner.M_H @ u))

    def reduce(self, u) -> np.ndarray:
        """Coordinates of (the projection of) u in the W basis."""
        return self.reduced.W.T @ (self.inner.M_H @ u)

    def interpolate(self, func) -> np.ndarray:
        """Constrained coordinates of the nodal interpolant of (x, y) -> (ux, uy)."""
        return self.space.constrain(self.space.interpolate(func))


def build_system(mesh: Mesh, nu: float, alpha: float, beta: float, f=None, h=None,
                 stress: ConstitutiveLaw | None = None,
                 boundary: BoundaryLaw | None = None,
                 space: FESpace | None = None) -> DiscreteSystem:
    if not nu > 0:
        raise ValueError("nu must be positive")
    inner = build_spaces(mesh, alpha, beta, space=space)
    Bdiv = (inner.full.div @ inner.space.prolongation).tocsr()
    stress = linear_stress(nu) if stress is None else stress
    boundary = linear_slip(alpha) if boundary is None else boundary
    sys_ = DiscreteSystem(inner, Bdiv, np.zeros(inner.M_H.shape[0]), float(nu), stress,
                          boundary, f, h)
    sys_.load = assemble_forcing(sys_, f, h)
    return sys_


def assemble_forcing(sys_: DiscreteSystem, f, h) -> np.ndarray:
    """Constrained load vector of int f.phi + beta * boundary h.phi."""
    space = sys_.space
    return space.prolongation.T @ load_full(space, f, h, sys_.beta)


def forcing_h_norm(space: FESpace, f, h, beta: float) -> float:
    """(int |f|^2 + beta * boundary |h|^2)^(1/2) by quadrature."""
    pts, w = space.quad
    bpts, bw, _, bval = space.bquad
    val, _, _ = space.tables
    if isinstance(f, tuple) and isinstance(f[0], str):
        fq = np.einsum("eqa,eac->eqc", val, f[1][space.elem_nodes])
    else:
        fq = _as_field(space, f, pts)
    if isinstance(h, tuple) and isinstance(h[0], str):
        hq = np.einsum("eqa,eac->eqc", bval, h[1][space.elem_nodes[space.bnd_elem]])
    else:
        hq = _as_field(space, h, bpts)
    return float(np.sqrt(np.sum(w[..., None] * fq ** 2) + beta * np.sum(bw[..., None] * hq ** 2)))


# ---- convection ------------------------------------------------------------

def trilinear_full(space: FESpace, uf, vf, form: str = "skew") -> np.ndarray:
    """Cartesian vector of c(u, v, phi_i) for the chosen convective form.

    ``raw`` is b(u, v, .), ``skew`` is (b(u, v, .) - b(u, ., v)) / 2 and ``emac``
    adds the rotational correction b(u, v, .) - b(u, ., v) - curl(u) Jv.
    """
    _, w = space.quad
    val, grad, _ = space.tables
    valT = space.tables_T
    U, GU = space.field_at_quad(uf)
    V, GV = space.field_at_quad(vf) if vf is not uf else (U, GU)
    # pointwise integrand against N_a: (u.grad)v, minus curl terms for emac
    adv = np.matmul(GV, U[..., None])[..., 0]
    if form == "raw":
        return space.scatter(np.matmul(valT, w[..., None] * adv))
    cb, cr = CONVECTION_FORMS[form]
    pt = cb * adv
    if cr:
        curl = GU[..., 1, 0] - GU[..., 0, 1]
        pt = pt - cr * curl[..., None] * np.stack([-V[..., 1], V[..., 0]], axis=-1)
    loc = np.matmul(valT, w[..., None] * pt)
    # - cb * int (u.grad N_a) v_c
    uN = np.matmul(grad, U[..., None])[..., 0]          # (E, Q, 6)
    loc -= cb * np.matmul(uN.transpose(0, 2, 1), w[..., None] * V)
    return space.scatter(loc)


def convection_apply(sys_: DiscreteSystem, u, v, form: str = "skew") -> np.ndarray:
    """Constrained vector of the convective form c(u, v, .)."""
    P = sys_.P
    return P.T @ trilinear_full(sys_.space, P @ u, P @ v, form)


def convection_jacobian_full(space: FESpace, uf, form: str = "emac",
                             first_slot: bool = True, second_slot: bool = True):
    """Sparse matrix of U -> c(U, u, .) + c(u, U, .) in Cartesian DOFs."""
    _, w = space.quad
    val, grad, _ = space.tables
    U, GU = space.field_at_quad(uf)
    cb, cr = CONVECTION_FORMS[form]
    E = len(w)
    loc = np.zeros((E, 6, 2, 6, 2))
    if first_slot:
        t1 = np.einsum("eq,eqb,eqcp,eqa->eacbp", w, val, GU, val)
        t1 -= np.einsum("eq,eqb,eqap,eqc->eacbp", w, val, grad, U)
        loc += cb * t1
        if cr:
            curlN = np.stack([-grad[..., 1], grad[..., 0]], axis=-1)  # (E,Q,b,p)
            JU = np.stack([-U[..., 1], U[..., 0]], axis=-1)
            loc -= cr * np.einsum("eq,eqbp,eqc,eqa->eacbp", w, curlN, JU, val)
    if second_slot:
        adv = np.einsum("eqd,eqbd->eqb", U, grad)
        m = np.einsum("eq,eqb,eqa->eab", w, adv, val) - np.einsum("eq,eqa,eqb->eab", w, adv, val)
        loc[:, :, 0, :, 0] += cb * m
        loc[:, :, 1, :, 1] += cb * m
        if cr:
            curl = GU[..., 1, 0] - GU[..., 0, 1]
            mm = np.einsum("eq,eq,eqb,eqa->eab", w, curl, val, val)
            Jm = np.array([[0.0, -1.0], [1.0, 0.0]])
            loc -= cr * mm[:, :, None, :, None] * Jm[None, None, :, None, :]
    return space.assemble_matrix(loc.reshape(E, 12, 12))


# ---- nonlinear stress and slip ---------------------------------------------

def _symgrad_at_quad(space: FESpace, uf):
    _, G = space.field_at_quad(uf)
    return 0.5 * (G + np.swapaxes(G, -1, -2))


def stress_deviation_full(space: FESpace, law: ConstitutiveLaw, uf) -> np.ndarray:
    """Cartesian vector of int (S(Du) - nu_ref Du) : D phi."""
    _, w = space.quad
    _, grad, _ = space.tables
    D = _symgrad_at_quad(space, uf)
    T = law.stress(D) - law.nu_ref * D
    return space.scatter(np.einsum("eq,eqcj,eqaj->eac", w, T, grad))


def stress_tangent_deviation_full(space: FESpace, law: ConstitutiveLaw, uf):
    """Sparse matrix of U -> int (dS(Du)[DU] - nu_ref DU) : D phi."""
    _, w = space.quad
    _, grad, _ = space.tables
    D = _symgrad_at_quad(space, uf)
    sig = np.einsum("eqij,eqij->eq", D, D)
    a = 2.0 * law.dU(sig) - law.nu_ref
    b = 4.0 * law.d2U(sig)
    loc = _sym_grad_block(w * a, grad).reshape(-1, 6, 2, 6, 2)
    DG = np.einsum("eqpj,eqbj->eqbp", D, grad)  # (D grad N_b)_p
    loc += np.einsum("eq,eqac,eqbp->eacbp", w * b, DG, DG)
    return space.assemble_matrix(loc.reshape(-1, 12, 12))


def slip_deviation_full(space: FESpace, law: BoundaryLaw, uf) -> np.ndarray:
    """Cartesian vector of boundary int (s(u) - alpha u) . phi."""
    _, bw, _, bval = space.bquad
    ub = space.field_at_bquad(uf)
    dev = law.s(ub) - law.alpha * ub
    return space.scatter(np.einsum("eq,eqa,eqc->eac", bw, bval, dev), elems=space.bnd_elem)


def slip_tangent_deviation_full(space: FESpace, law: BoundaryLaw, uf):
    _, bw, _, bval = space.bquad
    ub = space.field_at_bquad(uf)
    J = law.ds(ub) - law.alpha * np.eye(2)
    loc = np.einsum("eq,eqa,eqb,eqcp->eacbp", bw, bval, bval, J)
    return space.assemble_matrix(loc.reshape(-1, 12, 12), elems=space.bnd_elem)


def stress_power(space: FESpace, law: ConstitutiveLaw, uf) -> float:
    """int S(Du) : Du."""
    _, w = space.quad
    D = _symgrad_at_quad(space, uf)
    return float(np.sum(w * np.einsum("eqij,eqij->eq", law.stress(D), D)))


def slip_power(space: FESpace, law: BoundaryLaw, uf) -> float:
    """boundary int s(u) . u."""
    _, bw, _, _ = space.bquad
    ub = space.field_at_bquad(uf)
    return float(np.sum(bw * np.sum(law.s(ub) * ub, axis=-1)))


def l4_norm4(space: FESpace, uf) -> float:
    _, w = space.quad
    U, _ = space.field_at_quad(uf)
    return float(np.sum(w * np.sum(U * U, axis=-1) ** 2))


# ---- inequality constants --------------------------------------------------

def korn_constant(inner: InnerProducts, ell: float | None = None) -> float:
    """Largest eigenvalue of (|grad u|^2 + ell^-2 |u|^2, |Du|^2 + ell^-1 boundary |u|^2)."""
    ell = inner.space.mesh.char_length if ell is None else ell
    P = inner.space.prolongation
    G = _restrict(P, inner.full.grad) + inner.M_int / ell ** 2
    K = inner.K_D + inner.M_bdry / ell
    Gd, Kd = G.toarray(), K.toarray()
    top = la.eigh(0.5 * (Gd + Gd.T), 0.5 * (Kd + Kd.T), eigvals_only=True,
                  subset_by_index=[Gd.shape[0] - 1, Gd.shape[0] - 1])
    return float(top[0])


def korn_ratio(inner: InnerProducts, u, ell: float | None = None) -> float:
    ell = inner.space.mesh.char_length if ell is None else ell
    uf = inner.space.prolongation @ u
    num = uf @ (inner.full.grad @ uf) + (u @ (inner.M_int @ u)) / ell ** 2
    den = u @ (inner.K_D @ u) + (u @ (inner.M_bdry @ u)) / ell
    return float(num / den)


def ladyzhenskaya_ratio(inner: InnerProducts, u) -> float:
    """||u||_4^4 / (||u||_2^2 ||u||_{1,2}^2)."""
    uf = inner.space.prolongation @ u
    l2 = u @ (inner.M_int @ u)
    h1 = uf @ (inner.full.grad @ uf) + l2
    return float(l4_norm4(inner.space, uf) / (l2 * h1))


def export_matrix(A, path) -> None:
    """Coordinate triplets `row col value`, one per line."""
    C = sp.coo_matrix(A)
    order = np.lexsort((C.col, C.row))
    with open(path, "w") as fh:
        for r, c, v in zip(C.row[order], C.col[order], C.data[order]):
            fh.write(f"{r} {c} {float(v)!r}\n")
