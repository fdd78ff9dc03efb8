"""Quadratic velocity / linear pressure elements on a disk with exact curved edges.

Basis functions are polynomials in physical coordinates, fixed per element by
nodal interpolation. Elements touching the boundary integrate over the true
circular segment, so polynomial fields like rigid rotations are represented
and integrated without geometric error.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh

N_RHO = 6
N_T = 8
N_BDRY = 8

_LOCAL_EDGES = ((1, 2), (2, 0), (0, 1))  # local node 3 + k sits on edge k


def _gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _monomials(xi, eta, order):
    if order == 1:
        return np.stack([np.ones_like(xi), xi, eta], axis=-1)
    return np.stack([np.ones_like(xi), xi, eta, xi * xi, xi * eta, eta * eta], axis=-1)


def _monomial_grads(xi, eta, order):
    one, zero = np.ones_like(xi), np.zeros_like(xi)
    if order == 1:
        gx = np.stack([zero, one, zero], axis=-1)
        gy = np.stack([zero, zero, one], axis=-1)
    else:
        gx = np.stack([zero, one, zero, 2 * xi, eta, zero], axis=-1)
        gy = np.stack([zero, zero, one, zero, xi, 2 * eta], axis=-1)
    return gx, gy


@dataclass
class FESpace:
    """Node numbering, constrained DOFs, quadrature and basis tables."""

    mesh: Mesh
    nodes: np.ndarray          # (n_nodes, 2) coordinates, vertices first
    elem_nodes: np.ndarray     # (T, 6)
    bnd_nodes: np.ndarray      # node indices carrying the u.n = 0 constraint
    bnd_elem: np.ndarray       # element owning each boundary arc
    bnd_local_edge: np.ndarray
    bnd_theta: np.ndarray      # (nb, 2) arc start/end angle (CCW)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_full(self) -> int:
        return 2 * self.n_nodes

    @property
    def n_pressure(self) -> int:
        return self.mesh.n_vertices

    # ---- element geometry ----------------------------------------------
    @cached_property
    def _scale(self):
        p = self.nodes[self.elem_nodes[:, :3]]
        xc = p.mean(axis=1)
        h = np.max(np.linalg.norm(p - xc[:, None, :], axis=2), axis=1)
        return xc, h

    @cached_property
    def _coef2(self):
        xc, h = self._scale
        p = self.nodes[self.elem_nodes]
        xi = (p[..., 0] - xc[:, None, 0]) / h[:, None]
        eta = (p[..., 1] - xc[:, None, 1]) / h[:, None]
        V = _monomials(xi, eta, 2)  # (T, 6 nodes, 6 monomials)
        return np.linalg.inv(V)      # C[m, i]

    @cached_property
    def _coef1(self):
        xc, h = self._scale
        p = self.nodes[self.elem_nodes[:, :3]]
        xi = (p[..., 0] - xc[:, None, 0]) / h[:, None]
        eta = (p[..., 1] - xc[:, None, 1]) / h[:, None]
        return np.linalg.inv(_monomials(xi, eta, 1))

    def eval_basis(self, pts, order=2, elems=None):
        """Values (E, Q, n) and gradients (E, Q, n, 2) at points (E, Q, 2)."""
        xc, h = self._scale
        if elems is not None:
            xc, h = xc[elems], h[elems]
        C = self._coef2 if order == 2 else self._coef1
        if elems is not None:
            C = C[elems]
        xi = (pts[..., 0] - xc[:, None, 0]) / h[:, None]
        eta = (pts[..., 1] - xc[:, None, 1]) / h[:, None]
        mono = _monomials(xi, eta, order)
        gx, gy = _monomial_grads(xi, eta, order)
        val = np.einsum("eqm,emi->eqi", mono, C)
        grad = np.stack([np.einsum("eqm,emi->eqi", gx, C),
                         np.einsum("eqm,emi->eqi", gy, C)], axis=-1) / h[:, None, None, None]
        return val, grad

    # ---- quadrature ------------------------------------------------------
    @cached_property
    def quad(self):
        """Points (T, Q, 2) and weights (T, Q) of the collapsed element rule."""
        mesh = self.mesh
        T = mesh.n_triangles
        R = mesh.radius
        verts = mesh.vertices[mesh.triangles]
        rho, wr = _gauss01(N_RHO)
        t, wt = _gauss01(N_T)
        apex_local = np.zeros(T, dtype=np.int64)
        curved = np.zeros(T, dtype=bool)
        apex_local[self.bnd_elem] = self.bnd_local_edge
        curved[self.bnd_elem] = True
        idx = np.arange(T)
        P3 = verts[idx, apex_local]
        Pa = verts[idx, (apex_local + 1) % 3]
        Pb = verts[idx, (apex_local + 2) % 3]
        gam = Pa[:, None, :] + t[None, :, None] * (Pb - Pa)[:, None, :]
        dgam = np.broadcast_to((Pb - Pa)[:, None, :], gam.shape).copy()
        if curved.any():
            th = np.zeros((T, 2))
            th[self.bnd_elem] = self.bnd_theta
            ce = np.flatnonzero(curved)
            ang = th[ce, 0][:, None] + t[None, :] * (th[ce, 1] - th[ce, 0])[:, None]
            gam[ce] = R * np.stack([np.cos(ang), np.sin(ang)], axis=-1)
            dgam[ce] = R * (th[ce, 1] - th[ce, 0])[:, None, None] * np.stack(
                [-np.sin(ang), np.cos(ang)], axis=-1)
        rel = gam - P3[:, None, :]
        cross = np.abs(rel[..., 0] * dgam[..., 1] - rel[..., 1] * dgam[..., 0])  # (T, nt)
        pts = P3[:, None, None, :] + rho[None, :, None, None] * rel[:, None, :, :]  # (T,nr,nt,2)
        w = (wr * rho)[None, :, None] * wt[None, None, :] * cross[:, None, :]
        return pts.reshape(T, -1, 2), w.reshape(T, -1)

    @cached_property
    def tables(self):
        pts, w = self.quad
        val, grad = self.eval_basis(pts, 2)
        pval, _ = self.eval_basis(pts, 1)
        return val, grad, pval

    @cached_property
    def bquad(self):
        """Boundary rule: points (nb, Q, 2), weights (nb, Q), normals, basis values."""
        R = self.mesh.radius
        t, wt = _gauss01(N_BDRY)
        th0, th1 = self.bnd_theta[:, 0], self.bnd_theta[:, 1]
        ang = th0[:, None] + t[None, :] * (th1 - th0)[:, None]
        nrm = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        pts = R * nrm
        w = R * np.abs(th1 - th0)[:, None] * wt[None, :]
        val, _ = self.eval_basis(pts, 2, elems=self.bnd_elem)
        return pts, w, nrm, val

    # ---- constraint ------------------------------------------------------
    @cached_property
    def prolongation(self) -> sp.csr_matrix:
        """Sparse map from constrained coordinates to Cartesian nodal DOFs."""
        is_b = np.zeros(self.n_nodes, dtype=bool)
        is_b[self.bnd_nodes] = True
        ncol = np.where(is_b, 1, 2)
        start = np.concatenate([[0], np.cumsum(ncol)[:-1]])
        rows, cols, vals = [], [], []
        inner = np.flatnonzero(~is_b)
        for c in range(2):
            rows.append(2 * inner + c)
            cols.append(start[inner] + c)
            vals.append(np.ones(len(inner)))
        b = self.bnd_nodes
        x = self.nodes[b]
        r = np.hypot(x[:, 0], x[:, 1])
        if np.any(r == 0):
            raise ValueError("degenerate boundary normal")
        n = x / r[:, None]
        tau = np.column_stack([-n[:, 1], n[:, 0]])
        for c in range(2):
            rows.append(2 * b + c)
            cols.append(start[b])
            vals.append(tau[:, c])
        P = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(self.n_full, int(ncol.sum())))
        return P.tocsr()

    @property
    def n_constrained(self) -> int:
        return self.prolongation.shape[1]

    # ---- helpers ---------------------------------------------------------
    @cached_property
    def local_dofs(self) -> np.ndarray:
        """(T, 12) global Cartesian DOF of local index 2*a + c."""
        en = self.elem_nodes
        return np.stack([2 * en, 2 * en + 1], axis=-1).reshape(len(en), 12)

    @cached_property
    def tables_T(self):
        """Basis values transposed to (T, 6, Q) for batched products."""
        return np.ascontiguousarray(self.tables[0].transpose(0, 2, 1))

    @cached_property
    def _grad_flat(self):
        g = self.tables[1]  # (T, Q, 6, 2)
        return np.ascontiguousarray(g.transpose(0, 1, 3, 2).reshape(g.shape[0], -1, 6))

    def field_at_quad(self, uf):
        """Velocity (T, Q, 2) and gradient (T, Q, 2, 2) [c, d] = d_d u_c."""
        val = self.tables[0]
        ue = uf.reshape(-1, 2)[self.elem_nodes]
        U = np.matmul(val, ue)
        G = np.matmul(self._grad_flat, ue)  # (T, Q*2[d], 2[c])
        T, Q = val.shape[:2]
        return U, G.reshape(T, Q, 2, 2).transpose(0, 1, 3, 2)

    def field_at_bquad(self, uf):
        _, _, _, val = self.bquad
        ue = uf.reshape(-1, 2)[self.elem_nodes[self.bnd_elem]]
        return np.einsum("eqa,eac->eqc", val, ue)

    def scatter(self, loc: np.ndarray, elems=None) -> np.ndarray:
        """Sum local (E, 6, 2) contributions into a Cartesian vector."""
        idx = self.local_dofs if elems is None else self.local_dofs[elems]
        return np.bincount(idx.ravel(), weights=loc.reshape(len(idx), 12).ravel(),
                           minlength=self.n_full)

    def assemble_matrix(self, loc: np.ndarray, elems=None) -> sp.csr_matrix:
        """Sum local (E, 12, 12) blocks into a sparse Cartesian matrix."""
        idx = self.local_dofs if elems is None else self.local_dofs[elems]
        r = np.repeat(idx, 12, axis=1).ravel()
        c = np.tile(idx, (1, 12)).ravel()
        return sp.coo_matrix((loc.ravel(), (r, c)), shape=(self.n_full, self.n_full)).tocsr()

    def interpolate(self, func) -> np.ndarray:
        """Cartesian nodal interpolant of a callable (x, y) -> (ux, uy)."""
        ux, uy = func(self.nodes[:, 0], self.nodes[:, 1])
        out = np.empty((self.n_nodes, 2))
        out[:, 0] = ux
        out[:, 1] = uy
        return out.ravel()

    def constrain(self, uf) -> np.ndarray:
        """Constrained coordinates of a Cartesian vector (tangential part at the boundary)."""
        P = self.prolongation
        return P.T @ uf  # columns of P are orthonormal


def build_fe_space(mesh: Mesh) -> FESpace:
    tris = mesh.triangles
    T = len(tris)
    nv = mesh.n_vertices
    keys = np.sort(np.concatenate([tris[:, list(e)] for e in _LOCAL_EDGES]), axis=1)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.ravel()
    edge_of = inv.reshape(3, T).T  # (T, 3)
    ne = len(uniq)
    mids = 0.5 * (mesh.vertices[uniq[:, 0]] + mesh.vertices[uniq[:, 1]])

    bkeys = np.sort(mesh.boundary_edges, axis=1)
    lookup = {tuple(k): i for i, k in enumerate(map(tuple, uniq))}
    bedge_ids = np.array([lookup[tuple(k)] for k in bkeys], dtype=np.int64)
    R = mesh.radius
    a = mesh.vertices[mesh.boundary_edges[:, 0]]
    b = mesh.vertices[mesh.boundary_edges[:, 1]]
    s = a + b
    mids[bedge_ids] = R * s / np.linalg.norm(s, axis=1)[:, None]

    nodes = np.vstack([mesh.vertices, mids])
    elem_nodes = np.hstack([tris, nv + edge_of])

    # owner element and local edge for each boundary arc
    where = {}
    for e in range(T):
        for k in range(3):
            where.setdefault(int(edge_of[e, k]), []).append((e, k))
    bel = np.array([where[int(i)][0][0] for i in bedge_ids], dtype=np.int64)
    bloc = np.array([where[int(i)][0][1] for i in bedge_ids], dtype=np.int64)
    if len(np.unique(bel)) != len(bel):
        raise ValueError("element with two curved edges is not supported")
    th0 = np.arctan2(a[:, 1], a[:, 0])
    dth = np.arctan2(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0], np.einsum("ij,ij->i", a, b))
    # orient each arc to follow the owner element's local edge direction
    ea = tris[bel, (bloc + 1) % 3]
    same = ea == mesh.boundary_edges[:, 0]
    theta = np.where(same[:, None], np.column_stack([th0, th0 + dth]),
                     np.column_stack([th0 + dth, th0]))
    bnd_nodes = np.concatenate([mesh.boundary_nodes, nv + bedge_ids])
    return FESpace(mesh, nodes, elem_nodes, np.sort(bnd_nodes), bel, bloc, theta)
