"""Constitutive stress laws, boundary slip laws, and sampling-based hypothesis checks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

SAMPLE_RADIUS = 1e3


def _ddot(a, b):
    return np.einsum("...ij,...ij->...", a, b)


@dataclass(frozen=True)
class ConstitutiveLaw:
    """Potential stress S(D) = 2 U'(|D|^2) D with declared constants.

    ``nu_ref`` is the linear part treated implicitly by the time steppers;
    for the linear law it equals nu and the nonlinear remainder vanishes.
    """

    dU: Callable
    d2U: Callable
    d3U: Callable
    c1: float
    c2: float
    C: float
    nu_ref: float
    name: str = "custom"
    linear: bool = False

    def stress(self, D):
        sig = _ddot(D, D)
        return 2.0 * np.asarray(self.dU(sig))[..., None, None] * D

    def tangent(self, D, E):
        """Directional derivative dS(D)[E]."""
        sig = _ddot(D, D)
        a = 2.0 * np.asarray(self.dU(sig))[..., None, None]
        b = 4.0 * (np.asarray(self.d2U(sig)) * _ddot(D, E))[..., None, None]
        return a * E + b * D


def linear_stress(nu: float) -> ConstitutiveLaw:
    """S(D) = nu D."""
    half = 0.5 * nu
    return ConstitutiveLaw(lambda s: np.full(np.shape(s), half),
                           lambda s: np.zeros(np.shape(s)), lambda s: np.zeros(np.shape(s)),
                           c1=nu, c2=nu, C=nu, nu_ref=nu, name="linear", linear=True)


def exp_viscosity_stress(nu: float, c1: float | None = None, C: float | None = None):
    """U'(s) = nu (1 + e^{-s}) / 2: viscosity relaxing from nu*2 down to nu."""
    return ConstitutiveLaw(lambda s: 0.5 * nu * (1.0 + np.exp(-s)),
                           lambda s: -0.5 * nu * np.exp(-s),
                           lambda s: 0.5 * nu * np.exp(-s),
                           c1=0.55 * nu if c1 is None else c1, c2=2.0 * nu,
                           C=6.0 * nu if C is None else C, nu_ref=nu, name="exp_viscosity")


def quadratic_potential_stress(nu: float) -> ConstitutiveLaw:
    """U'(s) = nu s, whose stress grows cubically in |D|."""
    return ConstitutiveLaw(lambda s: nu * np.asarray(s, dtype=float),
                           lambda s: np.full(np.shape(s), float(nu)),
                           lambda s: np.zeros(np.shape(s)),
                           c1=nu, c2=nu, C=nu, nu_ref=nu, name="quadratic_potential")


@dataclass(frozen=True)
class BoundaryLaw:
    """Tangential slip law s(u) with derivative s'(u) and declared constants."""

    s: Callable
    ds: Callable
    alpha: float
    c3: float
    c4: float
    c5: float
    s_exp: float = 2.0
    d2_bound: float | None = None
    name: str = "custom"
    linear: bool = False


def linear_slip(alpha: float) -> BoundaryLaw:
    return BoundaryLaw(lambda u: alpha * u,
                       lambda u: alpha * np.broadcast_to(np.eye(2), u.shape[:-1] + (2, 2)),
                       alpha=alpha, c3=1.0, c4=1.0, c5=0.99, d2_bound=0.0,
                       name="linear", linear=True)


def tanh_slip(alpha: float) -> BoundaryLaw:
    """s(u) = alpha u (1 + tanh |u|^2)."""
    def s(u):
        sig = np.sum(u * u, axis=-1)
        return alpha * u * (1.0 + np.tanh(sig))[..., None]

    def ds(u):
        sig = np.sum(u * u, axis=-1)
        eye = np.broadcast_to(np.eye(2), u.shape[:-1] + (2, 2))
        sech2 = 1.0 / np.cosh(np.minimum(sig, 350.0)) ** 2
        return alpha * ((1.0 + np.tanh(sig))[..., None, None] * eye
                        + (2.0 * sech2)[..., None, None] * u[..., :, None] * u[..., None, :])

    return BoundaryLaw(s, ds, alpha=alpha, c3=1.0, c4=3.0, c5=0.99, name="tanh_slip")


def quadratic_slip(alpha: float) -> BoundaryLaw:
    """s(u) = alpha u |u|; s' vanishes at the origin."""
    def s(u):
        return alpha * u * np.linalg.norm(u, axis=-1)[..., None]

    def ds(u):
        r = np.linalg.norm(u, axis=-1)
        eye = np.broadcast_to(np.eye(2), u.shape[:-1] + (2, 2))
        with np.errstate(invalid="ignore", divide="ignore"):
            uu = np.where(r[..., None, None] > 0,
                          u[..., :, None] * u[..., None, :] / r[..., None, None], 0.0)
        return alpha * (r[..., None, None] * eye + uu)

    return BoundaryLaw(s, ds, alpha=alpha, c3=0.5, c4=2.0, c5=0.5, s_exp=3.0,
                       name="quadratic_slip")


@dataclass
class CheckReport:
    passed: bool
    margins: dict
    measured: dict
    violations: list = field(default_factory=list)

    def __str__(self):
        verdict = "PASS" if self.passed else "FAIL"
        parts = ", ".join(f"{k}={v:.4g}" for k, v in self.margins.items())
        return f"{verdict} ({parts})"


def _random_sym(rng, n, rmax=SAMPLE_RADIUS):
    a = rng.standard_normal((n, 3))
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    # half log-uniform, half uniform magnitudes, to probe both small and large |D|
    mag = np.where(np.arange(n) % 2 == 0,
                   10.0 ** rng.uniform(-3, np.log10(rmax), n), rng.uniform(0, rmax, n))
    # Frobenius-normalized coordinates of a symmetric 2x2 matrix
    D = np.empty((n, 2, 2))
    D[:, 0, 0] = a[:, 0]
    D[:, 1, 1] = a[:, 1]
    D[:, 0, 1] = D[:, 1, 0] = a[:, 2] / np.sqrt(2.0)
    return D * mag[:, None, None]


def _sigma_scan():
    return np.unique(np.concatenate([np.linspace(0.0, 20.0, 4001),
                                     np.logspace(-6, np.log10(SAMPLE_RADIUS ** 2), 2001)]))


def potential_derivative_norms(law: ConstitutiveLaw, sig):
    """Operator norms of the second and third derivatives of D -> U(|D|^2) at |D|^2 = sig."""
    sig = np.asarray(sig, dtype=float)
    u1, u2, u3 = law.dU(sig), law.d2U(sig), law.d3U(sig)
    second = np.maximum(np.abs(2 * u1), np.abs(2 * u1 + 4 * sig * u2))
    x = np.sqrt(sig)[..., None] * np.linspace(0.0, 1.0, 201)
    third = np.max(np.abs(8 * u3[..., None] * x ** 3 + 12 * u2[..., None] * x), axis=-1)
    return second, third


def check_constitutive(law: ConstitutiveLaw, trials: int = 2000, seed: int = 0) -> CheckReport:
    """Sample the monotonicity, growth and derivative hypotheses of a stress law."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    D = _random_sym(rng, trials)
    E = _random_sym(rng, trials)
    dd = D - E
    nd = _ddot(dd, dd)
    ok = nd > 0
    coer = _ddot(law.stress(D) - law.stress(E), dd)[ok] / nd[ok]
    nD = np.sqrt(_ddot(D, D))
    growth = np.sqrt(_ddot(law.stress(D), law.stress(D)))[nD > 0] / nD[nD > 0]

    # derivative: random directions plus the exact extremes along and across D
    Eu = E / np.sqrt(_ddot(E, E))[:, None, None]
    deriv = _ddot(law.tangent(D, Eu), Eu)
    sig = _sigma_scan()
    along = 2 * law.dU(sig) + 4 * sig * law.d2U(sig)
    across = 2 * law.dU(sig) + 0 * sig
    dmin = min(deriv.min(), along.min(), across.min())
    # monotonicity along rays also bounded below by the scan of the derivative
    cmin = min(coer.min(), dmin)

    second, third = potential_derivative_norms(law, sig)
    bound = float(np.max(second + third))
    margins = {"c1_monotone": float(cmin - law.c1),
               "c1_derivative": float(dmin - law.c1),
               "c2_growth": float(law.c2 - growth.max()),
               "C_derivatives": float(law.C - bound)}
    measured = {"c1": float(cmin), "c2": float(growth.max()), "C": bound,
                "argmin_sigma": float(sig[np.argmin(along)])}
    viol = [k for k, v in margins.items() if not v >= -1e-12 * max(1.0, abs(law.c1))]
    return CheckReport(not viol, margins, measured, viol)


def _random_vec(rng, n, rmax=SAMPLE_RADIUS):
    ang = rng.uniform(0, 2 * np.pi, n)
    mag = np.where(np.arange(n) % 2 == 0, 10.0 ** rng.uniform(-3, np.log10(rmax), n),
                   rng.uniform(0, rmax, n))
    return mag[:, None] * np.column_stack([np.cos(ang), np.sin(ang)])


def check_boundary_law(law: BoundaryLaw, trials: int = 2000, seed: int = 0) -> CheckReport:
    """Sample coercivity, growth and derivative hypotheses of a slip law."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    u = _random_vec(rng, trials)
    v = _random_vec(rng, trials)
    # include pairs near the origin and along rays, where weights are tight
    u = np.vstack([u, 1e-3 * u[:50], 0.5 * v[:50]])
    v = np.vstack([v, 1e-3 * v[:50], v[:50]])
    d = u - v
    nd = np.linalg.norm(d, axis=1)
    ok = nd > 0
    if law.s_exp == 2:
        w = np.ones(len(u))
    else:
        p = law.s_exp - 2
        w = 1.0 + np.linalg.norm(u, axis=1) ** p + np.linalg.norm(v, axis=1) ** p
    ds = law.s(u) - law.s(v)
    coer = (np.sum(ds * d, axis=1)[ok] / (law.alpha * w[ok] * nd[ok] ** 2))
    growth = np.linalg.norm(ds, axis=1)[ok] / (law.alpha * w[ok] * nd[ok])

    e = _random_vec(rng, len(u), 1.0)
    e /= np.linalg.norm(e, axis=1, keepdims=True)
    J = law.ds(u)
    quad = np.einsum("ni,nij,nj->n", e, J, e) / law.alpha
    symJ = 0.5 * (J + np.swapaxes(J, -1, -2))
    dmin = min(quad.min(), np.linalg.eigvalsh(symJ).min() / law.alpha)
    d1 = float(np.linalg.norm(J, ord=2, axis=(1, 2)).max())

    # second derivative by central differences of s'
    h = 1e-5 * np.maximum(1.0, np.linalg.norm(u, axis=1))
    d2 = 0.0
    for k in range(2):
        step = np.zeros_like(u)
        step[:, k] = h
        diff = (law.ds(u + step) - law.ds(u - step)) / (2 * h[:, None, None])
        d2 = max(d2, float(np.linalg.norm(diff, ord=2, axis=(1, 2)).max()))

    margins = {"c3_coercivity": float(coer.min() - law.c3),
               "c4_growth": float(law.c4 - growth.max()),
               "c5_derivative": float(dmin - law.c5),
               "c5_range": float(min(law.c5, 1.0 - law.c5))}
    if law.d2_bound is not None:
        margins["s2_bound"] = float(law.d2_bound - d2)
    measured = {"c3": float(coer.min()), "c4": float(growth.max()), "c5": float(dmin),
                "s1_sup": d1, "s2_sup": d2}
    tol = 1e-12
    viol = [k for k, v in margins.items()
            if not (v > 0 if k == "c5_range" else v >= -tol * max(1.0, law.alpha))]
    return CheckReport(not viol, margins, measured, viol)
