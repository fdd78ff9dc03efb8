import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynslip import assembly as asm
from dynslip import laws
from dynslip.assembly import build_spaces, build_system, convection_apply
from dynslip.fem import build_fe_space
from dynslip.mesh import build_disk_mesh

from conftest import rotation

R = 0.5


def _random_field(sys_, seed):
    rng = np.random.default_rng(seed)
    return sys_.project(rng.standard_normal(sys_.n))


def test_constant_field_h_norm():
    mesh = build_disk_mesh(2, 1.0)
    beta = 0.7
    inner = build_spaces(mesh, 1.0, beta)
    uf = inner.space.interpolate(lambda x, y: (np.ones_like(x), np.zeros_like(x)))
    full = uf @ (inner.full.mass @ uf) + beta * uf @ (inner.full.bmass @ uf)
    assert abs(full - (np.pi * R ** 2 + beta * 2 * np.pi * R)) < 1e-10


def test_constrained_constant_field_converges():
    beta = 0.7
    target = np.pi * R ** 2 + beta * np.pi * R
    errs = []
    for L in (2, 3, 4):
        inner = build_spaces(build_disk_mesh(L, 1.0), 1.0, beta)
        u = inner.space.constrain(inner.space.interpolate(
            lambda x, y: (np.ones_like(x), np.zeros_like(x))))
        errs.append(abs(inner.h_inner(u, u) - target))
    assert errs[0] > errs[1] > errs[2]
    assert errs[1] / errs[2] > 1.6


@pytest.mark.parametrize("alpha", [0.5, 2.0])
def test_rotation_v_energy_is_boundary_only(alpha):
    sys_ = build_system(build_disk_mesh(2, 1.0), 1.0, alpha, 1.0)
    w = sys_.interpolate(rotation)
    assert abs(w @ (sys_.inner.K_D @ w)) < 1e-13
    assert abs(sys_.inner.v_inner(w, w) - alpha * 2 * np.pi * R ** 3) < 1e-12
    assert np.abs(sys_.Bdiv @ w).max() < 1e-12


@pytest.mark.parametrize("alpha,beta", [(1.0, 0.0), (0.0, 1.0), (1.0, -1.0)])
def test_nonpositive_parameters_rejected(alpha, beta):
    with pytest.raises(ValueError):
        build_spaces(build_disk_mesh(0, 1.0), alpha, beta)


def test_load_paths(sys2):
    assert not np.any(asm.assemble_forcing(sys2, None, None))
    one = lambda x, y: (np.ones_like(x), np.zeros_like(x))
    load = asm.assemble_forcing(sys2, one, None)
    uf = sys2.space.interpolate(one)
    np.testing.assert_allclose(load, sys2.P.T @ (sys2.inner.full.mass @ uf), atol=1e-14)


# doubling is exact in floating point as long as nothing underflows
_coef = st.floats(-5, 5).filter(lambda v: v == 0 or abs(v) > 1e-100)


@settings(max_examples=10, deadline=None)
@given(a=_coef, b=_coef)
def test_load_linear(sys2, a, b):
    f = lambda x, y: (a * np.sin(3 * y), b * x * y)
    h = lambda x, y: (b * np.ones_like(x), a * x)
    f2 = lambda x, y: tuple(2 * c for c in f(x, y))
    h2 = lambda x, y: tuple(2 * c for c in h(x, y))
    np.testing.assert_array_equal(asm.assemble_forcing(sys2, f2, h2),
                                  2 * asm.assemble_forcing(sys2, f, h))


def test_forcing_norm_closed_form():
    space = build_fe_space(build_disk_mesh(1, 1.0))
    beta = 2.0
    h = lambda x, y: rotation(x, y)
    val = asm.forcing_h_norm(space, lambda x, y: (np.ones_like(x), 0 * x), h, beta)
    assert abs(val ** 2 - (np.pi * R ** 2 + beta * 2 * np.pi * R ** 3)) < 1e-12


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_convection_skew(sys2, seed):
    u = np.random.default_rng(seed).standard_normal(sys2.n)
    scale = sys2.inner.h_norm(u) ** 2 * sys2.inner.v_norm(u)
    for form in ("skew", "emac"):
        assert abs(convection_apply(sys2, u, u, form) @ u) < 1e-12 * scale


def test_convection_zero_and_consistency(sys2):
    assert not np.any(convection_apply(sys2, np.zeros(sys2.n), np.zeros(sys2.n)))
    w = sys2.interpolate(rotation)
    wf = sys2.to_full(w)
    raw = sys2.P.T @ asm.trilinear_full(sys2.space, wf, wf, "raw")
    skew = convection_apply(sys2, w, w, "skew")
    assert np.linalg.norm(raw - skew) <= 1e-10 * np.linalg.norm(raw)


def test_emac_rotation_is_pressure_gradient(sys2):
    # the rotational form of (w.grad)w for rigid rotation is orthogonal to div-free fields
    w = sys2.interpolate(rotation)
    c = convection_apply(sys2, w, w, "emac")
    assert np.abs(sys2.reduced.W.T @ c).max() < 1e-12


def test_export_matrix(tmp_path, sys2):
    asm.export_matrix(sys2.inner.M_H, tmp_path / "m.txt")
    rows = np.loadtxt(tmp_path / "m.txt")
    M = sys2.inner.M_H.tocoo()
    assert len(rows) == M.nnz
    dense = np.zeros(M.shape)
    dense[rows[:, 0].astype(int), rows[:, 1].astype(int)] = rows[:, 2]
    np.testing.assert_array_equal(dense, M.toarray())


# ---- inequality constants ----

def test_korn_stable_under_refinement():
    ck = [asm.korn_constant(build_spaces(build_disk_mesh(L, 1.0), 1.0, 1.0)) for L in (2, 3)]
    assert abs(ck[1] - ck[0]) / ck[0] < 0.10
    inner = build_spaces(build_disk_mesh(2, 1.0), 1.0, 1.0)
    rng = np.random.default_rng(0)
    ratios = [asm.korn_ratio(inner, rng.standard_normal(inner.M_H.shape[0])) for _ in range(200)]
    assert max(ratios) <= ck[0] * (1 + 1e-10)


def _tangential_fields(seed, n=30):
    """u = curl(q g) with q = R^2 - r^2, so u.n = 0 on the circle."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        a = rng.standard_normal(6)

        def u(x, y, a=a):
            q = R ** 2 - x ** 2 - y ** 2
            g = a[0] + a[1] * np.sin(3 * x + a[2]) + a[3] * np.cos(2 * y + a[4]) + a[5] * x * y
            gx = 3 * a[1] * np.cos(3 * x + a[2]) + a[5] * y
            gy = -2 * a[3] * np.sin(2 * y + a[4]) + a[5] * x
            return -2 * y * g + q * gy, 2 * x * g - q * gx
        out.append(u)
    return out


def test_ladyzhenskaya_stable_under_refinement():
    fields = _tangential_fields(1)
    worst = []
    for L in (2, 3):
        inner = build_spaces(build_disk_mesh(L, 1.0), 1.0, 1.0)
        space = inner.space
        worst.append(max(asm.ladyzhenskaya_ratio(inner, space.constrain(space.interpolate(f)))
                         for f in fields))
    assert np.all(np.isfinite(worst))
    assert abs(worst[1] - worst[0]) / worst[0] < 0.10


# ---- constitutive and slip laws ----

def test_linear_stress_constants_exact():
    nu = 0.37
    rep = laws.check_constitutive(laws.linear_stress(nu), trials=500)
    assert rep.passed
    assert rep.measured["c1"] == pytest.approx(nu, rel=1e-14)
    assert rep.measured["c2"] == pytest.approx(nu, rel=1e-14)


def test_exp_viscosity_oracle():
    nu = 1.0
    sig = np.linspace(0, 20, 200001)
    oracle = np.min(nu * (1 + np.exp(-sig)) - 4 * sig * nu * np.exp(-sig) / 2)
    assert oracle == pytest.approx(0.55374, abs=1e-5)
    rep = laws.check_constitutive(laws.exp_viscosity_stress(nu))
    assert rep.passed
    assert rep.measured["c1"] == pytest.approx(oracle, abs=1e-6)
    assert not laws.check_constitutive(laws.exp_viscosity_stress(nu, c1=0.6 * nu)).passed


def test_quadratic_potential_fails_growth():
    rep = laws.check_constitutive(laws.quadratic_potential_stress(1.0))
    assert not rep.passed
    assert "c2_growth" in rep.violations


@pytest.mark.parametrize("make", [laws.linear_stress, laws.exp_viscosity_stress])
def test_stress_basic_invariants(make):
    law = make(0.8)
    rng = np.random.default_rng(3)
    assert not np.any(law.stress(np.zeros((1, 2, 2))))
    A = rng.standard_normal((20, 2, 2))
    D = A + np.swapaxes(A, 1, 2)
    S = law.stress(D)
    np.testing.assert_allclose(S, np.swapaxes(S, 1, 2))
    E = rng.standard_normal((20, 2, 2))
    E = E + np.swapaxes(E, 1, 2)
    errs = []
    for h in (1e-3, 1e-4):
        fd = (law.stress(D + h * E) - law.stress(D - h * E)) / (2 * h)
        errs.append(np.abs(fd - law.tangent(D, E)).max())
    assert errs[1] <= max(errs[0], 1e-9)
    assert errs[1] < 1e-6


def test_linear_slip_constants():
    rep = laws.check_boundary_law(laws.linear_slip(2.5))
    assert rep.passed
    assert rep.measured["c3"] == pytest.approx(1.0, rel=1e-12)
    assert rep.measured["c4"] == pytest.approx(1.0, rel=1e-12)
    assert rep.measured["c5"] == pytest.approx(1.0, rel=1e-12)


def test_tanh_slip_passes_with_finite_derivatives():
    rep = laws.check_boundary_law(laws.tanh_slip(1.5))
    assert rep.passed
    assert rep.margins["c3_coercivity"] >= 0
    assert np.isfinite(rep.measured["s1_sup"]) and np.isfinite(rep.measured["s2_sup"])


def test_quadratic_slip_reports_measured_bound():
    rep = laws.check_boundary_law(laws.quadratic_slip(1.0))
    assert np.isfinite(rep.measured["s2_sup"])
    assert not rep.passed


@pytest.mark.parametrize("make", [laws.linear_slip, laws.tanh_slip, laws.quadratic_slip])
def test_slip_zero_at_origin(make):
    assert not np.any(make(1.0).s(np.zeros((1, 2))))
