import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dynslip.assembly import build_system
from dynslip.mesh import build_disk_mesh
from dynslip.spectrum import (linear_fit, project_PN, read_basis_bin, solve_eigenbasis,
                              spectral_residuals, steklov_floor, write_basis_bin,
                              write_eigen_csv)


@pytest.fixture(scope="module")
def basis2(sys2):
    return solve_eigenbasis(sys2, 30)


@settings(max_examples=6, deadline=None)
@given(alpha=st.floats(0.05, 20), beta=st.floats(0.05, 20))
def test_eigenvalues_positive_sorted(mesh2, alpha, beta):
    b = solve_eigenbasis(build_system(mesh2, 1.0, alpha, beta), 20)
    assert np.all(b.mu > 0)
    assert np.all(np.diff(b.mu) >= 0)


def test_refinement3_positive_sorted():
    b = solve_eigenbasis(build_system(build_disk_mesh(3, 1.0), 1.0, 2.0, 0.5), 40)
    assert np.all(b.mu > 0) and np.all(np.diff(b.mu) >= 0)


def test_basis_properties(basis2, sys2):
    Om = basis2.omega
    np.testing.assert_allclose(Om.T @ (sys2.inner.M_H @ Om), np.eye(30), atol=1e-12)
    rq = np.einsum("ij,ij->j", Om, sys2.inner.K_V @ Om)
    np.testing.assert_allclose(rq, basis2.mu, rtol=1e-12)
    assert spectral_residuals(basis2).max() < 1e-10
    assert np.abs(sys2.Bdiv @ Om).max() < 1e-12


def test_doubling_beta_lowers_rayleigh_quotients(mesh2):
    s1 = build_system(mesh2, 1.0, 1.0, 1.0)
    s2 = build_system(mesh2, 1.0, 1.0, 2.0, space=s1.space)
    rng = np.random.default_rng(0)
    for _ in range(20):
        u = s1.project(rng.standard_normal(s1.n))
        q1 = s1.inner.v_inner(u, u) / s1.inner.h_inner(u, u)
        q2 = s2.inner.v_inner(u, u) / s2.inner.h_inner(u, u)
        assert q2 <= q1
    b1, b2 = solve_eigenbasis(s1, 10), solve_eigenbasis(s2, 10)
    assert np.all(b2.mu <= b1.mu * (1 + 1e-12))


def test_projection_of_eigenfunction(basis2):
    w3 = basis2.omega[:, 2]
    np.testing.assert_allclose(basis2.coefficients(w3)[:3], [0, 0, 1], atol=1e-12)
    np.testing.assert_allclose(project_PN(basis2, w3, 5), w3, atol=1e-12)
    assert np.abs(project_PN(basis2, w3, 2)).max() < 1e-12
    with pytest.raises(ValueError):
        project_PN(basis2, w3, basis2.count + 1)


def test_full_basis_is_complete():
    sys_ = build_system(build_disk_mesh(1, 1.0), 1.0, 1.0, 1.0)
    b = solve_eigenbasis(sys_, sys_.reduced.dim)
    u = sys_.project(np.random.default_rng(1).standard_normal(sys_.n))
    assert sys_.inner.h_norm(project_PN(b, u, b.count) - u) < 1e-9


def test_eigenvalues_converge_under_refinement(basis2):
    b3 = solve_eigenbasis(build_system(build_disk_mesh(3, 1.0), 1.0, 1.0, 1.0), 5)
    b4_mu1 = 0.88702
    assert abs(b3.mu[0] - b4_mu1) < 1e-4
    assert abs(basis2.mu[0] - b3.mu[0]) < 1e-3
    np.testing.assert_allclose(b3.mu[1], b3.mu[2], rtol=1e-8)


def test_linear_fit_on_exact_line():
    a, r2 = linear_fit(2.5 * np.arange(1, 41), 5, 40)
    assert a == pytest.approx(2.5) and r2 == pytest.approx(1.0)


@pytest.mark.parametrize("beta,M", [(1.0, 1.0), (4.0, 4.0), (0.5, 1.0)])
def test_steklov_floor(mesh2, beta, M):
    sys_ = build_system(mesh2, 1.0, 1.0, beta)
    rep = steklov_floor(solve_eigenbasis(sys_, 20), beta)
    assert rep.M_beta == M
    assert rep.passed
    assert rep.ratios.min() >= 1 - 1e-8


def test_output_files(tmp_path, basis2):
    write_eigen_csv(basis2, tmp_path / "eigen.csv")
    data = np.loadtxt(tmp_path / "eigen.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(data[:, 1], basis2.mu)
    np.testing.assert_array_equal(data[:, 0], np.arange(1, 31))
    write_basis_bin(basis2, tmp_path / "basis.bin")
    np.testing.assert_array_equal(read_basis_bin(tmp_path / "basis.bin"), basis2.omega.T)
