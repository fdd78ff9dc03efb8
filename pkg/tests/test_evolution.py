import math
from dataclasses import replace

import numpy as np
import pytest

from dynslip import bounds
from dynslip.evolution import (NumericalFailure, ProblemConfig, build_problem_system,
                               config_digest, energy_budget, read_checkpoint, run_trajectory,
                               step_navier_stokes, step_stokes, write_checkpoint,
                               write_trajectory_csv)
from dynslip.spectrum import solve_eigenbasis

from conftest import rotation, swirl


def _h_norms(traj):
    return np.sqrt(np.maximum(traj.H_norm_sq, 0))


def test_rest_stays_at_rest():
    traj = run_trajectory(ProblemConfig(t_end=0.2, refinement=1))
    assert not np.any(traj.states)
    assert not np.any(traj.energy_residual)


def test_zero_end_time_single_record():
    traj = run_trajectory(ProblemConfig(t_end=0.0, u0=rotation, refinement=1))
    assert len(traj.times) == 1 and traj.states.shape[0] == 1


@pytest.mark.parametrize("theta,order", [(1.0, 1), (0.5, 2)])
def test_modal_decay_order(theta, order):
    base = ProblemConfig(model="stokes", theta=theta, t_end=0.5, refinement=2)
    sys_ = build_problem_system(base)
    b = solve_eigenbasis(sys_, 1)
    exact = math.exp(-b.mu[0] * base.t_end)
    errs = []
    for dt in (0.05, 0.025, 0.0125):
        traj = run_trajectory(replace(base, dt=dt), sys_, u0=b.omega[:, 0])
        errs.append(abs(_h_norms(traj)[-1] - exact))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > order - 0.1)


@pytest.mark.parametrize("model", ["stokes", "nse"])
@pytest.mark.parametrize("theta", [1.0, 0.5])
def test_rigid_rotation_per_step(model, theta):
    alpha, beta = 2.0, 0.5
    h = lambda x, y: tuple(alpha / beta * c for c in rotation(x, y))
    cfg = ProblemConfig(alpha=alpha, beta=beta, h=h, model=model, theta=theta, refinement=2)
    sys_ = build_problem_system(cfg)
    w = sys_.interpolate(rotation)
    step = step_stokes if model == "stokes" else step_navier_stokes
    nxt = step(sys_, w, 0.01, theta)
    assert sys_.inner.h_norm(nxt - w) < 1e-9


def test_picard_zero_forcing_monotone():
    cfg = ProblemConfig(u0=lambda x, y: (5 * np.cos(3 * y), 5 * np.sin(2 * x)), picard=True,
                        dt=0.02, t_end=1.0, refinement=2)
    norms = _h_norms(run_trajectory(cfg))
    assert np.all(np.diff(norms) <= 1e-12 * norms[0])
    cn = run_trajectory(replace(cfg, theta=0.5))
    n2 = _h_norms(cn)
    assert np.all(np.diff(n2) <= 1e-10 * n2[0])


def test_temporal_order_richardson():
    base = ProblemConfig(f=swirl(30.0), u0=lambda x, y: (np.cos(3 * y), np.sin(2 * x)),
                         t_end=0.4, refinement=2)
    sys_ = build_problem_system(base)
    finals = [run_trajectory(replace(base, dt=dt), sys_).states[-1] for dt in (0.02, 0.01, 0.005)]
    d1 = sys_.inner.h_norm(finals[0] - finals[1])
    d2 = sys_.inner.h_norm(finals[1] - finals[2])
    assert math.log2(d1 / d2) >= 0.95


def test_linear_path_matches_step_stokes():
    cfg = ProblemConfig(model="stokes", f=swirl(10.0), u0=rotation, dt=0.01, t_end=0.1,
                        refinement=2)
    traj = run_trajectory(cfg)
    sys_ = traj.sys
    u = traj.states[0]
    for n in range(10):
        u = step_stokes(sys_, u, cfg.dt, 1.0, t=traj.times[n])
        assert sys_.inner.h_norm(u - traj.states[n + 1]) <= 1e-12 * max(1.0, sys_.inner.h_norm(u))


def test_long_run_enters_absorbing_ball():
    cfg = ProblemConfig(f=swirl(40.0), u0=lambda x, y: (20 * np.cos(3 * y), 0 * x),
                        dt=0.02, t_end=4.0, refinement=2)
    traj = run_trajectory(cfg)
    bound = bounds.b0_bound(cfg)
    norms = _h_norms(traj)
    tail = norms[len(norms) // 2:]
    assert np.all(tail <= 1.05 * bound)


def test_energy_residual_cn_second_order():
    base = ProblemConfig(model="stokes", theta=0.5, f=swirl(20.0), u0=rotation, t_end=0.5)
    res = [np.abs(energy_budget(run_trajectory(replace(base, dt=dt)))[1]).max()
           for dt in (0.02, 0.01)]
    assert 3.5 < res[0] / res[1] < 4.5


def test_energy_residual_ie_one_signed():
    cfg = ProblemConfig(model="stokes", f=swirl(20.0), u0=rotation, dt=0.02, t_end=0.5)
    per_step, _ = energy_budget(run_trajectory(cfg))
    assert np.all(per_step <= 0) or np.all(per_step >= 0)
    # implicit Euler dissipates: E_{n+1} - E_n + dt*rate_{n+1} = -|u_{n+1} - u_n|^2 / 2
    assert np.all(per_step <= 0)


def test_energy_residual_ie_matches_increment_identity():
    cfg = ProblemConfig(model="stokes", f=swirl(20.0), u0=rotation, dt=0.02, t_end=0.2)
    traj = run_trajectory(cfg)
    per_step, _ = energy_budget(traj)
    d = np.diff(traj.states, axis=0)
    inc = np.einsum("ij,ij->i", d, (traj.sys.inner.M_H @ d.T).T)
    np.testing.assert_allclose(per_step, -0.5 * inc, rtol=1e-8, atol=1e-13)


def test_invalid_config():
    for bad in (dict(theta=0.3), dict(dt=0.0), dict(model="euler"), dict(t_end=-1.0),
                dict(convection="upwind"), dict(beta=0.0)):
        with pytest.raises(ValueError):
            run_trajectory(ProblemConfig(refinement=0, **bad))


def test_blow_up_reported_with_step():
    cfg = ProblemConfig(u0=lambda x, y: (1e6 * np.cos(3 * y), 1e6 * np.sin(2 * x)),
                        dt=0.5, t_end=50.0, refinement=1)
    with np.errstate(all="ignore"), pytest.raises(NumericalFailure) as exc:
        run_trajectory(cfg)
    assert exc.value.step is not None and exc.value.step >= 1


def test_checkpoint_roundtrip(tmp_path):
    u = np.random.default_rng(0).standard_normal(50)
    dig = config_digest("abc")
    write_checkpoint(tmp_path / "c.bin", u, dig)
    np.testing.assert_array_equal(read_checkpoint(tmp_path / "c.bin", dig), u)
    with pytest.raises(ValueError):
        read_checkpoint(tmp_path / "c.bin", config_digest("other"))


def test_trajectory_csv(tmp_path):
    traj = run_trajectory(ProblemConfig(u0=rotation, t_end=0.05, refinement=1))
    write_trajectory_csv(traj, tmp_path / "t.csv")
    data = np.loadtxt(tmp_path / "t.csv", delimiter=",", skiprows=1)
    assert data.shape == (6, 6)
    np.testing.assert_array_equal(data[:, 1], traj.H_norm_sq)
