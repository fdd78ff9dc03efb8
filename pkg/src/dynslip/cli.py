"""Command-line entry point: mesh, eigen, run, linearize, dimension, scalecheck, sweep."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bounds, evolution, linearized, mesh, spectrum
from .config import (ConfigError, RunConfig, compile_field, initial_condition, load_config,
                     parse_config, to_problem)
from .evolution import NumericalFailure

log = logging.getLogger("dynslip")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else parse_config({})
    overrides = {}
    for flag, key in (("seed", "seed"), ("refine", "refinement"), ("nev", "n_ev"),
                      ("dt", "dt"), ("tend", "t_end")):
        v = getattr(args, flag, None)
        if v is not None:
            overrides[key] = v
    if overrides:
        cfg = parse_config({**cfg.model_dump(mode="json"), **overrides})
    return cfg


def _outdir(args, cfg: RunConfig) -> Path:
    out = Path(args.out or cfg.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _system(cfg: RunConfig):
    prob = to_problem(cfg)
    sys_ = evolution.build_problem_system(prob)
    prob.u0 = initial_condition(cfg, sys_)
    return prob, sys_


def cmd_mesh(args, cfg):
    m = mesh.build_disk_mesh(cfg.refinement, cfg.ell)
    path = _outdir(args, cfg) / "mesh.txt"
    mesh.write_mesh(m, path)
    q = mesh.mesh_quality(m)
    print(f"mesh: {m.n_vertices} nodes, {m.n_triangles} triangles, "
          f"min angle {q.min_angle:.2f} deg -> {path}")


def cmd_eigen(args, cfg):
    _, sys_ = _system(cfg)
    basis = spectrum.solve_eigenbasis(sys_, cfg.n_ev)
    out = _outdir(args, cfg)
    spectrum.write_eigen_csv(basis, out / "eigen.csv")
    spectrum.write_basis_bin(basis, out / "basis.bin")
    print(f"eigen: {basis.count} pairs, mu_1 = {basis.mu[0]:.10g} -> {out / 'eigen.csv'}")


def _trajectory(cfg):
    prob, sys_ = _system(cfg)
    return prob, evolution.run_trajectory(prob, sys_)


def cmd_run(args, cfg):
    _, traj = _trajectory(cfg)
    out = _outdir(args, cfg)
    evolution.write_trajectory_csv(traj, out / "trajectory.csv")
    evolution.write_checkpoint(out / "final_state.ckpt", traj.states[-1], cfg.digest())
    print(f"run: {len(traj.times) - 1} steps, final |u|_H^2 = {traj.H_norm_sq[-1]:.10g}")


def cmd_linearize(args, cfg):
    prob, traj = _trajectory(cfg)
    trace = linearized.trace_qN(traj, cfg.qn_n_max, cfg.qn_stride, cfg.transient)
    consts = bounds.reference_constants(cfg.refinement)
    rc = bounds.regime_constants(prob, bounds.forcing_norm(prob, traj.sys.space))
    lam = bounds.stokes_eigenvalues(traj.sys, cfg.qn_n_max)
    f = bounds.majorant(lam, trace.Du_avg, prob.nu, rc.m_alpha, consts)
    out = _outdir(args, cfg)
    linearized.write_qn_csv(trace.N, trace.qN, f, out / "qn.csv")
    n_lt = min(bounds.LT_RANGE, traj.sys.reduced.dim)
    basis = spectrum.solve_eigenbasis(traj.sys, n_lt)
    Ns = np.arange(1, n_lt + 1)
    ratios = linearized.lieb_thirring_curve(basis.omega, traj.sys.inner, Ns)
    linearized.write_lt_csv(Ns, ratios, out / "lt.csv")
    print(f"linearize: q(1) = {trace.qN[0]:.6g}, kappa = {ratios.max():.6g}")


def cmd_dimension(args, cfg):
    prob, traj = _trajectory(cfg)
    rep = bounds.dimension_bound(prob, traj, N_max=cfg.qn_n_max, stride=cfg.qn_stride)
    out = _outdir(args, cfg)
    rep.write_json(out / "report.json")
    for note in rep.notes:
        print(f"dimension: {note}")
    print(f"dimension: n_star_numeric = {rep.n_star_numeric}, "
          f"formula bound = {rep.formula_bound:.6g}")


def cmd_scalecheck(args, cfg):
    prob = to_problem(cfg)
    if cfg.u0.kind != "zero":
        sys_ = evolution.build_problem_system(prob)
        prob.u0 = initial_condition(cfg, sys_)
    res = bounds.scale_roundtrip(prob)
    out = _outdir(args, cfg)
    (out / "scalecheck.json").write_text(
        json.dumps({"gap": res.gap, "passed": res.passed}, indent=2) + "\n")
    print(f"scalecheck: {'PASS' if res.passed else 'FAIL'} gap = {res.gap:.3e}")
    if not res.passed:
        raise NumericalFailure(f"round-trip gap {res.gap:.3e} above tolerance", None,
                               "nondimensionalize")


def cmd_sweep(args, cfg):
    prob = to_problem(cfg)
    sw = cfg.sweep
    shape = compile_field(sw.shape, "sweep.shape")
    # normalize the shape to unit L^2 norm on the base mesh
    norm = bounds.forcing_norm(replace(prob, f=shape, h=None))
    unit = (lambda g, c: (lambda x, y: tuple(c * v for v in g(x, y))))(shape, 1.0 / norm)
    rows, flags = bounds.regime_table(sw.alphas, sw.betas, sw.nus, sw.F_norms, prob,
                                      shape=unit, numeric=sw.numeric, N_max=cfg.qn_n_max,
                                      stride=cfg.qn_stride)
    out = _outdir(args, cfg)
    bounds.write_regime_csv(rows, out / "regime_table.csv")
    (out / "regime_flags.json").write_text(json.dumps(flags, indent=2, sort_keys=True) + "\n")
    print(f"sweep: {len(rows)} cells, flags {flags}")


COMMANDS = {"mesh": cmd_mesh, "eigen": cmd_eigen, "run": cmd_run,
            "linearize": cmd_linearize, "dimension": cmd_dimension,
            "scalecheck": cmd_scalecheck, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynslip", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--refine", type=int)
        sp.add_argument("--nev", type=int)
        sp.add_argument("--dt", type=float)
        sp.add_argument("--tend", type=float)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        step = "" if exc.step is None else f" at step {exc.step}"
        print(f"numerical failure in {exc.operation}{step}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ArithmeticError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure in {args.command}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
