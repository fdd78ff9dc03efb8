"""JSON run configuration: schema validation and conversion to solver objects."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from . import laws
from .evolution import ProblemConfig


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class StressOptions(_Strict):
    law: Literal["linear", "exp_viscosity", "quadratic_potential"] = "linear"


class SlipOptions(_Strict):
    law: Literal["linear", "tanh", "quadratic"] = "linear"


class InitialOptions(_Strict):
    kind: Literal["zero", "expr", "mode", "random"] = "zero"
    expr: Optional[List[str]] = None
    mode: int = 1
    amplitude: float = 1.0


class SweepOptions(_Strict):
    alphas: List[float] = Field(default_factory=lambda: [0.25, 0.5, 1.0, 2.0, 4.0])
    betas: List[float] = Field(default_factory=lambda: [0.25, 0.5, 1.0, 2.0, 4.0])
    nus: List[float] = Field(default_factory=lambda: [1.0])
    F_norms: List[float] = Field(default_factory=lambda: [0.0, 10.0])
    numeric: bool = False
    shape: List[str] = Field(default_factory=lambda: ["sin(2*pi*y)", "-sin(2*pi*x)"])


class RunConfig(_Strict):
    nu: float = Field(1.0, gt=0)
    alpha: float = Field(1.0, gt=0)
    beta: float = Field(1.0, gt=0)
    ell: float = Field(1.0, gt=0)
    f: Optional[List[str]] = None
    h: Optional[List[str]] = None
    stress: StressOptions = Field(default_factory=StressOptions)
    boundary: SlipOptions = Field(default_factory=SlipOptions)
    u0: InitialOptions = Field(default_factory=InitialOptions)
    model: Literal["stokes", "nse"] = "nse"
    theta: Literal[1.0, 0.5] = 1.0
    picard: bool = False
    convection: Literal["emac", "skew"] = "emac"
    dt: float = Field(0.01, gt=0)
    t_end: float = Field(1.0, ge=0)
    refinement: int = Field(2, ge=0, le=8)
    n_ev: int = Field(20, ge=1)
    qn_n_max: int = Field(20, ge=1, le=60)
    qn_stride: int = Field(10, ge=1)
    transient: float = Field(0.2, ge=0, lt=1)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    output_dir: Optional[str] = None
    sweep: SweepOptions = Field(default_factory=SweepOptions)

    @field_validator("f", "h")
    @classmethod
    def _pair(cls, v):
        if v is not None and len(v) != 2:
            raise ValueError("expected two component expressions")
        return v

    def digest(self) -> bytes:
        return hashlib.sha256(canonical_json(self).encode()).digest()


def canonical_json(cfg: RunConfig) -> str:
    return json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


def _format_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def parse_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_error(exc)) from None


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: malformed JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be an object")
    return parse_config(data)


def compile_field(exprs, key: str):
    """Turn two expressions in x, y into a vectorized callable."""
    if exprs is None:
        return None
    import sympy

    x, y = sympy.symbols("x y")
    funcs = []
    for i, e in enumerate(exprs):
        try:
            expr = sympy.sympify(e, locals={"x": x, "y": y, "pi": sympy.pi})
        except (sympy.SympifyError, SyntaxError, TypeError) as exc:
            raise ConfigError(f"{key}[{i}]: cannot parse expression {e!r} ({exc})") from None
        extra = expr.free_symbols - {x, y}
        if extra:
            raise ConfigError(f"{key}[{i}]: unknown symbols {sorted(map(str, extra))}")
        funcs.append(sympy.lambdify((x, y), expr, "numpy"))

    def field(xv, yv):
        xv = np.asarray(xv, dtype=float)
        return tuple(np.broadcast_to(np.asarray(fn(xv, yv), dtype=float), xv.shape).copy()
                     for fn in funcs)

    return field


def make_laws(cfg: RunConfig):
    stress = {"linear": laws.linear_stress, "exp_viscosity": laws.exp_viscosity_stress,
              "quadratic_potential": laws.quadratic_potential_stress}[cfg.stress.law](cfg.nu)
    slip = {"linear": laws.linear_slip, "tanh": laws.tanh_slip,
            "quadratic": laws.quadratic_slip}[cfg.boundary.law](cfg.alpha)
    return stress, slip


def to_problem(cfg: RunConfig) -> ProblemConfig:
    stress, slip = make_laws(cfg)
    return ProblemConfig(nu=cfg.nu, alpha=cfg.alpha, beta=cfg.beta, ell=cfg.ell,
                         f=compile_field(cfg.f, "f"), h=compile_field(cfg.h, "h"),
                         stress=stress, boundary=slip, u0=None, dt=cfg.dt, t_end=cfg.t_end,
                         model=cfg.model, theta=float(cfg.theta), picard=cfg.picard,
                         convection=cfg.convection, refinement=cfg.refinement)


def initial_condition(cfg: RunConfig, sys):
    """Constrained coefficients of the configured initial data (before projection)."""
    opt = cfg.u0
    if opt.kind == "zero":
        return np.zeros(sys.n)
    if opt.kind == "expr":
        if opt.expr is None or len(opt.expr) != 2:
            raise ConfigError("u0.expr: expected two component expressions")
        return opt.amplitude * sys.interpolate(compile_field(opt.expr, "u0.expr"))
    if opt.kind == "mode":
        from .spectrum import solve_eigenbasis
        if opt.mode < 1 or opt.mode > sys.reduced.dim:
            raise ConfigError("u0.mode: out of range")
        return opt.amplitude * solve_eigenbasis(sys, opt.mode).omega[:, -1]
    rng = np.random.default_rng(cfg.seed)
    u = sys.project(rng.standard_normal(sys.n))
    return opt.amplitude * u / sys.inner.h_norm(u)
