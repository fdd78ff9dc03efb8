"""Slip-boundary Stokes and Navier-Stokes solver with attractor-dimension diagnostics."""
from .mesh import Mesh, BoundaryFrame, build_disk_mesh, boundary_frames, mesh_quality
from .assembly import (DiscreteSystem, InnerProducts, assemble_forcing, build_spaces,
                       build_system, convection_apply)
from .laws import (BoundaryLaw, ConstitutiveLaw, check_boundary_law, check_constitutive)
from .spectrum import StokesBasis, project_PN, solve_eigenbasis, steklov_floor
from .evolution import (ProblemConfig, Trajectory, energy_budget, run_trajectory,
                        step_navier_stokes, step_stokes)
from .linearized import (LinearizedOperator, SubOrthoFamily, check_suborthonormal,
                         lieb_thirring_ratio, linearized_step, quasidifferential_order,
                         trace_qN)
from .bounds import (DimensionReport, RegimeConstants, b0_bound, b1_estimate,
                     dimension_bound, nondimensionalize, regime_table)

__version__ = "0.1.0"
