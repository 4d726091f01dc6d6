"""Schrödinger–Bass bridges between probability measures via the static weak-transport dual."""

from .errors import EmptyMassError, InfiniteEntropyError, NotConvergedError, ProximalFailure
from .measures import (Coupling, DiscreteMeasure, GridMeasure, gaussian_grid, read_atoms_csv,
                       wasserstein2_sq, write_atoms_csv)
from .transforms import Potential, QuadratureGrid, SmoothPotential, laguerre_map, smooth_potential, t_beta
from .solvers import (SBSolution, SolverOptions, complementary_slackness, dual_objective, recover_coupling,
                      sb_solve, sinkhorn_eot)
from .limits import LimitReport, bass_residual, brenier_strassen_solve, cost_sb, limit_sweep, value_sweep
from .dynamics import PathEnsemble, dynamic_cost_estimate, potential_at_time, simulate_sb
from .oracle import (OracleResult, brute_force_brenier_strassen, brute_force_infconv, finite_diff_check,
                     gaussian_closed_forms, two_stage_transform)

__version__ = "0.1.0"
