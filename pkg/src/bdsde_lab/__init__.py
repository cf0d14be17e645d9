"""Monte Carlo solvers for backward doubly stochastic differential equations.

The package estimates the solution of a semilinear SPDE, its spatial gradient
and the martingale integrand Z through regression on simulated paths, with
derivative-free (Malliavin-weight) and variational estimators, plus
finite-difference and binomial-tree oracles for validation.
"""

from .bdsde import (BackwardSolution, JumpSolution, VariationalSolution, evaluate_u, run_outer, solve_bdsde,
                    solve_jump_system, solve_variational)
from .condexp import EnumerationCE, RegressionCE
from .config import ExperimentConfig, parse_config, read_config, write_config
from .core import (CoefficientSet, NoiseEnsemble, NoisePath, Partition, ProblemSpec, TimeGrid, coarsen_increments,
                   enumerate_ensemble, make_grid, mollify, sample_b_increments, sample_ensemble, sample_noise)
from .errors import (BDSDEError, ConfigurationError, SimulationError, SolverError, UnsupportedError,
                     ValidationError)
from .forward import ForwardBundle, simulate_forward, tangent_consistency_check
from .harness import ResultRecord, run_experiment, write_records
from .oracles import fd_gradient, pde_solve, spde_solve_pathwise, tree_enumerate, tree_unconditional
from .problems import make_problem
from .symbolic import coefficients_from_expressions
from .weights import (compute_weights, estimate_grad_u_weights, estimate_z_discrete, estimate_z_weights,
                      malliavin_derivative, z_one_sided_limits)

__version__ = "0.1.0"
