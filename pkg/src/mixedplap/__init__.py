"""Dirichlet eigenvalues of the mixed local/nonlocal p-Laplacian on 1D/2D grids."""
from .eigensolve import (EigenResult, SolverOptions, lambda2_lower_nodal, lambda2_upper,
                         solve_lambda1, solve_lambda2, solve_linear_spectrum)
from .energy import (EnergyBreakdown, Field, energy_gradient, local_energy, lp_norm,
                     nonlocal_energy, normalize, rayleigh, total_energy)
from .errors import *  # noqa: F401,F403
from .experiments import (ExperimentConfig, SweepRow, fk_suite, hks_suite,
                          separation_sweep)
from .geometry import (Ball, Box, Grid, Params, Union, ball_of_volume, build_grid,
                       parse_shape, two_balls, volume)
from .kernel import (KernelTable, assemble_kernel, check_lemma29_part1, j_p,
                     lemma29_part2_ratio, monotonicity_gap, tail)
from .rearrange import RearrangedPair, polya_szego_check, schwarz

__version__ = "0.1.0"
