"""Parallel multi-block ADMM: solvers, diagnostics, and a distributed runtime.

Solves separable convex programs

    minimize    f_1(x_1) + ... + f_N(x_N)
    subject to  A_1 x_1 + ... + A_N x_N = c

by proximal Jacobian splitting and related schemes (Gauss-Seidel sweeps,
variable splitting, corrected Jacobian, dual decomposition), with adaptive
proximal-parameter tuning, checkable sufficient conditions, convergence
diagnostics, reproducible experiment generators, and a message-passing
runtime whose histories match serial execution bit for bit.
"""

from .core import (BlockOperator, BlockVector, BoxTerm, CustomTerm, Iterate,
                   L1Term, MetricSpec, QuadraticTerm, SeparableObjective,
                   ShapeError, ZeroTerm, apply, metric_norm_sq)
from .prox import (ProxExplicit, ProxLinear, ProxNone, ProxSpec, ProxStandard,
                   prox_l1_scaled, prox_quadratic, shrink, spectral_norm_sq)
from .problems import (BasisPursuitInstance, ExchangeInstance, Problem,
                       gen_basis_pursuit, gen_exchange, partition,
                       split_to_blocks)
from .solvers import (ConfigurationError, History, SolverConfig, solve,
                      solve_corr_jacobi, solve_dual_decomp, solve_gauss_seidel,
                      solve_jacobi, solve_prox_jacobi, solve_vsadmm)
from .tuning import TunerConfig, tune_step
from .conditions import (ConditionReport, check_cond_2_14, check_cond_4_18,
                         check_near_orthogonality, suggest_tau)
from .diagnostics import (IterationRecord, h_value, rate_check,
                          two_block_residuals)
from .runtime import comm_stats, run_distributed

__version__ = "0.1.0"
