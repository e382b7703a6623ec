"""Welfare-constrained optimal adaptive designs for two-arm trials."""
from .model import (CostSpec, PriorSpec, UtilitySpec, neyman_fraction, posterior_variance,
                    rct_welfare, s_alpha, scale_params, time_change_inverse, time_change_psi,
                    general_cov_t_star)
from .solver import BoundarySolution, GridSpec, find_t_star, solve_boundaries, solve_value, extract_boundaries

__version__ = "0.1.0"
