"""Robust growth-optimal functionally generated portfolios under stochastic covariance."""
__version__ = "0.1.0"

from .assumptions import audit_assumptions, check_beta_params, test_function_energies
from .averaging import (average_covariance, averaged_fields, drift_fields, effective_covariance,
                        marginal_density, sample_model, y_average_covariance)
from .catalog import (CATALOG, ClosedFormOracle, beta_model, exogenous_model, get_entry,
                      list_entries, model_from_config, tractable_model)
from .estimators import RobustGrowthPortfolio, WorstCaseMeasure
from .exceptions import *  # noqa: F401,F403
from .growth import (PhiSolution, detect_gradient_case, growth_rate, ibp_growth_functional,
                     solve_phi, strategy_weights, variational_energy)
from .model import DomainSpec, Grid, MarketModel, build_grid, validate_model
from .pipeline import solve_model, worst_case
from .simulate import (SimConfig, SimResult, estimate_growth, simulate_reference,
                       simulate_worst_case, wealth_path)
from .worstcase import (assemble_beta, build_k_modification, check_m1_identity, slice_rhs,
                        solve_v, solve_v_slice)
