"""Sequentially rerandomized switchback experiments: designs, estimators, inference, simulations."""
from .design import (DesignPolicy, LaggedOutcomeBalance, Trajectory, all_previous_outcomes_balance_spec,
                     lagged_outcome_balance_spec, run_experiment)
from .estimate import (block_conservative_variance, rerandomization_variance, sate_carryover, sate_no_carryover,
                       variance_reduction_factor)
from .infer import invert_test, randomization_pvalue
from .population import (make_ar1_first_order_carryover, make_ar1_no_carryover, make_heterogeneous_carryover,
                         make_markov_latent_carryover, make_synthetic_factor_model)

__version__ = "0.1.0"
