"""Pathwise fractional calculus, exact Gaussian simulation, and bounded
replication strategies for long-memory market models."""

from .processes import (BiFBm, CovarianceModel, FBm, FOu, LinearCombo,
                        SubFBm, VolterraKernelModel, check_conditions,
                        covariance, covariance_matrix, fbm_kernel,
                        fbm_kernel_constant, fbm_star_kernel,
                        incremental_variance, mixed_fbm,
                        volterra_condition_check)
from .simulate import (GaussianPath, JointPath, SampleGrid,
                       holder_exponent_estimate, sample_joint, sample_path,
                       sample_paths, uniform_grid)
from .fractional import (FracOrder, gls_integral, lambda_alpha,
                         rl_derivative, verify_bound, weighted_norm)
from .replication import (ReplicationConfig, ReplicationTrace, Strategy,
                          build_replicating_strategy, case1_gadget,
                          case2_gadget, improper_strategy, level_grid,
                          replication_grid, small_deviation_bound)
from .martingales import (ClaimSpec, DensityProcess, ThetaProcess,
                          claim_library, density_terminal,
                          holder_of_ito_integral, ito_integral)
from .utility import (UtilityProblem, exponential_profile_closed_form,
                      exponential_utility, fbm_market_theta,
                      hidden_semimartingale_constants, inverse_marginal,
                      log_utility, optimal_profile, power_utility,
                      prelimit_variance, relative_entropy,
                      solve_budget_constant)

__version__ = "0.1.0"
