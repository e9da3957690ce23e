"""Sparse equation discovery with Langevin posterior sampling and active learning."""

from .active import (AcquisitionConfig, ActiveResult, Pool, active_learning_loop,
                     burgers_pool, hybrid_acquisition, lotka_volterra_pool,
                     predictive_variance, space_filling_score)
from .evaluate import (CredibleBand, MetricReport, aic, credible_band, error_bar,
                       evaluate_model, mse, reconstruct, threshold_sweep)
from .exceptions import (BandUnavailableError, ChainFailure, ConfigurationError, DataError,
                         DegenerateEntryError, InsufficientDataError, InvalidModelError,
                         SysIdError)
from .experiments import make_problem
from .features import (BasisDescriptor, CandidateLibrary, Dataset, build_library,
                       dataset_from_field, dataset_from_trajectory, finite_difference_space,
                       finite_difference_time)
from .identify import IdentifiedModel, SupportMask, fit, mode_estimate, threshold_support
from .posterior import HorseshoePosterior, HorseshoePrior
from .samplers import ChainConfig, PosteriorSamples, run_chain
from .systems import (Field, SpaceGrid, TimeGrid, Trajectory, add_noise, integrate_rk45,
                      simulate_burgers_spectral, simulate_lorenz, simulate_lotka_volterra,
                      solve_convection_diffusion_analytic)

__version__ = "0.1.0"
