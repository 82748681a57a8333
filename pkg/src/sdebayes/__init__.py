"""Bayesian inference for discretely observed Ito diffusions.

Time-discretised (Euler-Maruyama) likelihoods estimated by bridge-based
importance sampling, three pseudo-marginal MCMC samplers (plain, correlated
and augmented-correlated), and linear-noise-approximation machinery for
initialisation and tuning.
"""

__version__ = "0.1.0"

from .bridge import BridgeKind, mdb_exact_params, mdb_noisy_params, propagate
from .filter import AuxiliaryVariates, euclidean_sort, run_filter, systematic_resample
from .importance import TransitionEstimate, estimate_initial, estimate_joint, estimate_transition
from .models import affine_model, autoreg_model, get_model, lotka_volterra_model, square_root_model
from .samplers import (
    ChainOutput,
    ChainState,
    CnKernel,
    PerTimeRwm,
    RwmProposal,
    acpmmh_run,
    cn_propose,
    cpmmh_run,
    odd_even_schedule,
    pmmh_run,
)
from .sde import (
    GaussianInitial,
    LatentPath,
    ObservationModel,
    ParamVector,
    PointMassInitial,
    SdeModel,
    TimeGrid,
    euler_log_density,
    euler_moments,
    obs_log_density,
    path_log_density,
    simulate_data,
    simulate_path,
)

__all__ = [name for name in dir() if not name.startswith("_")]
