"""Nonlinear population Monte Carlo.

Iterative importance sampling in which the unnormalized importance weights
pass through a dispersion-reducing nonlinearity (tempering or clipping)
before normalization and resampling.  The package bundles the algorithm
engines, two benchmark targets (a two-mean Gaussian mixture posterior and a
Lotka-Volterra stochastic kinetic model with a particle-filter likelihood),
estimation metrics, and a CLI that reproduces the degeneracy, comparison,
and convergence experiments.
"""

from npmc.weights import (
    AllWeightsZeroError,
    WeightTransform,
    adapt_gamma,
    clip_hard,
    clip_soft,
    ess,
    max_weight,
    ness,
    normalize,
    temper,
)
from npmc.sampling import (
    GaussianProposal,
    ParticleSet,
    RngStream,
    fit_gaussian_proposal,
    log_mvn_density,
    multinomial_resample,
    sample_proposal,
)
from npmc.pmc import (
    DegenerateWeightsError,
    IterationRecord,
    NpmcConfig,
    RunResult,
    StdPmcConfig,
    TargetModel,
    bridge_estimate,
    convergence_error_curves,
    estimate,
    modified_npmc_run,
    normal_normal_model,
    npmc_run,
    std_pmc_run,
)

__all__ = [
    "AllWeightsZeroError",
    "DegenerateWeightsError",
    "GaussianProposal",
    "IterationRecord",
    "NpmcConfig",
    "ParticleSet",
    "RngStream",
    "RunResult",
    "StdPmcConfig",
    "TargetModel",
    "WeightTransform",
    "adapt_gamma",
    "bridge_estimate",
    "clip_hard",
    "clip_soft",
    "convergence_error_curves",
    "ess",
    "estimate",
    "fit_gaussian_proposal",
    "log_mvn_density",
    "max_weight",
    "modified_npmc_run",
    "multinomial_resample",
    "ness",
    "normal_normal_model",
    "normalize",
    "npmc_run",
    "sample_proposal",
    "std_pmc_run",
    "temper",
]

__version__ = "0.1.0"
