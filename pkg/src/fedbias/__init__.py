"""fedbias: a simulation and verification lab for constant-step-size
federated averaging.

Runs FedAvg, SCAFFOLD, and Richardson-Romberg-extrapolated FedAvg on
synthetic client populations, and checks closed-form bias and variance
characterizations of the stationary iterate distribution against Monte
Carlo and brute-force oracles.
"""

__version__ = "0.1.0"

from .fedavg import (
    RunConfig,
    Trajectory,
    run,
    run_rr_gamma,
    run_rr_h,
    run_scaffold,
)
from .problems import (
    LogisticClient,
    NoiseModel,
    Problem,
    QuadraticClient,
    gen_random_quadratic,
    gen_synthetic_heterogeneous,
    gen_synthetic_noisy,
    softplus_problem,
)
from .rng import RandomStream

__all__ = [
    "LogisticClient",
    "NoiseModel",
    "Problem",
    "QuadraticClient",
    "RandomStream",
    "RunConfig",
    "Trajectory",
    "gen_random_quadratic",
    "gen_synthetic_heterogeneous",
    "gen_synthetic_noisy",
    "run",
    "run_rr_gamma",
    "run_rr_h",
    "run_scaffold",
    "softplus_problem",
    "__version__",
]
