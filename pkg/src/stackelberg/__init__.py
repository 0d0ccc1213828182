"""Learning Stackelberg equilibria from bandit feedback with GP surrogates.

The leader prices, followers settle (approximately) into a Nash
equilibrium, the leader observes only its realized cost and picks the next
price by minimising a lower confidence bound of a Gaussian-process model.
"""

from .equilibrium import (
    DistanceToOracle,
    HarmonicStep,
    MaxIters,
    NeResult,
    NotConverged,
    OracleNotConverged,
    Residual,
    approx_ne,
    best_response,
    best_response_iteration,
    certify_epsilon_nash,
    ne_oracle,
    ne_oracle_batch,
    ne_residual,
)
from .gp_core import (
    DegenerateData,
    FactorizationFailed,
    GpState,
    HyperBounds,
    KernelSpec,
    append_observation,
    fit_hyperparameters,
    greedy_info_gain,
    kernel_eval,
    posterior,
)
from .harness import (
    ExperimentConfig,
    RoundRecord,
    certify_stackelberg,
    emit_outputs,
    reference_config,
    regret_baseline,
    run_experiment,
    run_sweep,
)
from .leader_learner import AcquisitionConfig, Fixed, Theoretical, beta, choose_next_price, surrogate_lcb
from .ridehail_game import (
    AllFleetsIdle,
    GameParams,
    RideHailGame,
    leader_cost,
    project_feasible,
    pseudogradient,
    reference_params,
    utility,
)

__version__ = "0.1.0"
