"""popforge: population-based TD3 training with mixed first/second-order optimizers."""

from .curvature import (
    CholeskyFailure,
    DiagCurvature,
    KroneckerBlocks,
    damped_newton_step,
    diag_ggn,
    empirical_fisher_diag,
    kfac_factors,
    kron_precondition,
)
from .envs import PendulumEnv, PointMassEnv, make_env
from .nets import BackwardCapture, Layer, NetworkParams, backward, flatten, forward, unflatten
from .optim import (
    AdamState,
    HyperparamSet,
    OptimizerKind,
    SamplingBand,
    adam_step,
    perturb,
    sample_hyperparams,
)
from .pbt import (
    PopulationConfig,
    PopulationMember,
    TransferMode,
    exploit,
    gradient_schedule,
    rank,
    run_interval,
    run_pbt,
    transfer,
)
from .td3 import ReplayBuffer, TD3Agent, evaluate, make_agent, select_action, td3_update

__version__ = "0.1.0"
