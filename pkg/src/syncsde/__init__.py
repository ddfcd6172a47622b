"""Synchronized multi-trajectory DDIM sampling with analytic score oracles."""

from .coupling import (
    CouplingRule,
    CouplingSpec,
    FinalSpec,
    LambdaSchedule,
    PlanEntry,
    TrajectoryPlan,
    coupling_gradient,
    finalize,
    inv_lambda,
    run_plan,
    sync_step,
    trajectory_rng,
)
from .errors import (
    ConfigError,
    EngineError,
    HandshakeError,
    PlanError,
    ProviderContractError,
    ScheduleError,
    ScoreModelError,
    ShapeError,
    SingularityError,
    TransportError,
)
from .grid import LatentGrid
from .masks import PrecisionMask, SoftMask, attention_soft_mask, reshape_mask, threshold_mask
from .protocol import ProviderClient, RemoteScoreModel, remote_epsilon, schedule_digest
from .schedule import (
    NoiseSchedule,
    ScheduleConfig,
    build_schedule,
    ddim_invert,
    ddim_sample,
    ddim_step,
    gamma,
    tweedie_estimate,
)
from .score import (
    AnalyticGmmModel,
    GaussianComponent,
    GmmSpec,
    ScoreModel,
    gmm_epsilon,
    gmm_log_density,
    gmm_log_marginal,
)
from .views import BinaryMask, ViewMap, apply, compose_phi, invert, transfer

__version__ = "0.1.0"
