"""Evolving hexacopter bodies with per-body reinforcement-learned controllers.

The package couples a (mu + lambda) evolution strategy over six-arm drone
morphologies with a from-scratch PPO learner that trains a navigation
controller for every new body, plus the analysis metrics (genotypic
diversity, body symmetry, learning-curve descriptors) used to study how
evolution and learning interact.
"""

__version__ = "0.1.0"

from .constants import GRAVITY, PhysicalConstants
from .morphology import (
    ArmGene,
    Genotype,
    MutationConfig,
    Phenotype,
    RepairFailed,
    baseline_hexacopter,
    decode,
    load_genotype,
    mutate,
    random_genotype,
    repair,
    save_genotype,
)
from .hover import HoverResult, check_static_hover, verify_hover_solution
from .sim import DroneState, GimbalLock, NonFiniteState, euler_rate_matrix, rotation_matrix, step
from .tasks import (
    FitnessReport,
    Gate,
    TaskEnv,
    Track,
    evaluate_fitness,
    make_track,
    track_from_config,
)
from .learner import (
    NonFiniteLoss,
    Policy,
    PPOConfig,
    RewardTrace,
    RolloutBuffer,
    TrainResult,
    compute_gae,
    ppo_update,
    train,
)
from .evolution import (
    EvolutionConfig,
    EvolutionLog,
    Individual,
    InitExhausted,
    ResumeError,
    init_population,
    reproduce,
    run_evolution,
    select_mu_plus_lambda,
)
from .metrics import (
    LearningDescriptors,
    bilateral_symmetry,
    burn_in,
    central_symmetry,
    convergence,
    descriptors,
    diversity,
    edit_distance,
    hungarian,
    novelty,
    smooth_median,
)
from .config import ConfigError, ExperimentConfig, load_experiment_config

__all__ = [name for name in dir() if not name.startswith("_")]
