"""Risk-aware 2D navigation on noisy range sensing.

Pipeline: a synthetic world simulator with a biased range sensor feeds a
probabilistic worst-case clearance model; an empirical-MMD risk metric turns
its predictions into collision risk; a sampling-based MPC planner minimizes
goal cost plus risk; a benchmark harness compares training variants.
"""

from .dynamics import (
    ControlSequence,
    RobotState,
    Trajectory,
    clip_controls,
    rollout,
    sample_controls,
)
from .world import (
    BiasField,
    Box,
    Circle,
    NoiseModel,
    SensorConfig,
    World,
    estimated_scan,
    load_scenario,
    raycast_scan,
    save_scenario,
    standardize_cloud,
    true_clearance,
)
from .model import (
    ClearancePrediction,
    ModelParams,
    ObservationVector,
    PolarFeaturizer,
    RiskHeadParams,
    featurize,
    load_checkpoint,
    oracle_predict,
    predict,
    save_checkpoint,
)
from .risk import (
    chance_probability_oracle,
    draw_dirac_samples,
    empirical_mmd,
    laplacian_kernel,
    residual,
)
from .data import ClearanceDataset, TrainingSample, generate_dataset
from .training import (
    TrainConfig,
    TrainingDiverged,
    ce_loss,
    finite_difference_check,
    nll_loss,
    reparameterize,
    risk_head,
    train,
)
from .planner import PlannerConfig, PlanResult, PlanningError, mpc_step, plan, state_cost
from .bench import (
    DESK_NOISE,
    METHODS,
    BenchmarkReport,
    EpisodeConfig,
    EpisodeOutcome,
    SuiteConfig,
    emit_traces,
    make_clutter_world,
    replay_trajectory,
    run_benchmark,
    run_episode,
)

__version__ = "0.1.0"
