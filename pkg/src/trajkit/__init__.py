"""trajkit: lightweight multimodal vehicle-trajectory prediction.

Interpretable kinematic map priors, a GNN+attention social encoder, an
autoregressive temporal decoder, the full training objective, and parameter/
FLOP accounting — all on a small numpy autodiff core.
"""

from .scenario import (
    AgentTrack,
    Lane,
    LaneGraph,
    OBS_LEN,
    PRED_LEN,
    Scenario,
    SynthSpec,
    TargetFrame,
    generate_synthetic,
    parse_scenario,
    relative_displacements,
    serialize_scenario,
    to_target_frame,
)
from .kinematics import (
    KinematicState,
    Poly2Fit,
    ctra_distance,
    estimate_state,
    finite_difference_rates,
    fit_poly2,
    smooth_forgetting,
)
from .map_prior import (
    Centerline,
    CenterlinePrior,
    build_prior,
    candidate_centerlines,
    resample_cubic,
    sample_plausible_area,
    truncate_centerline,
)
from .predictor import (
    Batch,
    ModelConfig,
    PredictionSet,
    TrajectoryPredictor,
    count_flops,
    count_params,
    prepare_batch,
)
from .training import (
    AugmentPolicy,
    LossWeights,
    TrainConfig,
    augment,
    combined_loss,
    hard_mine,
    nll_loss,
    train,
    wta_hinge,
)
from .metrics import endpoint_error_stats, min_ade, min_fde

__version__ = "0.1.0"
