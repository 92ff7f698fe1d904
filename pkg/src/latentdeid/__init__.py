"""Training-free face de-identification via latent direction optimization.

The package edits the bottleneck activation of a pretrained unconditional
diffusion model: an image is DDIM-inverted, a single edit direction is
optimized by gradient descent through the differentiable decode against
identity/attribute/mask losses, and the guided reverse process renders the
de-identified result.  A full metric suite (identity distance, detection,
attribute/pose/gaze preservation, nested harmonic-mean overall score)
mirrors the evaluation protocol the approach is benchmarked with.
"""

from .backends import DenoiserBackend, ToyDenoiser
from .diffusion import (
    LatentState,
    apply_edit,
    compute_gradient,
    ddim_invert,
    denoise_with_edit,
    reverse_step,
)
from .estimator import FaceDeidentifier
from .exceptions import (
    ConfigError,
    DegenerateDirectionError,
    DegenerateInputError,
    LatentDeidError,
    NumericalFailureError,
    ProviderError,
    ShapeMismatchError,
)
from .geometry import geodesic_angle, linear_edit, tangent_edit, tangent_project
from .imgio import load_image, save_image, validate_image
from .losses import (
    ATTRIBUTE_NAMES,
    LossWeights,
    attribute_index,
    attribute_loss,
    clamp_probs,
    identity_loss,
    mask_loss,
    resolve_attribute,
    total_loss,
)
from .metrics import (
    MetricsReport,
    PairScores,
    PCABasis,
    aggregate,
    evaluate_pair,
    fit_pca,
    hm,
    overall_from_columns,
    pca_project,
    rms_deviation,
    sid,
    threshold_score,
)
from .optimizer import (
    CSV_HEADER,
    OptimizationConfig,
    StepRecord,
    TrajectoryLog,
    initialize_direction,
    optimize,
    set_attribute_targets,
)
from .providers import (
    EMOTION_LABELS,
    GENDER_LABELS,
    AttributePredictor,
    EvalProviders,
    FaceParser,
    IdentityEmbedder,
    ProviderBundle,
    ToyAttributePredictor,
    ToyEvalProviders,
    ToyFaceParser,
    ToyIdentityEmbedder,
    make_providers,
    register_adapter,
    registered_adapters,
    toy_attribute_predictor,
    toy_eval_providers,
    toy_face_parser,
    toy_identity_embedder,
    toy_providers,
)
from .schedule import EditWindow, NoiseSchedule, discretize, transition_pairs

__version__ = "0.1.0"

__all__ = [
    "ATTRIBUTE_NAMES",
    "CSV_HEADER",
    "EMOTION_LABELS",
    "GENDER_LABELS",
    "AttributePredictor",
    "ConfigError",
    "DegenerateDirectionError",
    "DegenerateInputError",
    "DenoiserBackend",
    "EditWindow",
    "EvalProviders",
    "FaceDeidentifier",
    "FaceParser",
    "IdentityEmbedder",
    "LatentDeidError",
    "LatentState",
    "LossWeights",
    "MetricsReport",
    "NoiseSchedule",
    "NumericalFailureError",
    "OptimizationConfig",
    "PCABasis",
    "PairScores",
    "ProviderBundle",
    "ProviderError",
    "ShapeMismatchError",
    "StepRecord",
    "ToyAttributePredictor",
    "ToyDenoiser",
    "ToyEvalProviders",
    "ToyFaceParser",
    "ToyIdentityEmbedder",
    "TrajectoryLog",
    "aggregate",
    "apply_edit",
    "attribute_index",
    "attribute_loss",
    "clamp_probs",
    "compute_gradient",
    "ddim_invert",
    "denoise_with_edit",
    "discretize",
    "evaluate_pair",
    "fit_pca",
    "geodesic_angle",
    "hm",
    "identity_loss",
    "initialize_direction",
    "linear_edit",
    "load_image",
    "make_providers",
    "mask_loss",
    "optimize",
    "overall_from_columns",
    "pca_project",
    "register_adapter",
    "registered_adapters",
    "resolve_attribute",
    "reverse_step",
    "rms_deviation",
    "save_image",
    "set_attribute_targets",
    "sid",
    "tangent_edit",
    "tangent_project",
    "threshold_score",
    "total_loss",
    "toy_attribute_predictor",
    "toy_eval_providers",
    "toy_face_parser",
    "toy_identity_embedder",
    "toy_providers",
    "transition_pairs",
    "validate_image",
]
