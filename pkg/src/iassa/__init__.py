"""Model-agnostic saliency explanations for black-box image classifiers.

Iterative adaptive-sampling explanations guided by long-range parameter-free
spatial attention, a random-mask baseline, and a five-metric evaluation
harness, all against a scoring oracle reached in-process, over a child
process's standard streams, or over HTTP.
"""

from .attention import (
    AttentionOperator,
    FeatureLevels,
    FusedFeatures,
    adjust_saliency,
    affinity_attention,
    apply_attention,
    fuse_features,
)
from .engine import ExplainConfig, ExplanationResult, explain, explain_rise_baseline
from .errors import (
    ContractError,
    FormatError,
    NumericError,
    OracleError,
    ProtocolError,
    TransportError,
)
from .grid import (
    ImageTensor,
    SaliencyMap,
    gaussian_blur,
    load_image,
    load_saliency,
    minmax_normalize,
    resize_bilinear,
    save_saliency,
)
from .masking import (
    MaskSet,
    RegionMask,
    Schedule,
    adaptive_window_masks,
    har_threshold,
    random_rise_masks,
    schedule_at,
    sliding_window_masks,
)
from .metrics import (
    Curve,
    EvalReport,
    auc,
    deletion_curve,
    evaluate_saliency,
    f1_iou,
    insertion_curve,
    pixel_level,
    pointing_game,
)
from .oracle import (
    FeatureProvider,
    LinearProbeScorer,
    ScoringOracle,
    SubprocessTransport,
    HttpTransport,
    SyntheticPyramidProvider,
    SyntheticRegionScorer,
    WireOracle,
    verify_protocol,
)
from .saliency import aggregate, masked_image, merge_carry_forward

__version__ = "0.1.0"
