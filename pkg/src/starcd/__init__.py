"""Single-temporal supervised change detection.

Learn a bitemporal change detector from unpaired segmentation data by
re-pairing mini-batches with fixed-point-free permutations and labeling
change as the xor of the two semantic masks. Ships a reference
encoder-decoder backbone plus the ChangeMixin change head, a
post-classification comparison baseline, a synthetic scene generator, and
an IoU/F1 evaluation harness.
"""

from .data import (
    AugmentationConfig,
    BitemporalSample,
    Sample,
    SyntheticSceneSpec,
    augment,
    augment_bitemporal,
    generate_synthetic,
    load_bitemporal,
    load_single_temporal,
    save_bitemporal,
    save_single_temporal,
)
from .errors import (
    ConfigError,
    ContractError,
    IngestionError,
    InvalidBatchError,
    StarcdError,
    TrainingDivergedError,
)
from .evaluation import (
    ConfusionCounts,
    accumulate,
    compare_report,
    evaluate_change,
    f1,
    iou,
    render_error_map,
    sliding_window_predict,
)
from .losses import LossBreakdown, bce, seg_loss, symmetry_change_loss, total_loss
from .model import (
    BackboneContract,
    ChangeMixin,
    ChangeMixinConfig,
    ChangeStar,
    ChangeStarOutput,
    FeatureMap,
    ReferenceBackbone,
    build_reference_backbone,
    change_probability,
    count_parameters,
    load_checkpoint,
    pcc_predict,
    save_checkpoint,
    temporal_swap,
)
from .pairing import (
    Derangement,
    PseudoPairBatch,
    assign_change_labels,
    make_pseudo_pair_batch,
    sample_derangement,
)
from .training import (
    TrainConfig,
    TrainResult,
    build_default_model,
    poly_lr,
    train_bitemporal,
    train_star,
)

__version__ = "0.1.0"
