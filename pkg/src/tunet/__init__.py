"""Triplet-encoder UNet for bitemporal change detection."""

from .attention import ChannelAttention, SpatialAttention
from .backbone import (
    ConvBlock,
    Trunk,
    TrunkPlan,
    build_trunk,
    init_parameters,
    load_trunk_archive,
    max_pool,
    save_trunk_archive,
    trunk_to_archive,
)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .complexity import ComplexityReport, complexity_report, count_params, estimate_flops
from .data import (
    SplitManifest,
    TileFolder,
    TilePair,
    binarize_label,
    list_tiles,
    load_manifest,
    load_sample,
    normalize_image,
    read_tile,
    save_manifest,
    split_dataset,
    tile_grid,
    tile_pair,
    write_tiles,
)
from .decoder import Decoder, DecoderPlan
from .encoder import (
    EncoderOutput,
    SiameseEncoder,
    SingleEncoder,
    TripletEncoder,
    differential_image,
)
from .errors import (
    CheckpointError,
    ConfigurationError,
    IngestionError,
    ShapeError,
    TrainingAborted,
    ValidationError,
    WeightLoadError,
)
from .fusion import MBSSCA, PlainFusion
from .harness import (
    RunConfig,
    TrainResult,
    evaluate,
    evaluate_model,
    predict,
    render_map,
    threshold_mask,
    train,
)
from .losses import LossValue, dice_loss, sigmoid_bce, total_loss
from .metrics import (
    ConfusionCounts,
    MetricsReport,
    accumulate,
    compute_metrics,
    f1_score,
)
from .model import VARIANTS, BRANCHES, ChangeDetector, ModelConfig, build_variant

__version__ = "0.1.0"
