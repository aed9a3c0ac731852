"""Segmentation-aware arbitrary style transfer.

Segment a content image into per-object pieces and background, stylize each
piece independently with an attention-based transfer network, and recompose
the stylized pieces through their masks.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .compositor import (
    NetworkStylizer,
    PipelineRun,
    compare_grid,
    identity_stylizer,
    paste,
    run_pipeline,
    save_run,
)
from .config import PipelineConfig, resolve_config
from .errors import (
    BackendError,
    CheckpointError,
    ContractError,
    ImageFormatError,
    ManifestError,
    PipelineError,
    SegStyleError,
    TrainingDivergedError,
)
from .imaging import (
    BinaryMask,
    Image,
    InverseTransform,
    ResizePolicy,
    apply_inverse,
    load_image,
    load_mask_png,
    mask_apply,
    mask_complement,
    mask_to_rle,
    mask_union,
    resize_image,
    rle_to_mask,
    save_image,
    save_mask_png,
    to_power_of_two,
)
from .losses import LossWeights, content_loss, identity_losses, style_loss
from .net import (
    ArchitectureProfile,
    FeatureMap,
    StyleAttention,
    StyleTransferNet,
    attention_rearrange,
    encode,
    merge_and_decode,
    stylize,
)
from .segmentation import (
    InstanceMask,
    MaskRCNNBackend,
    PrecomputedManifestBackend,
    SegmentationResult,
    detect_instances,
    extract_pieces,
    load_manifest,
    resolve_overlaps,
    save_manifest,
)
from .train import LossBreakdown, StyleTrainer, run_training

__version__ = "0.1.0"
