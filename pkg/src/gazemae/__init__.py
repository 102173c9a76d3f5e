"""Gaze-weighted masked autoencoder pre-training and phase recognition for egocentric video.

The pipeline: load (or synthesize) gaze-annotated surgical video, render
per-frame gaze heatmaps, accumulate heatmap mass per space-time token,
sample masked tokens from a temperature softmax over that mass, pre-train
a video masked autoencoder on the masked reconstruction objective, then
fine-tune the encoder for 9-class phase recognition with rebalanced
sampling and macro-averaged metrics.
"""

from gazemae.data import (
    ClipParams,
    DatasetManifest,
    FrameRecord,
    SyntheticSpec,
    VideoClip,
    generate_synthetic_dataset,
    iter_batches,
    load_manifest,
    sample_clip,
)
from gazemae.gaze import GazeHeatmap, TokenGazeMass, accumulate_per_token, render_heatmap
from gazemae.masking import (
    MaskDistribution,
    MaskPlan,
    mask_plan_from_rle,
    mask_plan_to_rle,
    masking_distribution,
    sample_gaze_mask,
    sample_random_mask,
    sample_tube_mask,
    tokens_to_mask,
)
from gazemae.metrics import ConfusionMatrix, MacroScores, macro_scores
from gazemae.model import (
    ModelConfig,
    PhaseClassifier,
    PhasePrediction,
    PretrainModel,
    encoder_param_count,
    load_checkpoint,
    save_checkpoint,
)
from gazemae.pretrain import PretrainConfig, lr_at, pretrain, reconstruction_loss
from gazemae.finetune import FinetuneConfig, cross_entropy, finetune

__all__ = [
    "ClipParams",
    "ConfusionMatrix",
    "DatasetManifest",
    "FinetuneConfig",
    "FrameRecord",
    "GazeHeatmap",
    "MacroScores",
    "MaskDistribution",
    "MaskPlan",
    "ModelConfig",
    "PhaseClassifier",
    "PhasePrediction",
    "PretrainConfig",
    "PretrainModel",
    "SyntheticSpec",
    "TokenGazeMass",
    "VideoClip",
    "accumulate_per_token",
    "cross_entropy",
    "encoder_param_count",
    "finetune",
    "generate_synthetic_dataset",
    "iter_batches",
    "load_checkpoint",
    "load_manifest",
    "lr_at",
    "macro_scores",
    "mask_plan_from_rle",
    "mask_plan_to_rle",
    "masking_distribution",
    "pretrain",
    "reconstruction_loss",
    "render_heatmap",
    "sample_clip",
    "sample_gaze_mask",
    "sample_random_mask",
    "sample_tube_mask",
    "save_checkpoint",
    "tokens_to_mask",
]
