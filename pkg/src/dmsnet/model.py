"""Full binocular classifier assembly and its ablation registry.

The pipeline is: shared siamese backbone -> per-eye OSIM (independent
parameters per eye) -> CASFM -> parallel CCAM and CIAM -> head. The
head global-average-pools the fused map and both alignment outputs,
concatenates them, and applies dropout plus a single linear layer.

Every ablation row replaces its module with a smaller shape-compatible
stand-in (identity is impossible here because channel counts change, so
1x1 convolutions are used), which keeps every configuration's forward
signature identical while strictly shrinking the parameter count.
"""

from dataclasses import dataclass, field, replace

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import BACKBONES, build_backbone, extract_pair
from .casfm import CASFM
from .errors import ConfigError, LabelError, RegistryError
from .osim import OSIM
from .synergy import CCAM, CIAM, ConcatFuse

# Label vector order used everywhere: normal, diabetic retinopathy,
# glaucoma, cataract, age-related macular degeneration, hypertensive
# retinopathy, myopia, other.
CLASS_NAMES = ("N", "D", "G", "C", "A", "H", "M", "O")

TASK_MODES = ("multiclass", "multilabel")


@dataclass(frozen=True)
class AblationSpec:
    """Which modules to replace with pass-throughs; all-false is the full model."""

    disable_cafm: bool = False
    disable_ccam: bool = False
    disable_ciam: bool = False
    disable_casfm: bool = False
    disable_osim_left: bool = False
    disable_osim_right: bool = False


# Ordered as in the component study table; "all" keeps every module.
ABLATION_ROWS = {
    "wo_cafm": {"disable_cafm": True},
    "wo_ciam": {"disable_ciam": True},
    "wo_ccam": {"disable_ccam": True},
    "wo_casfm": {"disable_casfm": True},
    "wo_osim_left": {"disable_osim_left": True},
    "wo_osim_right": {"disable_osim_right": True},
    "wo_osim_all": {"disable_osim_left": True, "disable_osim_right": True},
    "all": {},
}


@dataclass(frozen=True)
class ModelConfig:
    backbone_name: str = "resnet152"
    pretrained: bool = False
    input_resolution: int = 224
    embedding_dim: int = 256
    heads: int = 4
    literal_pool_scale: bool = True
    task_mode: str = "multiclass"
    num_classes: int = 8
    dropout: float = 0.2
    dense_growth: int = 32
    ablation: AblationSpec = field(default_factory=AblationSpec)


def apply_ablation(cfg, row):
    """Return a copy of ``cfg`` with the named ablation row applied."""
    if row not in ABLATION_ROWS:
        known = ", ".join(ABLATION_ROWS)
        raise RegistryError(f"unknown ablation row '{row}' (available: {known})")
    return replace(cfg, ablation=AblationSpec(**ABLATION_ROWS[row]))


def validate_config(cfg):
    if cfg.backbone_name not in BACKBONES:
        known = ", ".join(sorted(BACKBONES))
        raise ConfigError(
            f"backbone_name '{cfg.backbone_name}' is not registered (available: {known})")
    if cfg.task_mode not in TASK_MODES:
        raise ConfigError(f"task_mode must be one of {TASK_MODES}, got '{cfg.task_mode}'")
    if cfg.num_classes < 2:
        raise ConfigError(f"num_classes must be at least 2, got {cfg.num_classes}")
    if not 0.0 <= cfg.dropout < 1.0:
        raise ConfigError(f"dropout must lie in [0, 1), got {cfg.dropout}")
    if cfg.embedding_dim % cfg.heads != 0:
        raise ConfigError(
            f"embedding_dim {cfg.embedding_dim} is not divisible by heads {cfg.heads}")
    if cfg.input_resolution < 32:
        raise ConfigError(f"input_resolution {cfg.input_resolution} is too small")


class CasfmBypass(nn.Module):
    """Shape-compatible stand-in for the fusion stage: per-eye 1x1
    projection to the embedding width plus concat fusion. No pooling,
    no attention; spatial size is preserved."""

    def __init__(self, in_channels, embed_dim):
        super().__init__()
        self.project_left = nn.Conv2d(in_channels, embed_dim, kernel_size=1)
        self.project_right = nn.Conv2d(in_channels, embed_dim, kernel_size=1)
        self.fuse = nn.Conv2d(2 * embed_dim, embed_dim, kernel_size=1)

    def forward(self, feat_left, feat_right):
        map_left = self.project_left(feat_left)
        map_right = self.project_right(feat_right)
        fused = self.fuse(torch.cat([map_left, map_right], dim=1))
        return fused, map_left, map_right


class DMSNet(nn.Module):
    """Dual-branch weight-sharing classifier for paired fundus images."""

    def __init__(self, cfg):
        super().__init__()
        validate_config(cfg)
        self.config = cfg
        self.backbone = build_backbone(cfg.backbone_name, cfg.pretrained,
                                       cfg.input_resolution)
        channels = self.backbone.out_channels
        half = channels // 2
        side = min(self.backbone.spatial_dims(cfg.input_resolution))
        if side < 4:
            raise ConfigError(
                f"input_resolution {cfg.input_resolution} leaves a {side}x{side} feature "
                f"map; the multi-scale block needs at least 4x4")

        ab = cfg.ablation
        self.osim_left = (nn.Conv2d(channels, half, kernel_size=1)
                          if ab.disable_osim_left else OSIM(channels))
        self.osim_right = (nn.Conv2d(channels, half, kernel_size=1)
                           if ab.disable_osim_right else OSIM(channels))

        embed = cfg.embedding_dim
        if ab.disable_casfm:
            self.casfm = CasfmBypass(half, embed)
        else:
            self.casfm = CASFM(half, embed_dim=embed, heads=cfg.heads,
                               literal_pool_scale=cfg.literal_pool_scale)

        use_cafm = not ab.disable_cafm
        self.ccam = (ConcatFuse(embed) if ab.disable_ccam
                     else CCAM(embed, cfg.heads, cfg.dense_growth, use_cafm=use_cafm))
        self.ciam = (ConcatFuse(embed) if ab.disable_ciam
                     else CIAM(embed, cfg.heads, cfg.dense_growth, use_cafm=use_cafm))

        self.dropout = nn.Dropout(cfg.dropout)
        self.classifier = nn.Linear(3 * embed, cfg.num_classes)

    def forward(self, left, right):
        feat_left, feat_right = extract_pair(self.backbone, left, right)
        feat_left = self.osim_left(feat_left)
        feat_right = self.osim_right(feat_right)
        fused, recal_left, recal_right = self.casfm(feat_left, feat_right)
        contrast = self.ccam(recal_left, recal_right)
        integrate = self.ciam(recal_left, recal_right)
        pooled = [F.adaptive_avg_pool2d(t, 1).flatten(1)
                  for t in (fused, contrast, integrate)]
        return self.classifier(self.dropout(torch.cat(pooled, dim=1)))


def build_model(cfg):
    """Validate the config and assemble the network."""
    return DMSNet(cfg)


def compute_loss(logits, labels, mode="multiclass"):
    """Classification loss for a batch of 8-dim indicator labels.

    multiclass: softmax cross-entropy against the single set indicator
    (uniform logits over k classes give ln k). multilabel: mean
    per-class binary cross-entropy with logits (all-zero logits give
    ln 2 regardless of the labels).
    """
    if logits.shape != labels.shape:
        raise LabelError(
            f"logits shape {tuple(logits.shape)} and labels shape "
            f"{tuple(labels.shape)} disagree")
    counts = labels.sum(dim=1)
    if mode == "multiclass":
        if not torch.all(counts == 1):
            raise LabelError("multiclass labels must have exactly one indicator set")
        return F.cross_entropy(logits, labels.argmax(dim=1))
    if mode == "multilabel":
        if not torch.all(counts >= 1):
            raise LabelError("multilabel labels must have at least one indicator set")
        return F.binary_cross_entropy_with_logits(logits, labels.float())
    raise ConfigError(f"task_mode must be one of {TASK_MODES}, got '{mode}'")


def trainable_parameter_count(module):
    return sum(p.numel() for p in module.parameters() if p.requires_grad)
