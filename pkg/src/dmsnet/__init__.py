"""Dual-branch weight-sharing siamese classifier for paired fundus images."""

from .backbone import BACKBONES, Backbone, build_backbone, extract_pair
from .casfm import CASFM, flatten_tokens, unflatten_tokens
from .config import RunConfig, config_from_dict, config_to_dict, load_config
from .dataio import (
    PairedSample,
    SplitManifest,
    illumination_correct,
    load_odir_index,
    paired_cutmix,
    prepare_dataset,
    stratified_split,
)
from .metrics import (
    MetricsReport,
    auc_macro,
    classification_scores,
    cohen_kappa,
    confusion_matrix,
    evaluate_predictions,
)
from .model import (
    ABLATION_ROWS,
    CLASS_NAMES,
    AblationSpec,
    DMSNet,
    ModelConfig,
    apply_ablation,
    build_model,
    compute_loss,
)
from .osim import OSIM, global_branch, register_feature_block, spp_branch
from .synergy import CAFM, CCAM, CIAM

__version__ = "0.1.0"

__all__ = [
    "ABLATION_ROWS",
    "BACKBONES",
    "CAFM",
    "CASFM",
    "CCAM",
    "CIAM",
    "CLASS_NAMES",
    "AblationSpec",
    "Backbone",
    "DMSNet",
    "MetricsReport",
    "ModelConfig",
    "OSIM",
    "PairedSample",
    "RunConfig",
    "SplitManifest",
    "apply_ablation",
    "auc_macro",
    "build_backbone",
    "build_model",
    "classification_scores",
    "cohen_kappa",
    "compute_loss",
    "config_from_dict",
    "config_to_dict",
    "confusion_matrix",
    "evaluate_predictions",
    "extract_pair",
    "flatten_tokens",
    "global_branch",
    "illumination_correct",
    "load_config",
    "load_odir_index",
    "paired_cutmix",
    "prepare_dataset",
    "register_feature_block",
    "spp_branch",
    "stratified_split",
    "unflatten_tokens",
]
