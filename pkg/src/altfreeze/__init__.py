"""Alternating spatial/temporal weight freezing on a synthetic forgery benchmark."""

from .augment import (
    StandardAugs,
    clip_blend,
    perturb,
    random_mask,
    standard_augs,
    temporal_dropout,
    temporal_repeat,
)
from .config import AppConfig, ConfigError, parse_config, parse_config_text
from .data import (
    ClipDataset,
    DatasetSpec,
    build_spatial_set,
    build_temporal_set,
    build_training_set,
    build_validation_set,
    gen_real_clip,
)
from .metrics import EvalReport, auc, run_eval, video_score
from .model import (
    BlockSpec,
    Model,
    ModelSpec,
    NamedParam,
    StemSpec,
    build_model,
    cam,
    reference_model_spec,
)
from .partition import ParamGroup, Partition, classify_param, partition
from .persist import (
    FileFormatError,
    load_checkpoint,
    load_dataset,
    restore_model,
    save_checkpoint,
    save_dataset,
)
from .tensor import Tensor, backward, finite_difference_grad, no_grad
from .trainer import (
    Phase,
    TrainConfig,
    Trainer,
    TrainingDivergedError,
    active_group,
    bce_loss,
    cosine_lr,
    sgd_step,
    train,
)

__version__ = "0.1.0"
