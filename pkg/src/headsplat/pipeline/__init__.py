"""Training, migration, fitting, and editing workflows."""

from .config import DEFAULT_STEPS, STAGES, TrainConfig, apply_overrides
from .fit import (
    PHASE1_ITERS,
    PHASE1_LR,
    PHASE2_ITERS,
    PHASE2_LR,
    EditResult,
    FitResult,
    edit_expression,
    fit_expression_code,
    fit_image,
    interpolate_codes,
)
from .migrate import migrate_guide
from .train import (
    GAUSSIAN_TRAINED,
    GUIDE_TRAINED,
    canonical_landmark_mean,
    eval_probe_psnr,
    init_guide_store,
    model_config_for,
    naive_gaussian_store,
    probe_samples,
    render_rgb,
    train_gaussian,
    train_guide,
)

__all__ = [
    "DEFAULT_STEPS", "STAGES", "TrainConfig", "apply_overrides",
    "train_guide", "train_gaussian", "init_guide_store",
    "naive_gaussian_store", "canonical_landmark_mean", "model_config_for",
    "render_rgb", "eval_probe_psnr", "probe_samples",
    "GUIDE_TRAINED", "GAUSSIAN_TRAINED",
    "migrate_guide",
    "fit_image", "edit_expression", "fit_expression_code",
    "interpolate_codes",
    "FitResult", "EditResult",
    "PHASE1_ITERS", "PHASE1_LR", "PHASE2_ITERS", "PHASE2_LR",
]
