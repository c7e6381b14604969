"""Learned-threshold pruning: soft-pruning math, training runs and sparse artifacts."""

from ._ltp import (
    ArtifactError,
    CheckpointError,
    ConfigError,
    checkpoint_info,
    compression_rate,
    evaluate_checkpoint,
    export_checkpoint,
    grad_v_wrt_tau,
    grad_v_wrt_w,
    hard_keep_count,
    lambda_value,
    normalize_config,
    per_layer_temperature,
    prune_run,
    read_artifact,
    sigma_T,
    soft_l0,
    soft_mask,
)

__all__ = [
    "ArtifactError",
    "CheckpointError",
    "ConfigError",
    "checkpoint_info",
    "compression_rate",
    "evaluate_checkpoint",
    "export_checkpoint",
    "grad_v_wrt_tau",
    "grad_v_wrt_w",
    "hard_keep_count",
    "lambda_value",
    "normalize_config",
    "per_layer_temperature",
    "prune_run",
    "read_artifact",
    "sigma_T",
    "soft_l0",
    "soft_mask",
]
