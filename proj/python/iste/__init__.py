"""Arbitrary-scale implicit super-resolution (C++ core)."""

from ._core import (
    MAX_SCALE,
    CheckpointError,
    ConfigError,
    IoError,
    Model,
    NonFiniteError,
    RangeError,
    ShapeError,
    bicubic_upscale,
    default_train_config,
    evaluate,
    evaluate_bicubic,
    file_hash,
    load_png,
    make_eval_pair,
    psnr,
    save_png,
    scaled_extent,
    ssim,
    synth_corpus,
    train,
)

__all__ = [
    "MAX_SCALE",
    "CheckpointError",
    "ConfigError",
    "IoError",
    "Model",
    "NonFiniteError",
    "RangeError",
    "ShapeError",
    "bicubic_upscale",
    "default_train_config",
    "evaluate",
    "evaluate_bicubic",
    "file_hash",
    "load_png",
    "make_eval_pair",
    "psnr",
    "save_png",
    "scaled_extent",
    "ssim",
    "synth_corpus",
    "train",
]
