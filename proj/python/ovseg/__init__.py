"""Python bindings for the ovseg open-vocabulary segmentation library."""

from ._core import (
    Model,
    default_config,
    dice_loss,
    focal_loss,
    generate_scene,
    miou,
    partition_classes,
    plan_tiles,
    preset_names,
    ridge_r2,
)

__all__ = [
    "Model",
    "default_config",
    "dice_loss",
    "focal_loss",
    "generate_scene",
    "miou",
    "partition_classes",
    "plan_tiles",
    "preset_names",
    "ridge_r2",
]
