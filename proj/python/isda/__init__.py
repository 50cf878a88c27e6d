"""Desk-scale end-to-end instance segmentation with deformable attention."""

from ._isda import (
    CLASS_NAMES,
    NUM_CLASSES,
    Model,
    Prediction,
    bilinear_sample,
    bilinear_upsample2x,
    conv2d,
    coord_channels,
    generate_scene,
    group_norm,
    hungarian,
    rle_decode,
    rle_encode,
    soft_mask_iou,
)

__all__ = [
    "CLASS_NAMES",
    "NUM_CLASSES",
    "Model",
    "Prediction",
    "bilinear_sample",
    "bilinear_upsample2x",
    "conv2d",
    "coord_channels",
    "generate_scene",
    "group_norm",
    "hungarian",
    "rle_decode",
    "rle_encode",
    "soft_mask_iou",
]
