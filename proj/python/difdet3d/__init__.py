"""Diffusion-based 3D object detection: python surface over the C++ core."""

from ._core import (
    compute_ap,
    ddim_timesteps,
    focal_loss,
    giou_3d,
    hungarian_match,
    iou_3d,
    iou_bev,
    make_schedule,
    ota_assign,
    parse_kitti_label,
    selftest,
    voxel_grid_dims,
)

__all__ = [
    "compute_ap",
    "ddim_timesteps",
    "focal_loss",
    "giou_3d",
    "hungarian_match",
    "iou_3d",
    "iou_bev",
    "make_schedule",
    "ota_assign",
    "parse_kitti_label",
    "selftest",
    "voxel_grid_dims",
]
