"""Python interface to the forward-backward occupancy engine."""

from fbocc._core import (
    CLASS_NAMES,
    FREE_CLASS,
    NUM_CLASSES,
    CameraModel,
    DepthBinSpec,
    RigidTransform,
    VoxelGridSpec,
    align_voxel_features,
    backward_project,
    bilinear_sample,
    compress_voxel_to_bev,
    confusion_matrix,
    decode,
    depth_ce,
    dice_loss,
    distance_aware_focal,
    ensemble,
    expand_bev_to_voxel,
    fuse,
    head_forward,
    iou_per_class,
    lift,
    lovasz_softmax,
    make_preset_scene,
    miou,
    project_ego_point,
    rasterize_scene,
    read_occupancy_gt,
    read_prediction,
    run_pipeline,
    scal_geo,
    scal_sem,
    search_weights,
    semantic2d_ce,
    splat,
    temporal_tta,
    transform_points,
    tta_flips,
    unproject_pixel,
    visibility_mask,
    write_occupancy_gt,
    write_prediction,
)

__all__ = [
    "CLASS_NAMES",
    "FREE_CLASS",
    "NUM_CLASSES",
    "CameraModel",
    "DepthBinSpec",
    "RigidTransform",
    "VoxelGridSpec",
    "align_voxel_features",
    "backward_project",
    "bilinear_sample",
    "compress_voxel_to_bev",
    "confusion_matrix",
    "decode",
    "depth_ce",
    "dice_loss",
    "distance_aware_focal",
    "ensemble",
    "expand_bev_to_voxel",
    "fuse",
    "head_forward",
    "iou_per_class",
    "lift",
    "lovasz_softmax",
    "make_preset_scene",
    "miou",
    "project_ego_point",
    "rasterize_scene",
    "read_occupancy_gt",
    "read_prediction",
    "run_pipeline",
    "scal_geo",
    "scal_sem",
    "search_weights",
    "semantic2d_ce",
    "splat",
    "temporal_tta",
    "transform_points",
    "tta_flips",
    "unproject_pixel",
    "visibility_mask",
    "write_occupancy_gt",
    "write_prediction",
]
