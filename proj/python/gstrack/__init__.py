# Copyright Contributors to the gstrack project
# SPDX-License-Identifier: Apache-2.0
"""Gaussian-splatting object reconstruction and 6-DoF pose tracking."""

from ._gstrack import (
    DataError,
    GaussianCloud,
    InitializationError,
    Intrinsics,
    Pose,
    chamfer,
    default_config_json,
    extrapolate_pose,
    gradcheck,
    load_sequence,
    loss,
    make_toy_object,
    pose_errors,
    render,
    rotation_distance,
    run_cli,
    spiral_trajectory,
    track_sequence,
)

__all__ = [
    "DataError",
    "GaussianCloud",
    "InitializationError",
    "Intrinsics",
    "Pose",
    "chamfer",
    "default_config_json",
    "extrapolate_pose",
    "gradcheck",
    "load_sequence",
    "loss",
    "make_toy_object",
    "pose_errors",
    "render",
    "rotation_distance",
    "run_cli",
    "spiral_trajectory",
    "track_sequence",
]
