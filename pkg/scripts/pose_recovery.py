"""Absolute pose from a root-relative pose and its 2D keypoints.

The network gives the shape of the person but not where they stand. With the 2D
keypoints turned into normalized image coordinates (a, b) through the output camera,
the missing translation t satisfies, for every joint k,

    a_k (Z_k + t_z) = X_k + t_x        b_k (Z_k + t_z) = Y_k + t_y

which is linear in t: 2J equations, 3 unknowns, one weighted least-squares solve.
"""

from __future__ import annotations

import logging

import numpy as np

from .camera_models import CameraModel, normalized_coords_many
from .models import (FRAME_WORLD, DegenerateGeometryError, Extrinsics, Pose3D, Prediction,
                     check_rotation)

logger = logging.getLogger(__name__)

MIN_JOINTS = 3
# Above this the normal equations are not trusted and the pseudo-inverse takes over.
MAX_CONDITION = 1e12


def _system(pred: Prediction, output_cam: CameraModel):
    """Rows of the linear system, the right-hand side, and per-row weights."""
    coords, usable = normalized_coords_many(output_cam, pred.keypoints2d)
    weights = np.where(usable, pred.weights, 0.0)
    dropped = int((~usable & (pred.weights > 0)).sum())
    if dropped:
        logger.debug('Dropped %d keypoint(s) outside the %s output camera\'s domain',
                     dropped, output_cam.kind)

    joints = pred.rel_pose.joints
    a = np.nan_to_num(coords[:, 0])
    b = np.nan_to_num(coords[:, 1])
    count = len(joints)
    matrix = np.zeros((2 * count, 3))
    matrix[0::2, 0] = -1.0
    matrix[0::2, 2] = a
    matrix[1::2, 1] = -1.0
    matrix[1::2, 2] = b
    rhs = np.empty(2 * count)
    rhs[0::2] = joints[:, 0] - a * joints[:, 2]
    rhs[1::2] = joints[:, 1] - b * joints[:, 2]
    return matrix, rhs, np.repeat(weights, 2)


def recover_translation(pred: Prediction, output_cam: CameraModel) -> np.ndarray:
    """Translation (mm) that places `pred.rel_pose` on its keypoints."""
    matrix, rhs, row_weights = _system(pred, output_cam)
    usable = int((row_weights[0::2] > 0).sum())
    if usable < MIN_JOINTS:
        raise DegenerateGeometryError(f'only {usable} usable joint(s); '
                                      f'at least {MIN_JOINTS} are needed')

    root = np.sqrt(row_weights)
    weighted = matrix * root[:, None]
    target = rhs * root
    if np.linalg.matrix_rank(weighted) < 3:
        raise DegenerateGeometryError('keypoints give no depth information: all normalized '
                                      'coordinates coincide')

    normal = weighted.T @ weighted
    if np.linalg.cond(normal) > MAX_CONDITION:
        logger.debug('Ill-conditioned recovery (cond %.3g), using the pseudo-inverse',
                     np.linalg.cond(normal))
        return np.linalg.pinv(weighted) @ target
    return np.linalg.solve(normal, weighted.T @ target)


def translation_residual(pred: Prediction, output_cam: CameraModel,
                         translation: np.ndarray) -> float:
    """The weighted sum of squares that :func:`recover_translation` minimises."""
    matrix, rhs, row_weights = _system(pred, output_cam)
    residual = matrix @ np.asarray(translation, dtype=float) - rhs
    return float(np.sum(row_weights * residual ** 2))


def absolute_pose(rel_pose: Pose3D, translation: np.ndarray, crop_rotation: np.ndarray,
                  extrinsics: Extrinsics) -> Pose3D:
    """World-frame pose: undo the crop rotation, then place the camera in the world."""
    rotation = check_rotation(crop_rotation, tolerance=1e-6)
    in_camera = (rel_pose.joints + np.asarray(translation, dtype=float)) @ rotation
    return Pose3D(extrinsics.world_from_camera(in_camera), FRAME_WORLD)
