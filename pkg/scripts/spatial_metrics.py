"""How much of the field of view a person takes up, and which projection that calls for.

MPJA is the widest angle between the camera rays to any two joints of a ground-truth
pose. MBBA is the same idea computed from a bounding box alone, so it is available at
inference time; the hybrid projection H uses it to choose PH below a threshold and DS
from the threshold up.
"""

from __future__ import annotations

import logging
import math
from typing import Iterable, List, NamedTuple, Sequence

import numpy as np
from scipy import stats

from .camera_models import CameraModel, unproject_many
from .models import KIND_DS, KIND_PH, BoundingBox, ConfigError, DomainError, GeometryError, Pose3D

logger = logging.getLogger(__name__)

DEFAULT_ALPHA_T = 110.0
DEFAULT_DILATION = 0.10


class ProjectionChoice(NamedTuple):
    kind: str
    threshold: float
    angle: float


class BoxAngle(NamedTuple):
    """MBBA in degrees, and how many boundary samples could not be unprojected."""

    degrees: float
    skipped: int


# ------------------------------------------------------------------ angles

def angle_between(a: Sequence[float], b: Sequence[float]) -> float:
    """Angle in radians, via atan2(|a x b|, a . b) so it stays accurate near 0 and 180."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return math.atan2(float(np.linalg.norm(np.cross(a, b))), float(np.dot(a, b)))


def max_pairwise_angle(vectors: np.ndarray) -> float:
    """Largest angle, in radians, between any two of the (N, 3) `vectors`."""
    vectors = np.asarray(vectors, dtype=float).reshape(-1, 3)
    if len(vectors) < 2:
        return 0.0
    cross = np.cross(vectors[:, None, :], vectors[None, :, :])
    sines = np.linalg.norm(cross, axis=2)
    cosines = np.einsum('ik,jk->ij', vectors, vectors)
    return float(np.arctan2(sines, cosines).max())


def mpja(pose: Pose3D) -> float:
    """Maximum pairwise joint angle, degrees, for a camera-frame pose."""
    joints = pose.joints
    if len(joints) < 2:
        raise GeometryError('MPJA needs at least two joints')
    if np.any(np.linalg.norm(joints, axis=1) == 0):
        raise DomainError('a joint sits exactly at the camera centre')
    return math.degrees(max_pairwise_angle(joints))


def mbba(bbox: BoundingBox, input_cam: CameraModel) -> BoxAngle:
    """Maximum bounding-box angle, degrees, from the four corners and side midpoints.

    Samples the camera cannot unproject are skipped and counted; if none survive the
    box has no angle at all.
    """
    rays, valid = unproject_many(input_cam, bbox.boundary_samples())
    skipped = int((~valid).sum())
    if not valid.any():
        raise DomainError(f'no point of bounding box {bbox.as_tuple()} unprojects under '
                          f'the {input_cam.kind} camera')
    if skipped:
        logger.warning('MBBA: %d of %d boundary samples of %s are outside the camera\'s '
                       'invertible region', skipped, len(valid), bbox.as_tuple())
    return BoxAngle(math.degrees(max_pairwise_angle(rays[valid])), skipped)


def comd(pose: Pose3D) -> float:
    """Mean joint distance to the camera centre, mm."""
    if len(pose) < 1:
        raise GeometryError('CoMD needs at least one joint')
    return float(np.linalg.norm(pose.joints, axis=1).mean())


# ------------------------------------------------------------------ the hybrid choice

def select_projection(angle: float, alpha_t: float = DEFAULT_ALPHA_T) -> ProjectionChoice:
    """PH strictly below `alpha_t`, DS at or above it."""
    if not 0.0 <= alpha_t <= 180.0:
        raise ConfigError(f'alpha_t must lie in [0, 180] degrees, got {alpha_t}')
    kind = KIND_PH if angle < alpha_t else KIND_DS
    return ProjectionChoice(kind, float(alpha_t), float(angle))


def choice_agreement(mpja_angles: Iterable[float], mbba_angles: Iterable[float],
                     alpha_t: float) -> float:
    """Share of records for which MPJA and MBBA pick the same projection."""
    pairs = list(zip(mpja_angles, mbba_angles))
    if not pairs:
        return float('nan')
    same = sum(select_projection(a, alpha_t).kind == select_projection(b, alpha_t).kind
               for a, b in pairs)
    return same / len(pairs)


# ------------------------------------------------------------------ distributions

def mpja_histogram(angles: Iterable[float], bin_width: float = 10.0) -> List[int]:
    """Counts per `bin_width` degrees over [0, 180]; 180 itself joins the last bin."""
    edges = np.arange(0.0, 180.0 + bin_width / 2, bin_width)
    if edges[-1] < 180.0:
        edges = np.append(edges, 180.0)
    counts, _ = np.histogram(np.asarray(list(angles), dtype=float), bins=edges)
    return counts.tolist()


def comd_mpja_correlation(poses: Sequence[Pose3D]) -> float:
    """Pearson r between CoMD and MPJA. Close people cover more of the view."""
    if len(poses) < 3:
        raise GeometryError('a correlation needs at least three poses')
    distances = [comd(pose) for pose in poses]
    angles = [mpja(pose) for pose in poses]
    r, _ = stats.pearsonr(distances, angles)
    return float(r)


# ------------------------------------------------------------------ boxes from joints

def tight_bbox(pixels: np.ndarray, dilation: float = DEFAULT_DILATION) -> BoundingBox:
    """Hull of `pixels` grown by `dilation` of its width and height, about its centre."""
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    pixels = pixels[np.all(np.isfinite(pixels), axis=1)]
    if len(pixels) == 0:
        raise GeometryError('no finite pixels to enclose')
    low, high = pixels.min(axis=0), pixels.max(axis=0)
    # A single point or a line still needs some area to aim at.
    span = np.maximum(high - low, 1.0)
    centre = (low + high) / 2
    half = span * (1.0 + dilation) / 2
    return BoundingBox(centre[0] - half[0], centre[1] - half[1],
                       centre[0] + half[0], centre[1] + half[1])
