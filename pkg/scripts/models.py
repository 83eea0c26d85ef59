"""Typed data model shared by every module.

Poses, boxes and camera placements are plain dataclasses over numpy arrays. Units are
fixed across the package: millimetres for anything in 3D, pixels for anything in an
image, radians inside the geometry code and degrees only where a person reads them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

# Projection kinds. PH and DS are the two the hybrid heuristic chooses between.
KIND_PH = 'PH'
KIND_EF = 'EF'
KIND_DS = 'DS'
KIND_CC = 'CC'
KIND_EC = 'EC'
KINDS = (KIND_PH, KIND_EF, KIND_DS, KIND_CC, KIND_EC)
KIND_HYBRID = 'H'

FRAME_CAMERA = 'camera'
FRAME_WORLD = 'world'


# ------------------------------------------------------------------ errors

class GeometryError(ValueError):
    """Base for everything the geometry code refuses to compute."""


class DomainError(GeometryError):
    """A point or pixel lies outside what a camera model can represent."""


class DegenerateGeometryError(GeometryError):
    """A system has no unique solution: no parallax, collinear columns, too few joints."""


class FovExceededError(GeometryError):
    """The requested output camera cannot show the whole bounding box."""


class ConfigError(GeometryError):
    """A camera, rig, topology or run file is malformed or out of range."""


class RecordSkipError(GeometryError):
    """Too many records were skipped or failed for a result to mean anything."""


# ------------------------------------------------------------------ poses

@dataclass(eq=False)
class Pose3D:
    """J joints in millimetres, in a named frame."""

    joints: np.ndarray
    frame: str = FRAME_CAMERA

    def __post_init__(self) -> None:
        self.joints = np.asarray(self.joints, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.joints)):
            raise GeometryError('pose contains non-finite coordinates')

    def __len__(self) -> int:
        return len(self.joints)

    def translated(self, offset: Sequence[float]) -> 'Pose3D':
        return Pose3D(self.joints + np.asarray(offset, dtype=float), self.frame)

    def to_list(self) -> List[List[float]]:
        return self.joints.tolist()


# ------------------------------------------------------------------ boxes

@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel rectangle in input image coordinates."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise GeometryError(f'empty bounding box {self.as_tuple()}')

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> 'BoundingBox':
        return cls(float(x), float(y), float(x) + float(w), float(y) + float(h))

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return self.x_min, self.y_min, self.x_max, self.y_max

    def as_xywh(self) -> List[float]:
        return [self.x_min, self.y_min, self.width, self.height]

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2])

    def side_midpoints(self) -> np.ndarray:
        """Top, bottom, left, right - the four points the crop zoom is fitted to."""
        cx, cy = self.center
        return np.array([[cx, self.y_min], [cx, self.y_max],
                         [self.x_min, cy], [self.x_max, cy]])

    def corners(self) -> np.ndarray:
        return np.array([[self.x_min, self.y_min], [self.x_max, self.y_min],
                         [self.x_max, self.y_max], [self.x_min, self.y_max]])

    def boundary_samples(self) -> np.ndarray:
        """Corners plus side midpoints."""
        return np.vstack([self.corners(), self.side_midpoints()])

    def scaled(self, factor: float) -> 'BoundingBox':
        """The same box grown (factor > 1) or shrunk about its centre."""
        cx, cy = self.center
        half_w, half_h = self.width * factor / 2, self.height * factor / 2
        return BoundingBox(cx - half_w, cy - half_h, cx + half_w, cy + half_h)

    def intersects(self, width: int, height: int) -> bool:
        return self.x_max > 0 and self.y_max > 0 and self.x_min < width and self.y_min < height


# ------------------------------------------------------------------ rotations and placement

def check_rotation(matrix: Any, tolerance: float = 1e-9) -> np.ndarray:
    """Return `matrix` as a 3x3 array, or raise unless it is a proper rotation."""
    rotation = np.asarray(matrix, dtype=float).reshape(3, 3)
    if not np.allclose(rotation.T @ rotation, np.eye(3), atol=tolerance):
        raise GeometryError('rotation is not orthonormal')
    if abs(np.linalg.det(rotation) - 1.0) > tolerance:
        raise GeometryError('rotation is a reflection')
    return rotation


@dataclass(eq=False)
class Extrinsics:
    """Where a camera sits: world-from-camera rotation and the camera centre in world mm."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        self.rotation = check_rotation(self.rotation, tolerance=1e-6)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)

    @classmethod
    def identity(cls) -> 'Extrinsics':
        return cls()

    def world_from_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def camera_from_world(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.translation) @ self.rotation

    def transformed(self, rotation: np.ndarray, offset: np.ndarray) -> 'Extrinsics':
        """This placement after moving the whole world by x -> rotation @ x + offset."""
        return Extrinsics(rotation @ self.rotation, rotation @ self.translation + offset)

    def to_dict(self) -> Dict[str, List[float]]:
        return {'rotation': self.rotation.reshape(-1).tolist(),
                'translation': self.translation.tolist()}

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> 'Extrinsics':
        if not data:
            return cls.identity()
        try:
            return cls(np.asarray(data['rotation'], dtype=float).reshape(3, 3),
                       np.asarray(data['translation'], dtype=float))
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f'bad extrinsics: {exc}') from exc


# ------------------------------------------------------------------ predictions and records

@dataclass(eq=False)
class Prediction:
    """What a pose network returns for one crop: root-relative 3D plus 2D keypoints."""

    rel_pose: Pose3D
    keypoints2d: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.keypoints2d = np.asarray(self.keypoints2d, dtype=float).reshape(-1, 2)
        if len(self.keypoints2d) != len(self.rel_pose):
            raise GeometryError(f'{len(self.rel_pose)} joints but '
                                f'{len(self.keypoints2d)} keypoints')
        if self.weights is None:
            self.weights = np.ones(len(self.rel_pose))
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(self.weights) != len(self.rel_pose):
            raise GeometryError('one weight per joint is required')
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise GeometryError('weights must be finite and non-negative')


@dataclass(eq=False)
class EvaluationRecord:
    """One person in one image: ground truth, prediction and how it was produced."""

    record_id: str
    gt_pose: Pose3D
    pred_pose: Pose3D
    mpja: float
    mbba: Optional[float] = None
    projection_used: str = ''
    camera_id: str = ''
    alpha_t: Optional[float] = None
    label: str = ''

    def __post_init__(self) -> None:
        if not self.label:
            self.label = self.projection_used
        if len(self.gt_pose) != len(self.pred_pose):
            raise GeometryError(f'{self.record_id}: ground truth has {len(self.gt_pose)} '
                                f'joints, prediction {len(self.pred_pose)}')


@dataclass
class MetricSummary:
    """Pooled metrics over a set of records. Empty sets carry None."""

    mpjpe_mm: Optional[float] = None
    a_mpjpe_mm: Optional[float] = None
    pck150_pct: Optional[float] = None
    a_pck150_pct: Optional[float] = None
    count: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {'mpjpe_mm': self.mpjpe_mm, 'a_mpjpe_mm': self.a_mpjpe_mm,
                'pck150_pct': self.pck150_pct, 'a_pck150_pct': self.a_pck150_pct,
                'count': self.count}
