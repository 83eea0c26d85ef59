"""Synthetic scenes: a fisheye rig, people placed in it, and a geometric oracle.

The oracle stands in for a pose network. Given the crop a person was rendered into it
returns exactly what a perfect network would - the 2D keypoints in the crop and the
root-relative 3D pose in the crop camera's frame - optionally with Gaussian noise. Any
error left after recovery is therefore the geometry's, not a model's.

The world frame is the primary fisheye's camera frame: x right, y down, z forward.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .camera_models import CameraModel, Intrinsics, project_many
from .crop_reprojection import VirtualCrop
from .models import (FRAME_CAMERA, FRAME_WORLD, KIND_DS, KIND_PH, BoundingBox, ConfigError,
                     Extrinsics, GeometryError, Pose3D, Prediction)
from .paths import atomic_write_text
from .spatial_metrics import mpja, tight_bbox
from .triangulation import RigCamera, rig_from_dict, rig_to_dict

logger = logging.getLogger(__name__)

PRIMARY_ID = 'fisheye'
MAX_ATTEMPTS = 100_000
MIN_JOINT_DISTANCE_MM = 100.0

# Standing person, pelvis at the origin, arms hanging. Matches skeleton17.json.
TEMPLATE = np.array([
    [0, 0, 0],                                          # pelvis
    [-100, 0, 0], [-100, 430, 0], [-100, 840, 0],      # right hip, knee, ankle
    [100, 0, 0], [100, 430, 0], [100, 840, 0],         # left hip, knee, ankle
    [0, -230, 0], [0, -480, 0], [0, -580, 0], [0, -700, 0],  # spine, thorax, neck, head
    [160, -480, 0], [160, -200, 0], [160, 50, 0],      # left shoulder, elbow, wrist
    [-160, -480, 0], [-160, -200, 0], [-160, 50, 0],   # right shoulder, elbow, wrist
], dtype=float)

# (shoulder, elbow, wrist, outward sign along x)
_ARMS = ((11, 12, 13, 1.0), (14, 15, 16, -1.0))


# ------------------------------------------------------------------ the rig

def primary_camera() -> CameraModel:
    """A 1024 px double sphere fisheye whose image circle spans about 185 degrees."""
    return CameraModel(KIND_DS, Intrinsics(430.0, 430.0, 512.0, 512.0, 1024, 1024), 0.5, 0.6)


def look_at_extrinsics(centre: Sequence[float], target: Sequence[float]) -> Extrinsics:
    """Placement of a camera at `centre` looking at `target`, image y pointing down."""
    centre = np.asarray(centre, dtype=float)
    z_axis = np.asarray(target, dtype=float) - centre
    z_axis /= np.linalg.norm(z_axis)
    x_axis = np.cross([0.0, 1.0, 0.0], z_axis)
    if np.linalg.norm(x_axis) < 1e-9:
        raise GeometryError('a camera cannot look straight up or down')
    x_axis /= np.linalg.norm(x_axis)
    y_axis = np.cross(z_axis, x_axis)
    return Extrinsics(np.column_stack([x_axis, y_axis, z_axis]), centre)


def default_rig(auxiliary: int = 4, radius_mm: float = 4000.0,
                target: Sequence[float] = (0.0, 0.0, 2500.0)) -> List[RigCamera]:
    """The primary fisheye at the origin plus auxiliary cameras on a circle round `target`.

    Auxiliary cameras alternate pinhole and double sphere.
    """
    rig = [RigCamera(PRIMARY_ID, primary_camera(), Extrinsics.identity())]
    target = np.asarray(target, dtype=float)
    pinhole = CameraModel(KIND_PH, Intrinsics(600.0, 600.0, 640.0, 480.0, 1280, 960))
    for index in range(auxiliary):
        angle = 2.0 * math.pi * (index + 0.5) / auxiliary
        centre = target + radius_mm * np.array([math.sin(angle), -0.15, -math.cos(angle)])
        camera = pinhole if index % 2 == 0 else primary_camera()
        rig.append(RigCamera(f'aux{index}', camera, look_at_extrinsics(centre, target)))
    return rig


# ------------------------------------------------------------------ scenes

@dataclass(eq=False)
class SyntheticScene:
    rig: List[RigCamera]
    skeletons: List[Pose3D] = field(default_factory=list)
    seed: int = 0
    mpja_range: Tuple[float, float] = (0.0, 180.0)

    def camera(self, camera_id: str = PRIMARY_ID) -> RigCamera:
        for placed in self.rig:
            if placed.camera_id == camera_id:
                return placed
        raise ConfigError(f'scene has no camera {camera_id!r}')

    def to_dict(self) -> Dict[str, Any]:
        return {'seed': self.seed, 'mpja_range': list(self.mpja_range),
                'rig': rig_to_dict(self.rig),
                'skeletons': [pose.to_list() for pose in self.skeletons]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SyntheticScene':
        try:
            return cls(rig=rig_from_dict(data['rig']),
                       skeletons=[Pose3D(s, FRAME_WORLD) for s in data.get('skeletons', [])],
                       seed=int(data.get('seed', 0)),
                       mpja_range=tuple(data.get('mpja_range', (0.0, 180.0))))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f'bad scene: {exc}') from exc


def save_scene(scene: SyntheticScene, path: Path) -> None:
    atomic_write_text(Path(path), json.dumps(scene.to_dict(), sort_keys=True) + '\n')


def load_scene(path: Path) -> SyntheticScene:
    try:
        data = json.loads(Path(path).read_text(encoding='utf-8'))
    except (OSError, ValueError) as exc:
        raise ConfigError(f'could not read scene {path}: {exc}') from exc
    return SyntheticScene.from_dict(data)


def body_pose(rng: np.random.Generator) -> np.ndarray:
    """The template with random arm abduction and a random turn about the vertical."""
    joints = TEMPLATE.copy()
    for shoulder, elbow, wrist, outward in _ARMS:
        lift = rng.uniform(0.0, math.radians(160.0))
        for joint in (elbow, wrist):
            drop = joints[joint, 1] - joints[shoulder, 1]
            joints[joint, 0] = joints[shoulder, 0] + outward * drop * math.sin(lift)
            joints[joint, 1] = joints[shoulder, 1] + drop * math.cos(lift)
    yaw = rng.uniform(-math.pi, math.pi)
    c, s = math.cos(yaw), math.sin(yaw)
    return joints @ np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]).T


def _placement(rng: np.random.Generator) -> np.ndarray:
    off_axis = rng.uniform(0.0, math.radians(75.0))
    azimuth = rng.uniform(-math.pi, math.pi)
    distance = math.exp(rng.uniform(math.log(350.0), math.log(9000.0)))
    return distance * np.array([math.sin(off_axis) * math.cos(azimuth),
                                math.sin(off_axis) * math.sin(azimuth), math.cos(off_axis)])


def generate_scene(seed: int, n_skeletons: int,
                   mpja_range: Tuple[float, float] = (0.0, 180.0),
                   rig: Optional[List[RigCamera]] = None) -> SyntheticScene:
    """People placed at random until each one's MPJA, seen from the primary camera,
    falls in `mpja_range`. Deterministic for a given seed."""
    low, high = float(mpja_range[0]), float(mpja_range[1])
    if not 0.0 <= low <= high <= 180.0:
        raise ConfigError(f'MPJA range [{low}, {high}] must lie within [0, 180]')
    if n_skeletons < 0:
        raise ConfigError('skeleton count must be >= 0')
    rig = rig or default_rig()
    primary = rig[0]
    rng = np.random.default_rng(seed)

    skeletons: List[Pose3D] = []
    attempts = 0
    while len(skeletons) < n_skeletons:
        if attempts >= MAX_ATTEMPTS:
            raise GeometryError(f'no placement reached MPJA in [{low:g}, {high:g}] after '
                                f'{MAX_ATTEMPTS} attempts ({len(skeletons)} of '
                                f'{n_skeletons} placed)')
        attempts += 1
        world = body_pose(rng) + _placement(rng)
        in_camera = primary.extrinsics.camera_from_world(world)
        if np.linalg.norm(in_camera, axis=1).min() < MIN_JOINT_DISTANCE_MM:
            continue
        _, _, valid = project_many(primary.camera, in_camera)
        if not valid.all():
            continue
        if low <= mpja(Pose3D(in_camera, FRAME_CAMERA)) <= high:
            skeletons.append(Pose3D(world, FRAME_WORLD))

    logger.info('Placed %d skeleton(s) in %d attempt(s), seed %d', n_skeletons, attempts, seed)
    return SyntheticScene(rig, skeletons, seed, (low, high))


# ------------------------------------------------------------------ boxes and oracle

def person_bbox(pose: Pose3D, placed: RigCamera) -> BoundingBox:
    """The synthetic detector: hull of the projected joints, grown by 10%."""
    in_camera = placed.extrinsics.camera_from_world(pose.joints)
    uv, _, valid = project_many(placed.camera, in_camera)
    if not valid.any():
        raise GeometryError(f'no joint is visible to camera {placed.camera_id}')
    return tight_bbox(uv[valid])


def oracle_predict(scene: SyntheticScene, index: int, placed: RigCamera, crop: VirtualCrop,
                   sigma_2d: float = 0.0, sigma_3d: float = 0.0,
                   rng: Optional[np.random.Generator] = None) -> Prediction:
    """What a perfect network would output for skeleton `index` in `crop`.

    Joints the crop's camera cannot project get weight 0.
    """
    world = scene.skeletons[index].joints
    in_crop = placed.extrinsics.camera_from_world(world) @ crop.rotation.T
    uv, domain, _ = project_many(crop.output_camera, in_crop)
    if not domain.any():
        logger.debug('Skeleton %d lies wholly outside the %s crop camera', index,
                     crop.output_camera.kind)
    relative = in_crop - in_crop.mean(axis=0)
    if sigma_2d or sigma_3d:
        rng = rng or np.random.default_rng(scene.seed)
        uv = uv + rng.normal(0.0, sigma_2d, uv.shape)
        relative = relative + rng.normal(0.0, sigma_3d, relative.shape)
    return Prediction(Pose3D(relative, FRAME_CAMERA), np.nan_to_num(uv),
                      domain.astype(float))


def scene_detections(scene: SyntheticScene, sigma_2d: float = 0.0,
                     rng: Optional[np.random.Generator] = None) -> List[Dict[str, Any]]:
    """Per-person detections in every rig camera, in the triangulation input shape."""
    rng = rng or np.random.default_rng(scene.seed)
    records = []
    for index, pose in enumerate(scene.skeletons):
        views = []
        for placed in scene.rig:
            uv, _, valid = project_many(placed.camera,
                                        placed.extrinsics.camera_from_world(pose.joints))
            if sigma_2d:
                uv = uv + rng.normal(0.0, sigma_2d, uv.shape)
            views.append({'camera': placed.camera_id,
                          'keypoints': [row.tolist() if ok else None
                                        for row, ok in zip(uv, valid)],
                          'confidence': valid.astype(float).tolist()})
        records.append({'id': record_id(index), 'views': views})
    return records


def scene_ground_truth(scene: SyntheticScene, camera_id: str = PRIMARY_ID
                       ) -> List[Dict[str, Any]]:
    """Ground-truth lines for `evaluate`: world pose, camera placement and bbox."""
    placed = scene.camera(camera_id)
    records = []
    for index, pose in enumerate(scene.skeletons):
        record = {'id': record_id(index), 'pose': pose.to_list(), 'camera_id': camera_id,
                  'extrinsics': placed.extrinsics.to_dict()}
        try:
            record['bbox'] = person_bbox(pose, placed).as_xywh()
        except GeometryError:
            pass
        records.append(record)
    return records


def record_id(index: int) -> str:
    return f'person-{index:05d}'
