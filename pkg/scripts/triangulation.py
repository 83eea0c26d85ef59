"""Multi-view triangulation of skeletons across mixed camera models.

Each joint is found by a nonlinear least-squares fit of its reprojection into every
view that saw it, so a pinhole and a fisheye in the same rig are handled alike through
their own projection functions. Residuals are scaled by keypoint confidence and passed
through a Huber loss, which keeps a single wrong detection from dragging the joint.

A skeleton is solved joint by joint first. With a symmetry weight above zero the
joints are then refined together with one extra residual per left/right bone pair,
pulling the two lengths towards each other. Joints seen by fewer than two views, and
both ends of any bone whose length is implausible, come back flagged invalid.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from .camera_models import (CameraModel, camera_from_dict, camera_to_dict, project_raw,
                            unproject_many)
from .models import (FRAME_WORLD, ConfigError, DegenerateGeometryError, Extrinsics, GeometryError,
                     Pose3D)
from .paths import data_file

logger = logging.getLogger(__name__)

HUBER_DELTA_PX = 2.0
# Stop once a step is below about 1e-9 mm: xtol is relative, and 1e-12 of a joint a few
# metres away is a few 1e-9 mm. MINPACK budgets evaluations rather than iterations,
# rejected trial steps included, so 200 evaluations cover the 50-iteration limit.
MAX_EVALUATIONS = 200
TOLERANCE = 1e-12
# Relative step of the central-difference Jacobian.
JACOBIAN_STEP = 1e-6
# Stands in for the pixel error of a trial point the camera cannot see at all.
OUT_OF_DOMAIN_PX = 1e4
MIN_BASELINE_MM = 1e-6

FLAG_FEW_VIEWS = 'too few views'
FLAG_NO_PARALLAX = 'no parallax'
FLAG_BONE_LENGTH = 'implausible bone length'


# ------------------------------------------------------------------ topology

@dataclass(frozen=True)
class SkeletonTopology:
    """Joint names, bones as joint-index pairs, and which bones mirror each other."""

    joint_names: Tuple[str, ...]
    bones: Tuple[Tuple[int, int], ...]
    bone_ranges: Tuple[Tuple[float, float], ...]
    symmetric_pairs: Tuple[Tuple[int, int], ...] = ()
    root: int = 0

    def __post_init__(self) -> None:
        count = len(self.joint_names)
        if count == 0:
            raise ConfigError('a skeleton needs at least one joint')
        if len(self.bone_ranges) != len(self.bones):
            raise ConfigError('every bone needs a plausible length range')
        for a, b in self.bones:
            if not (0 <= a < count and 0 <= b < count) or a == b:
                raise ConfigError(f'bone ({a}, {b}) does not join two of {count} joints')
        for low, high in self.bone_ranges:
            if not 0 <= low <= high:
                raise ConfigError(f'bone length range [{low}, {high}] is empty')
        for left, right in self.symmetric_pairs:
            if left == right or not (0 <= left < len(self.bones) and 0 <= right < len(self.bones)):
                raise ConfigError(f'symmetric pair ({left}, {right}) must name two distinct bones')
        if not 0 <= self.root < count:
            raise ConfigError(f'root joint {self.root} outside the skeleton')

    @property
    def joint_count(self) -> int:
        return len(self.joint_names)

    def bone_lengths(self, joints: np.ndarray) -> np.ndarray:
        joints = np.asarray(joints, dtype=float)
        index = np.asarray(self.bones, dtype=int).reshape(-1, 2)
        return np.linalg.norm(joints[index[:, 0]] - joints[index[:, 1]], axis=1)

    def symmetry_gaps(self, joints: np.ndarray) -> np.ndarray:
        """|left - right| length for every symmetric pair, mm."""
        lengths = self.bone_lengths(joints)
        return np.array([abs(lengths[l] - lengths[r]) for l, r in self.symmetric_pairs])


def topology_from_dict(data: Dict[str, Any]) -> SkeletonTopology:
    try:
        bones = data['bones']
        return SkeletonTopology(
            joint_names=tuple(str(name) for name in data['joints']),
            bones=tuple((int(b['joints'][0]), int(b['joints'][1])) for b in bones),
            bone_ranges=tuple((float(b['range_mm'][0]), float(b['range_mm'][1])) for b in bones),
            symmetric_pairs=tuple((int(l), int(r)) for l, r in data.get('symmetric_pairs', [])),
            root=int(data.get('root', 0)),
        )
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise ConfigError(f'bad skeleton topology: {exc}') from exc


def load_topology(path: Path) -> SkeletonTopology:
    try:
        data = json.loads(Path(path).read_text(encoding='utf-8'))
    except (OSError, ValueError) as exc:
        raise ConfigError(f'could not read topology {path}: {exc}') from exc
    return topology_from_dict(data)


@lru_cache(maxsize=1)
def default_topology() -> SkeletonTopology:
    """The shipped 17-joint skeleton, pelvis as root."""
    return load_topology(data_file('skeleton17.json'))


# ------------------------------------------------------------------ rigs

@dataclass(eq=False)
class RigCamera:
    camera_id: str
    camera: CameraModel
    extrinsics: Extrinsics = field(default_factory=Extrinsics.identity)


def rig_from_dict(data: Dict[str, Any]) -> List[RigCamera]:
    """``{"cameras": [{"id", "camera": {...}, "extrinsics": {...}}]}``"""
    entries = data.get('cameras') if isinstance(data, dict) else None
    if not isinstance(entries, list) or not entries:
        raise ConfigError('rig must list at least one camera under "cameras"')
    rig = []
    for index, entry in enumerate(entries):
        camera_id = str(entry.get('id', f'cam{index}'))
        rig.append(RigCamera(camera_id, camera_from_dict(entry.get('camera')),
                             Extrinsics.from_dict(entry.get('extrinsics'))))
    if len({c.camera_id for c in rig}) != len(rig):
        raise ConfigError('camera ids in a rig must be unique')
    return rig


def rig_to_dict(rig: Sequence[RigCamera]) -> Dict[str, Any]:
    return {'cameras': [{'id': c.camera_id, 'camera': camera_to_dict(c.camera),
                         'extrinsics': c.extrinsics.to_dict()} for c in rig]}


def load_rig(path: Path) -> List[RigCamera]:
    try:
        data = json.loads(Path(path).read_text(encoding='utf-8'))
    except (OSError, ValueError) as exc:
        raise ConfigError(f'could not read rig {path}: {exc}') from exc
    return rig_from_dict(data)


# ------------------------------------------------------------------ observations

@dataclass(eq=False)
class ViewObservation:
    """One camera's 2D skeleton: J pixels, each with a confidence in [0, 1]."""

    camera: CameraModel
    extrinsics: Extrinsics
    keypoints2d: np.ndarray
    confidence: Optional[np.ndarray] = None
    camera_id: str = ''

    def __post_init__(self) -> None:
        self.keypoints2d = np.asarray(self.keypoints2d, dtype=float).reshape(-1, 2)
        if self.confidence is None:
            self.confidence = np.ones(len(self.keypoints2d))
        self.confidence = np.asarray(self.confidence, dtype=float).reshape(-1)
        if len(self.confidence) != len(self.keypoints2d):
            raise GeometryError('one confidence per keypoint is required')
        if np.any(~np.isfinite(self.confidence)) or np.any(self.confidence < 0) \
                or np.any(self.confidence > 1):
            raise GeometryError('keypoint confidences must lie in [0, 1]')

    def usable(self) -> np.ndarray:
        """Joints this view can contribute: confident, finite and unprojectable."""
        _, valid = unproject_many(self.camera, self.keypoints2d)
        return (self.confidence > 0) & valid

    def world_rays(self) -> Tuple[np.ndarray, np.ndarray]:
        """Ray origin (the camera centre) and unit world directions per keypoint."""
        rays, _ = unproject_many(self.camera, self.keypoints2d)
        return self.extrinsics.translation, rays @ self.extrinsics.rotation.T


@dataclass(eq=False)
class PointObservation:
    """One camera's view of a single point."""

    camera: CameraModel
    extrinsics: Extrinsics
    pixel: Sequence[float]
    confidence: float = 1.0

    def as_view(self) -> ViewObservation:
        return ViewObservation(self.camera, self.extrinsics, np.asarray(self.pixel, dtype=float),
                               np.array([self.confidence]))


class TriangulatedPoint(NamedTuple):
    position: np.ndarray
    converged: bool
    cost: float
    views: int


@dataclass(eq=False)
class SkeletonResult:
    """A world-frame skeleton and which of its joints can be trusted."""

    pose: Pose3D
    valid: np.ndarray
    flags: List[str]
    converged: bool
    cost: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {'pose': self.pose.to_list(), 'valid': self.valid.tolist(),
                'flags': list(self.flags), 'converged': bool(self.converged),
                'cost': float(self.cost)}


# ------------------------------------------------------------------ residuals

def huber_scale(norms: np.ndarray, delta: float) -> np.ndarray:
    """Factor that turns a squared residual n^2 into the Huber cost when squared."""
    norms = np.asarray(norms, dtype=float)
    with np.errstate(divide='ignore', invalid='ignore'):
        robust = np.sqrt(np.maximum(2.0 * delta * norms - delta * delta, 0.0)) / norms
    return np.where(norms <= delta, 1.0, robust)


def _reprojection_residuals(points: np.ndarray, views: Sequence[ViewObservation],
                            used: np.ndarray, delta: float) -> np.ndarray:
    """Stacked confidence-weighted, Huber-scaled pixel errors for every used pair."""
    parts = []
    for view, mask in zip(views, used):
        if not mask.any():
            continue
        in_camera = view.extrinsics.camera_from_world(points[mask])
        uv, domain = project_raw(view.camera, in_camera)
        diff = uv - view.keypoints2d[mask]
        bad = ~domain | ~np.all(np.isfinite(diff), axis=1)
        diff[bad] = OUT_OF_DOMAIN_PX
        diff *= view.confidence[mask][:, None]
        diff *= huber_scale(np.linalg.norm(diff, axis=1), delta)[:, None]
        parts.append(diff.ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def _central_jacobian(fun: Callable[[np.ndarray], np.ndarray]
                      ) -> Callable[[np.ndarray], np.ndarray]:
    def jacobian(x: np.ndarray) -> np.ndarray:
        columns = []
        for i in range(len(x)):
            step = JACOBIAN_STEP * max(abs(x[i]), 1.0)
            forward, backward = x.copy(), x.copy()
            forward[i] += step
            backward[i] -= step
            columns.append((fun(forward) - fun(backward)) / (2.0 * step))
        return np.stack(columns, axis=1)
    return jacobian


def _solve(fun: Callable[[np.ndarray], np.ndarray], x0: np.ndarray):
    """Levenberg-Marquardt from `x0`. Returns (x, converged, cost)."""
    result = optimize.least_squares(fun, x0, jac=_central_jacobian(fun), method='lm',
                                    xtol=TOLERANCE, ftol=TOLERANCE, gtol=TOLERANCE,
                                    max_nfev=MAX_EVALUATIONS)
    if result.status <= 0:
        logger.debug('Solver stopped without converging: %s', result.message)
    return result.x, bool(result.status > 0), float(result.cost)


# ------------------------------------------------------------------ initial guesses

def ray_midpoint(origin_a: np.ndarray, dir_a: np.ndarray, origin_b: np.ndarray,
                 dir_b: np.ndarray) -> Optional[np.ndarray]:
    """Midpoint of the shortest segment between two rays; None when they are parallel."""
    w0 = origin_a - origin_b
    b = float(dir_a @ dir_b)
    d = float(dir_a @ w0)
    e = float(dir_b @ w0)
    denom = 1.0 - b * b
    if denom < 1e-12:
        return None
    s = (b * e - d) / denom
    t = (e - b * d) / denom
    return (origin_a + s * dir_a + origin_b + t * dir_b) / 2.0


def ray_intersection(origins: np.ndarray, directions: np.ndarray,
                     weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Least-squares point nearest to every ray."""
    if weights is None:
        weights = np.ones(len(origins))
    matrix = np.zeros((3, 3))
    rhs = np.zeros(3)
    for origin, direction, weight in zip(origins, directions, weights):
        projector = np.eye(3) - np.outer(direction, direction)
        matrix += weight * projector
        rhs += weight * projector @ origin
    if np.linalg.matrix_rank(matrix) < 3:
        raise DegenerateGeometryError('rays are parallel; the point has no depth')
    return np.linalg.solve(matrix, rhs)


def _initial_point(origins: np.ndarray, directions: np.ndarray,
                   confidence: np.ndarray) -> np.ndarray:
    order = np.argsort(-confidence, kind='stable')
    first, second = order[0], order[1]
    guess = ray_midpoint(origins[first], directions[first], origins[second], directions[second])
    if guess is None:
        guess = ray_intersection(origins, directions, confidence)
    return guess


def _check_parallax(origins: np.ndarray) -> None:
    spread = np.linalg.norm(origins - origins[0], axis=1).max()
    if spread < MIN_BASELINE_MM:
        raise DegenerateGeometryError('every view shares one camera centre; no parallax')


# ------------------------------------------------------------------ points

def _triangulate_joint(views: Sequence[ViewObservation], joint: int,
                       delta: float) -> TriangulatedPoint:
    origins, directions, confidence = [], [], []
    for view in views:
        origin, rays = view.world_rays()
        origins.append(origin)
        directions.append(rays[joint])
        confidence.append(view.confidence[joint])
    origins, directions = np.array(origins), np.array(directions)
    _check_parallax(origins)
    x0 = _initial_point(origins, directions, np.array(confidence))

    used = np.zeros((len(views), len(views[0].keypoints2d)), dtype=bool)
    used[:, joint] = True

    def residuals(x: np.ndarray) -> np.ndarray:
        points = np.zeros((used.shape[1], 3))
        points[joint] = x
        return _reprojection_residuals(points, views, used, delta)

    position, converged, cost = _solve(residuals, x0)
    return TriangulatedPoint(position, converged, cost, len(views))


def triangulate_point(observations: Sequence[PointObservation],
                      huber_delta: float = HUBER_DELTA_PX) -> TriangulatedPoint:
    """World position (mm) of one point seen by two or more cameras."""
    views = [obs.as_view() for obs in observations]
    views = [view for view in views if view.usable()[0]]
    if len(views) < 2:
        raise DegenerateGeometryError(f'{len(views)} usable view(s); triangulation needs two')
    result = _triangulate_joint(views, 0, huber_delta)
    if not result.converged:
        logger.warning('Point triangulation did not converge (cost %.3g)', result.cost)
    return result


# ------------------------------------------------------------------ skeletons

def triangulate_skeleton(views: Sequence[ViewObservation], topology: SkeletonTopology,
                         lambda_sym: float = 1.0,
                         huber_delta: float = HUBER_DELTA_PX) -> SkeletonResult:
    """World-frame skeleton from every view, with per-joint validity flags."""
    if lambda_sym < 0:
        raise ConfigError(f'symmetry weight must be >= 0, got {lambda_sym}')
    count = topology.joint_count
    for view in views:
        if len(view.keypoints2d) != count:
            raise GeometryError(f'view {view.camera_id or "?"} has {len(view.keypoints2d)} '
                                f'keypoints for a {count}-joint skeleton')
    used = np.array([view.usable() for view in views]).reshape(len(views), count)

    positions = np.zeros((count, 3))
    solved = np.zeros(count, dtype=bool)
    flags = [''] * count
    converged = True
    cost = 0.0
    for joint in range(count):
        seen = np.flatnonzero(used[:, joint])
        if len(seen) < 2:
            flags[joint] = FLAG_FEW_VIEWS
            continue
        try:
            point = _triangulate_joint([views[i] for i in seen], joint, huber_delta)
        except DegenerateGeometryError:
            flags[joint] = FLAG_NO_PARALLAX
            continue
        positions[joint] = point.position
        solved[joint] = True
        converged &= point.converged
        cost += point.cost

    if not solved.any():
        raise DegenerateGeometryError('no joint was seen by two views with parallax')

    pairs = [(l, r) for l, r in topology.symmetric_pairs
             if solved[list(topology.bones[l])].all() and solved[list(topology.bones[r])].all()]
    if lambda_sym > 0 and pairs:
        positions, converged, cost = _refine_with_symmetry(
            positions, solved, views, used & solved, topology, pairs, lambda_sym, huber_delta)

    # Joints without an estimate sit at the centre of the rest, flagged.
    positions[~solved] = positions[solved].mean(axis=0)
    valid = solved.copy()
    lengths = topology.bone_lengths(positions)
    for index, ((a, b), (low, high)) in enumerate(zip(topology.bones, topology.bone_ranges)):
        if solved[a] and solved[b] and not low <= lengths[index] <= high:
            logger.debug('Bone %s-%s is %.0f mm, outside [%g, %g]', topology.joint_names[a],
                         topology.joint_names[b], lengths[index], low, high)
            for joint in (a, b):
                valid[joint] = False
                flags[joint] = flags[joint] or FLAG_BONE_LENGTH

    if not converged:
        logger.warning('Skeleton triangulation did not converge (cost %.3g)', cost)
    return SkeletonResult(Pose3D(positions, FRAME_WORLD), valid, flags, converged, cost)


def _refine_with_symmetry(positions: np.ndarray, solved: np.ndarray,
                          views: Sequence[ViewObservation], used: np.ndarray,
                          topology: SkeletonTopology, pairs: List[Tuple[int, int]],
                          lambda_sym: float, delta: float):
    weight = math.sqrt(lambda_sym)
    bones = np.asarray(topology.bones, dtype=int)
    left = np.array([l for l, _ in pairs])
    right = np.array([r for _, r in pairs])

    def residuals(x: np.ndarray) -> np.ndarray:
        points = positions.copy()
        points[solved] = x.reshape(-1, 3)
        reprojection = _reprojection_residuals(points, views, used, delta)
        lengths = np.linalg.norm(points[bones[:, 0]] - points[bones[:, 1]], axis=1)
        return np.concatenate([reprojection, weight * (lengths[left] - lengths[right])])

    x, converged, cost = _solve(residuals, positions[solved].ravel())
    refined = positions.copy()
    refined[solved] = x.reshape(-1, 3)
    return refined, converged, cost


# ------------------------------------------------------------------ detections files

def views_from_record(record: Dict[str, Any], rig: Dict[str, RigCamera]) -> List[ViewObservation]:
    """``{"id", "views": [{"camera", "keypoints", "confidence"?}]}`` to observations."""
    views = []
    for entry in record.get('views', []):
        camera_id = str(entry.get('camera', ''))
        if camera_id not in rig:
            raise ConfigError(f'detections name camera {camera_id!r}, which the rig lacks')
        placed = rig[camera_id]
        keypoints = np.array([[np.nan, np.nan] if k is None else k
                              for k in entry['keypoints']], dtype=float)
        views.append(ViewObservation(placed.camera, placed.extrinsics, keypoints,
                                     entry.get('confidence'), camera_id))
    return views
