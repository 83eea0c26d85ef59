"""The five projection models: pinhole, equidistant fisheye, double sphere, and the
central and equidistant cylindrical projections.

Every model is a fixed map from a camera-frame direction to a pixel, linear in the
focal lengths and the principal point, with a closed-form inverse. The array forms
(`project_many`, `unproject_many`) carry the maths; the scalar forms wrap them for
callers that hold a single point.

Two separate things can make a projection unusable, and both are reported:
``in_domain`` is the model's own limit (behind a pinhole, outside the double sphere's
valid cone, on a cylinder's axis), ``in_image`` is whether the pixel lands on the
sensor. Warping needs to tell them apart; everything else wants ``valid``, which is
both.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, NamedTuple, Tuple

import numpy as np

from .models import KIND_CC, KIND_DS, KIND_EC, KIND_EF, KIND_PH, KINDS, ConfigError, DomainError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Intrinsics:
    """Focal lengths and principal point in pixels, image size in whole pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigError(f'focal lengths must be positive, got {self.fx}, {self.fy}')
        if int(self.width) != self.width or int(self.height) != self.height \
                or self.width <= 0 or self.height <= 0:
            raise ConfigError(f'image size must be positive whole pixels, '
                              f'got {self.width}x{self.height}')
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ConfigError(f'principal point ({self.cx}, {self.cy}) lies outside '
                              f'the {self.width}x{self.height} image')


@dataclass(frozen=True)
class CameraModel:
    """One camera: its projection kind, intrinsics and, for DS only, xi and alpha."""

    kind: str
    intrinsics: Intrinsics
    ds_xi: float = 0.0
    ds_alpha: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f'unknown camera kind {self.kind!r}; expected one of {KINDS}')
        if self.kind == KIND_DS:
            if not 0.0 <= self.ds_alpha <= 1.0:
                raise ConfigError(f'double sphere alpha must lie in [0, 1], got {self.ds_alpha}')
            if self.ds_xi < 0.0:
                raise ConfigError(f'double sphere xi must be >= 0, got {self.ds_xi}')
        elif self.ds_xi or self.ds_alpha:
            raise ConfigError(f'{self.kind} cameras take no xi/alpha')

    @property
    def width(self) -> int:
        return int(self.intrinsics.width)

    @property
    def height(self) -> int:
        return int(self.intrinsics.height)

    def with_focal(self, fx: float, fy: float) -> 'CameraModel':
        return replace(self, intrinsics=replace(self.intrinsics, fx=fx, fy=fy))


class Pixel(NamedTuple):
    u: float
    v: float


class Ray(NamedTuple):
    x: float
    y: float
    z: float


class Projection(NamedTuple):
    pixel: Pixel
    valid: bool
    in_domain: bool


class Unprojection(NamedTuple):
    ray: Ray
    valid: bool


# ------------------------------------------------------------------ double sphere helpers

def _ds_w2(xi: float, alpha: float) -> float:
    """Cosine bound of the double sphere's projectable cone: valid iff z > -w2 * |p|."""
    w1 = alpha / (1.0 - alpha) if alpha <= 0.5 else (1.0 - alpha) / alpha
    return (w1 + xi) / math.sqrt(2.0 * w1 * xi + xi * xi + 1.0)


# ------------------------------------------------------------------ forward projection

def _normalised_projection(model: CameraModel, points: np.ndarray
                           ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Focal-free image coordinates (mx, my) and the model-domain mask.

    Pixels are ``f * m + c`` for every model, which is what lets the crop zoom be
    solved for in closed form.
    """
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    norm = np.linalg.norm(points, axis=1)
    nonzero = norm > 0

    with np.errstate(divide='ignore', invalid='ignore'):
        if model.kind == KIND_PH:
            domain = nonzero & (z > 0)
            mx, my = x / z, y / z
        elif model.kind == KIND_EF:
            radial = np.hypot(x, y)
            theta = np.arctan2(radial, z)
            # The negative optical axis has no azimuth, so it has no pixel either
            # (the EF domain decision in DESIGN.md).
            domain = nonzero & ~((radial == 0) & (z < 0))
            scale = np.where(radial > 0, theta / np.where(radial > 0, radial, 1.0), 0.0)
            mx, my = x * scale, y * scale
        elif model.kind == KIND_DS:
            xi, alpha = model.ds_xi, model.ds_alpha
            shifted = xi * norm + z
            d2 = np.sqrt(x * x + y * y + shifted * shifted)
            denom = alpha * d2 + (1.0 - alpha) * shifted
            domain = nonzero & (z > -_ds_w2(xi, alpha) * norm) & (denom > 0)
            mx, my = x / denom, y / denom
        elif model.kind == KIND_CC:
            horizontal = np.hypot(x, z)
            domain = horizontal > 0
            mx, my = np.arctan2(x, z), y / horizontal
        else:  # KIND_EC
            horizontal = np.hypot(x, z)
            domain = nonzero
            mx, my = np.arctan2(x, z), np.arctan2(y, horizontal)

    return mx, my, domain


def project_raw(model: CameraModel, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Pixels for (N, 3) points without blanking anything out of domain.

    Out-of-domain entries hold whatever the formula gives (possibly NaN). Solvers use
    this so a trial step that wanders out of domain still has a residual to judge.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    mx, my, domain = _normalised_projection(model, points)
    k = model.intrinsics
    uv = np.stack([k.fx * mx + k.cx, k.fy * my + k.cy], axis=1)
    return uv, domain


def in_image(model: CameraModel, uv: np.ndarray) -> np.ndarray:
    uv = np.atleast_2d(uv)
    with np.errstate(invalid='ignore'):
        return ((uv[:, 0] >= 0) & (uv[:, 0] < model.width)
                & (uv[:, 1] >= 0) & (uv[:, 1] < model.height))


def project_many(model: CameraModel, points: np.ndarray
                 ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project (N, 3) camera-frame points.

    Returns ``(uv, in_domain, valid)`` where ``valid`` also requires the pixel to land
    in the image. Out-of-domain rows of ``uv`` are NaN; the zero vector is simply out
    of domain here rather than an error.
    """
    uv, domain = project_raw(model, points)
    uv[~domain] = np.nan
    return uv, domain, in_image(model, uv) & domain


def project(model: CameraModel, point: Any) -> Projection:
    """Project one camera-frame point (mm). The zero vector is a DomainError."""
    point = np.asarray(point, dtype=float).reshape(3)
    if not np.any(point):
        raise DomainError('cannot project the zero vector')
    uv, domain, inside = project_many(model, point[None, :])
    return Projection(Pixel(float(uv[0, 0]), float(uv[0, 1])),
                      bool(inside[0]), bool(domain[0]))


# ------------------------------------------------------------------ unprojection

def unproject_many(model: CameraModel, uv: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Unit rays for (N, 2) pixels, and a validity mask. Invalid rows are NaN."""
    uv = np.atleast_2d(np.asarray(uv, dtype=float))
    k = model.intrinsics
    mx = (uv[:, 0] - k.cx) / k.fx
    my = (uv[:, 1] - k.cy) / k.fy
    finite = np.isfinite(mx) & np.isfinite(my)

    with np.errstate(divide='ignore', invalid='ignore'):
        if model.kind == KIND_PH:
            rays = np.stack([mx, my, np.ones_like(mx)], axis=1)
            valid = finite
        elif model.kind == KIND_EF:
            theta = np.hypot(mx, my)
            sin_over = np.where(theta > 0, np.sin(theta) / np.where(theta > 0, theta, 1.0), 1.0)
            rays = np.stack([mx * sin_over, my * sin_over, np.cos(theta)], axis=1)
            valid = finite & (theta < math.pi)
        elif model.kind == KIND_DS:
            rays, valid = _ds_unproject(model, mx, my)
            valid &= finite
        elif model.kind == KIND_CC:
            rays = np.stack([np.sin(mx), my, np.cos(mx)], axis=1)
            valid = finite & (np.abs(mx) <= math.pi)
        else:  # KIND_EC
            rays = np.stack([np.cos(my) * np.sin(mx), np.sin(my),
                             np.cos(my) * np.cos(mx)], axis=1)
            valid = finite & (np.abs(mx) <= math.pi) & (np.abs(my) <= math.pi / 2)

        rays = rays / np.linalg.norm(rays, axis=1, keepdims=True)
    valid &= np.all(np.isfinite(rays), axis=1)
    rays[~valid] = np.nan
    return rays, valid


def _ds_unproject(model: CameraModel, mx: np.ndarray, my: np.ndarray
                  ) -> Tuple[np.ndarray, np.ndarray]:
    """Closed-form double sphere inverse. No iteration."""
    xi, alpha = model.ds_xi, model.ds_alpha
    r2 = mx * mx + my * my
    if alpha > 0.5:
        valid = r2 <= 1.0 / (2.0 * alpha - 1.0)
    else:
        valid = np.ones_like(r2, dtype=bool)
    s = np.clip(1.0 - (2.0 * alpha - 1.0) * r2, 0.0, None)
    mz = (1.0 - alpha * alpha * r2) / (alpha * np.sqrt(s) + 1.0 - alpha)
    inner = mz * mz + (1.0 - xi * xi) * r2
    valid &= inner >= 0
    k = (mz * xi + np.sqrt(np.clip(inner, 0.0, None))) / (mz * mz + r2)
    rays = np.stack([k * mx, k * my, k * mz - xi], axis=1)
    # A pixel inside the disk can still invert to a direction the forward model
    # cannot reach when xi > 1; those do not round-trip and are refused.
    norm = np.linalg.norm(rays, axis=1)
    valid &= rays[:, 2] > -_ds_w2(xi, alpha) * norm
    return rays, valid


def unproject(model: CameraModel, pixel: Any) -> Unprojection:
    """Unit ray for one pixel. ``valid`` is False outside the invertible region."""
    uv = np.asarray(pixel, dtype=float).reshape(2)
    rays, valid = unproject_many(model, uv[None, :])
    return Unprojection(Ray(*(float(c) for c in rays[0])), bool(valid[0]))


def normalized_coords(model: CameraModel, pixel: Any) -> np.ndarray:
    """(x/z, y/z) of the unprojected ray - the input to strong-perspective recovery."""
    ray, valid = unproject(model, pixel)
    if not valid:
        raise DomainError(f'pixel {tuple(pixel)} lies outside the {model.kind} '
                          f'camera\'s invertible region')
    if ray.z <= 0:
        raise DomainError(f'pixel {tuple(pixel)} looks behind the camera plane')
    return np.array([ray.x / ray.z, ray.y / ray.z])


def normalized_coords_many(model: CameraModel, uv: np.ndarray
                           ) -> Tuple[np.ndarray, np.ndarray]:
    """Array form of :func:`normalized_coords`; unusable rows are masked, not raised."""
    rays, valid = unproject_many(model, uv)
    with np.errstate(divide='ignore', invalid='ignore'):
        usable = valid & (rays[:, 2] > 0)
        coords = rays[:, :2] / rays[:, 2:3]
    coords[~usable] = np.nan
    return coords, usable


# ------------------------------------------------------------------ extent

def max_fov_deg(model: CameraModel) -> float:
    """Widest horizontal angle the model can represent at all, ignoring image size."""
    if model.kind == KIND_PH:
        return 180.0
    if model.kind == KIND_DS:
        return 2.0 * math.degrees(math.acos(-min(1.0, _ds_w2(model.ds_xi, model.ds_alpha))))
    return 360.0


# ------------------------------------------------------------------ files

def camera_from_dict(data: Dict[str, Any]) -> CameraModel:
    """Build a camera from the JSON shape ``{"kind", "fx", "fy", "cx", "cy",
    "width", "height", "xi"?, "alpha"?}``."""
    if not isinstance(data, dict):
        raise ConfigError('camera must be a JSON object')
    kind = str(data.get('kind', '')).upper()
    if kind not in KINDS:
        raise ConfigError(f'unknown camera kind {data.get("kind")!r}')
    try:
        intrinsics = Intrinsics(float(data['fx']), float(data['fy']),
                                float(data['cx']), float(data['cy']),
                                int(data['width']), int(data['height']))
    except KeyError as exc:
        raise ConfigError(f'camera is missing {exc}') from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f'camera has a non-numeric field: {exc}') from exc
    try:
        xi, alpha = float(data.get('xi', 0.0)), float(data.get('alpha', 0.0))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f'camera has a non-numeric field: {exc}') from exc
    return CameraModel(kind, intrinsics, xi, alpha)


def camera_to_dict(model: CameraModel) -> Dict[str, Any]:
    k = model.intrinsics
    data: Dict[str, Any] = {'kind': model.kind, 'fx': k.fx, 'fy': k.fy, 'cx': k.cx,
                            'cy': k.cy, 'width': int(k.width), 'height': int(k.height)}
    if model.kind == KIND_DS:
        data['xi'] = model.ds_xi
        data['alpha'] = model.ds_alpha
    return data


def load_camera(path: Path) -> CameraModel:
    try:
        data = json.loads(Path(path).read_text(encoding='utf-8'))
    except (OSError, ValueError) as exc:
        raise ConfigError(f'could not read camera file {path}: {exc}') from exc
    camera = camera_from_dict(data)
    logger.debug('Loaded %s camera from %s', camera.kind, path)
    return camera
