"""Virtual output cameras aimed at a person, and the backward warp into them.

A crop is made in three steps. The output camera is turned to look at the centre of
the bounding box (`look_at_rotation`), its focal length is chosen so the midpoints of
the box's four sides all land in the output image (`output_zoom`), and every output
pixel is then traced back through both cameras and sampled from the source image
(`warp_crop`).

Rotations are output-from-input: ``R @ ray_in`` is the same direction expressed in
the output camera.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from .camera_models import (CameraModel, Intrinsics, project_many, project_raw, unproject,
                            unproject_many)
from .models import (KIND_DS, KIND_PH, BoundingBox, DegenerateGeometryError, DomainError,
                     FovExceededError, GeometryError, check_rotation)

logger = logging.getLogger(__name__)

DEFAULT_CROP_SIZE = 256
ZOOM_MARGIN = 0.95

# Output double sphere parameters when the caller does not choose any. Wide enough
# that no box a fisheye can see falls outside it.
DEFAULT_OUT_XI = 0.5
DEFAULT_OUT_ALPHA = 0.6


@dataclass(eq=False)
class ImageBuffer:
    """8-bit image, (height, width, channels), channels 1 or 3."""

    pixels: np.ndarray

    def __post_init__(self) -> None:
        pixels = np.asarray(self.pixels)
        if pixels.ndim == 2:
            pixels = pixels[:, :, None]
        if pixels.ndim != 3 or pixels.shape[2] not in (1, 3):
            raise GeometryError(f'image must have 1 or 3 channels, got shape {pixels.shape}')
        self.pixels = np.ascontiguousarray(pixels, dtype=np.uint8)

    @classmethod
    def blank(cls, width: int, height: int, channels: int = 3) -> 'ImageBuffer':
        return cls(np.zeros((height, width, channels), dtype=np.uint8))

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def channels(self) -> int:
        return int(self.pixels.shape[2])


@dataclass(eq=False)
class VirtualCrop:
    """An output camera, its rotation from the input camera, and the warped image."""

    output_camera: CameraModel
    rotation: np.ndarray
    image: Optional[ImageBuffer] = None

    def __post_init__(self) -> None:
        self.rotation = check_rotation(self.rotation)
        if self.image is not None and (self.image.width, self.image.height) != \
                (self.output_camera.width, self.output_camera.height):
            raise GeometryError('crop image and output camera differ in size')


# ------------------------------------------------------------------ aiming

def look_at_rotation(input_cam: CameraModel, bbox: BoundingBox) -> np.ndarray:
    """Rotation that turns the bbox-centre ray onto the output optical axis.

    Roll is fixed by keeping the output x-axis as close as possible to the input
    x-axis (Gram-Schmidt against the new z-axis), so people stay upright.
    """
    ray, valid = unproject(input_cam, bbox.center)
    if not valid:
        raise DomainError(f'bounding box centre {tuple(bbox.center)} is outside the '
                          f'{input_cam.kind} camera\'s invertible region')
    z_axis = np.asarray(ray, dtype=float)
    x_axis = np.array([1.0, 0.0, 0.0]) - z_axis[0] * z_axis
    if np.linalg.norm(x_axis) < 1e-9:
        # Looking straight along the input x-axis; keep y instead.
        y_axis = np.array([0.0, 1.0, 0.0]) - z_axis[1] * z_axis
        y_axis /= np.linalg.norm(y_axis)
        x_axis = np.cross(y_axis, z_axis)
    else:
        x_axis /= np.linalg.norm(x_axis)
        y_axis = np.cross(z_axis, x_axis)
    return np.vstack([x_axis, y_axis, z_axis])


# ------------------------------------------------------------------ zoom

def _unit_camera(out_kind: str, out_size: int, xi: float, alpha: float) -> CameraModel:
    centre = out_size / 2.0
    intrinsics = Intrinsics(1.0, 1.0, centre, centre, out_size, out_size)
    if out_kind == KIND_DS:
        return CameraModel(out_kind, intrinsics, xi, alpha)
    return CameraModel(out_kind, intrinsics)


def output_zoom(input_cam: CameraModel, bbox: BoundingBox, rotation: np.ndarray,
                out_kind: str, out_size: int = DEFAULT_CROP_SIZE,
                margin: float = ZOOM_MARGIN, out_xi: float = DEFAULT_OUT_XI,
                out_alpha: float = DEFAULT_OUT_ALPHA) -> CameraModel:
    """Output camera of `out_kind`, centred, zoomed so the side midpoints fit.

    The focal length is the largest for which all four rotated side-midpoint rays land
    inside ``[0, out_size)``, times `margin`. fx and fy move together.
    """
    rotation = check_rotation(rotation)
    rays, valid = unproject_many(input_cam, bbox.side_midpoints())
    if not np.all(valid):
        raise DomainError('a bounding box side midpoint is outside the input camera\'s '
                          'invertible region')
    out_rays = rays @ rotation.T
    if out_kind == KIND_PH and np.any(out_rays[:, 2] <= 0):
        raise FovExceededError('bbox exceeds pinhole FOV')

    unit = _unit_camera(out_kind, out_size, out_xi, out_alpha)
    uv, domain = project_raw(unit, out_rays)
    if not np.all(domain):
        raise FovExceededError(f'bbox exceeds {out_kind} FOV')
    offsets = np.abs(uv - out_size / 2.0)
    extent = float(offsets.max())
    if extent <= 0:
        raise DegenerateGeometryError('bounding box side midpoints coincide')

    focal = margin * (out_size / 2.0) / extent
    return CameraModel(unit.kind, Intrinsics(focal, focal, out_size / 2.0, out_size / 2.0,
                                             out_size, out_size),
                       unit.ds_xi, unit.ds_alpha)


# ------------------------------------------------------------------ warping

def backward_map(input_cam: CameraModel, output_cam: CameraModel, rotation: np.ndarray,
                 uv_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Source pixel for each output pixel, and whether the trace stayed in domain."""
    rays, valid = unproject_many(output_cam, uv_out)
    rays_in = rays @ np.asarray(rotation)       # R^T applied to row vectors
    uv_in, in_domain = project_raw(input_cam, np.nan_to_num(rays_in))
    valid = valid & in_domain
    uv_in[~valid] = np.nan
    return uv_in, valid


def _pixel_grid(width: int, height: int) -> np.ndarray:
    u, v = np.meshgrid(np.arange(width, dtype=float), np.arange(height, dtype=float))
    return np.stack([u.ravel(), v.ravel()], axis=1)


def warp_crop(src: ImageBuffer, input_cam: CameraModel, crop: VirtualCrop) -> ImageBuffer:
    """Render `crop`'s view of `src`: bilinear samples, black wherever nothing maps."""
    out = crop.output_camera
    uv_in, valid = backward_map(input_cam, out, crop.rotation, _pixel_grid(out.width, out.height))
    # A sample counts as inside the source while it falls on a pixel's footprint.
    inside = valid & (uv_in[:, 0] >= -0.5) & (uv_in[:, 0] <= src.width - 0.5) \
        & (uv_in[:, 1] >= -0.5) & (uv_in[:, 1] <= src.height - 0.5)
    coords = np.nan_to_num(np.stack([uv_in[:, 1], uv_in[:, 0]]))

    result = np.zeros((out.height * out.width, src.channels), dtype=float)
    for channel in range(src.channels):
        result[:, channel] = ndimage.map_coordinates(
            src.pixels[:, :, channel].astype(float), coords, order=1, mode='nearest')
    result[~inside] = 0.0
    pixels = np.clip(np.rint(result), 0, 255).astype(np.uint8)
    logger.debug('Warped %dx%d crop, %.1f%% of pixels mapped', out.width, out.height,
                 100.0 * inside.mean())
    return ImageBuffer(pixels.reshape(out.height, out.width, src.channels))


# ------------------------------------------------------------------ composition

def make_crop(input_cam: CameraModel, bbox: BoundingBox, out_kind: str,
              out_size: int = DEFAULT_CROP_SIZE, src: Optional[ImageBuffer] = None,
              margin: float = ZOOM_MARGIN) -> VirtualCrop:
    """Aim, zoom and (given an image) warp in one call."""
    if not bbox.intersects(input_cam.width, input_cam.height):
        raise GeometryError(f'bounding box {bbox.as_tuple()} misses the input image')
    rotation = look_at_rotation(input_cam, bbox)
    camera = output_zoom(input_cam, bbox, rotation, out_kind, out_size, margin)
    crop = VirtualCrop(camera, rotation)
    if src is not None:
        crop.image = warp_crop(src, input_cam, crop)
    return crop


def zoom_factor(crop: VirtualCrop, input_cam: CameraModel) -> float:
    """Output focal length over input focal length."""
    return crop.output_camera.intrinsics.fx / input_cam.intrinsics.fx


def midpoints_in_crop(input_cam: CameraModel, bbox: BoundingBox, crop: VirtualCrop) -> bool:
    """True when every side midpoint projects validly into the crop image."""
    rays, valid = unproject_many(input_cam, bbox.side_midpoints())
    _, _, inside = project_many(crop.output_camera, rays @ crop.rotation.T)
    return bool(np.all(valid) and np.all(inside))
