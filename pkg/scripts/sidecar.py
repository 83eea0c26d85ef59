"""Crop sidecars: the JSON written next to every warped crop.

A crop image on its own is just pixels. The sidecar records the output camera it was
rendered with and its rotation from the input camera, which is everything needed to
map a keypoint found in the crop back into the original view.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from .camera_models import CameraModel, camera_from_dict, camera_to_dict
from .crop_reprojection import VirtualCrop
from .models import BoundingBox, ConfigError
from .paths import atomic_write_text

logger = logging.getLogger(__name__)


def crop_metadata(crop: VirtualCrop, input_cam: CameraModel, bbox: BoundingBox,
                  extra: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    data = {
        'output_camera': camera_to_dict(crop.output_camera),
        'rotation': crop.rotation.reshape(-1).tolist(),
        'input_camera': camera_to_dict(input_cam),
        'bbox': bbox.as_xywh(),
        'zoom': crop.output_camera.intrinsics.fx / input_cam.intrinsics.fx,
    }
    if extra:
        data.update(extra)
    return data


def write_sidecar(path: Path, crop: VirtualCrop, input_cam: CameraModel, bbox: BoundingBox,
                  extra: Optional[Dict[str, Any]] = None) -> Optional[Path]:
    """Write the sidecar; a failed write is logged, not raised."""
    try:
        atomic_write_text(Path(path), json.dumps(crop_metadata(crop, input_cam, bbox, extra),
                                                 indent=2) + '\n')
    except OSError as exc:
        logger.warning('Could not write sidecar %s: %s', path, exc)
        return None
    return Path(path)


def read_sidecar(path: Path) -> VirtualCrop:
    """The crop description back, without its image."""
    try:
        data = json.loads(Path(path).read_text(encoding='utf-8'))
        return VirtualCrop(camera_from_dict(data['output_camera']),
                           np.asarray(data['rotation'], dtype=float).reshape(3, 3))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f'bad sidecar {path}: {exc}') from exc
