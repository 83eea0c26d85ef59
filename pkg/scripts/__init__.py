"""fishrepro: camera models, virtual crops, absolute pose recovery and evaluation."""

from .camera_models import CameraModel, Intrinsics, project, unproject
from .crop_reprojection import ImageBuffer, VirtualCrop, make_crop
from .models import (BoundingBox, DegenerateGeometryError, DomainError, EvaluationRecord,
                     Extrinsics, FovExceededError, GeometryError, Pose3D, Prediction)
from .settings import Settings, get_settings
from .utils import setup_logging

__all__ = [
    'BoundingBox',
    'CameraModel',
    'DegenerateGeometryError',
    'DomainError',
    'EvaluationRecord',
    'Extrinsics',
    'FovExceededError',
    'GeometryError',
    'ImageBuffer',
    'Intrinsics',
    'Pose3D',
    'Prediction',
    'Settings',
    'VirtualCrop',
    'get_settings',
    'make_crop',
    'project',
    'setup_logging',
    'unproject',
]
