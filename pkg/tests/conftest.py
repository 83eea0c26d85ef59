"""Shared fixtures: one camera of every kind, seeded randomness, a small synthetic scene."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from scripts.camera_models import CameraModel, Intrinsics  # noqa: E402
from scripts.models import KIND_CC, KIND_DS, KIND_EC, KIND_EF, KIND_PH  # noqa: E402
from scripts.settings import Settings  # noqa: E402


def make_camera(kind: str, f: float = 300.0, size: int = 640, xi: float = 0.0,
                alpha: float = 0.0) -> CameraModel:
    """A square camera with its principal point in the middle."""
    intrinsics = Intrinsics(f, f, size / 2.0, size / 2.0, size, size)
    if kind == KIND_DS:
        return CameraModel(kind, intrinsics, xi, alpha)
    return CameraModel(kind, intrinsics)


def fisheye(f: float = 430.0, size: int = 1024) -> CameraModel:
    """The wide double sphere every fisheye test looks through."""
    return make_camera(KIND_DS, f, size, xi=0.5, alpha=0.6)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240607)


@pytest.fixture(params=[KIND_PH, KIND_EF, KIND_DS, KIND_CC, KIND_EC])
def camera(request) -> CameraModel:
    """One camera per projection kind."""
    if request.param == KIND_DS:
        return make_camera(KIND_DS, 250.0, 640, xi=0.8, alpha=0.55)
    return make_camera(request.param, 250.0 if request.param != KIND_PH else 400.0)


@pytest.fixture
def fisheye_camera() -> CameraModel:
    return fisheye()


@pytest.fixture
def settings(tmp_path: Path, monkeypatch) -> Settings:
    """Settings on a private .env, with no FISHREPRO_ variable leaking in from outside."""
    import os
    for key in [k for k in os.environ if k.startswith('FISHREPRO_')]:
        monkeypatch.delenv(key)
    return Settings(tmp_path / '.env')


@pytest.fixture(scope='session')
def small_scene():
    """Twelve people across the whole MPJA range, seen by a five-camera rig."""
    from scripts.scene import generate_scene
    return generate_scene(seed=3, n_skeletons=12, mpja_range=(0.0, 180.0))
