"""The end-to-end run: box, projection choice, virtual crop, prediction, recovery, metrics.

In synthetic mode every person of a scene goes through the whole chain with the
geometric oracle in place of a network, and the run is scored against the scene's
ground truth. In image mode real PNGs are cropped and written out with their sidecars,
ready for a network; ``fishrepro recover`` lifts what it predicts.

Noise for person ``i`` is drawn from its own generator seeded with ``(seed, i)``, so a
person gets the same noise whichever projection is used and however many threads run.
That is what makes a hybrid run at alpha_t = 0 reproduce the DS-only run exactly, and
at 180 the PH-only run.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .camera_models import camera_to_dict, load_camera, max_fov_deg
from .crop_reprojection import ZOOM_MARGIN, VirtualCrop, make_crop, zoom_factor
from .evaluation import build_report, curve_rows, summarize, write_curves, write_report
from .imaging import load_png, save_png
from .models import (FRAME_CAMERA, KIND_DS, KIND_HYBRID, KIND_PH, KINDS, BoundingBox,
                     ConfigError, EvaluationRecord, Extrinsics, FovExceededError, GeometryError,
                     Pose3D, Prediction, RecordSkipError)
from .paths import atomic_write_text, record_path
from .pose_recovery import absolute_pose, recover_translation
from .records import read_jsonl, write_jsonl
from .scene import (PRIMARY_ID, SyntheticScene, generate_scene, load_scene, oracle_predict,
                    person_bbox, record_id, scene_ground_truth)
from .settings import Settings
from .sidecar import write_sidecar
from .spatial_metrics import mbba, mpja, select_projection
from .triangulation import RigCamera
from .workers import parallel_map

logger = logging.getLogger(__name__)

LABELS = KINDS + (KIND_HYBRID,)
DEFAULT_SWEEP = (0.0, 110.0, 135.0, 180.0)


# ------------------------------------------------------------------ configuration

@dataclass
class RunConfig:
    projection: str = KIND_HYBRID
    alpha_t: float = 110.0
    alpha_ts: List[float] = field(default_factory=lambda: list(DEFAULT_SWEEP))
    crop_size: int = 256
    zoom_margin: float = ZOOM_MARGIN
    # synthetic mode
    scene: Optional[str] = None
    seed: int = 1
    skeletons: int = 100
    mpja_range: Tuple[float, float] = (0.0, 180.0)
    camera_id: str = PRIMARY_ID
    noise_2d: float = 0.0
    noise_3d: float = 0.0
    fallback_to_ds: bool = False
    # image mode
    images: Optional[str] = None
    camera: Optional[str] = None
    # output and scoring
    out_dir: str = 'out'
    threads: int = 4
    bin_width: float = 10.0
    pck_threshold: float = 150.0
    root_index: int = 0
    max_skip_fraction: float = 0.10

    def __post_init__(self) -> None:
        self.projection = str(self.projection).upper()
        if self.projection not in LABELS:
            raise ConfigError(f'projection must be one of {", ".join(LABELS)}, '
                              f'got {self.projection!r}')
        for angle in [self.alpha_t, *self.alpha_ts]:
            if not 0.0 <= float(angle) <= 180.0:
                raise ConfigError(f'alpha_t must lie in [0, 180] degrees, got {angle}')
        if self.crop_size <= 0:
            raise ConfigError('crop size must be positive')
        if not 0.0 < self.zoom_margin <= 1.0:
            raise ConfigError('zoom margin must lie in (0, 1]')
        self.mpja_range = (float(self.mpja_range[0]), float(self.mpja_range[1]))

    @classmethod
    def from_settings(cls, settings: Settings) -> 'RunConfig':
        return cls(
            alpha_t=settings.get_float('FISHREPRO_ALPHA_T'),
            alpha_ts=settings.get_float_list('FISHREPRO_ALPHA_TS') or list(DEFAULT_SWEEP),
            crop_size=settings.get_int('FISHREPRO_CROP_SIZE'),
            zoom_margin=settings.get_float('FISHREPRO_ZOOM_MARGIN'),
            fallback_to_ds=settings.get_bool('FISHREPRO_FALLBACK_TO_DS'),
            threads=settings.get_int('FISHREPRO_THREADS'),
            bin_width=settings.get_float('FISHREPRO_BIN_WIDTH'),
            pck_threshold=settings.get_float('FISHREPRO_PCK_THRESHOLD'),
            root_index=settings.get_int('FISHREPRO_ROOT_INDEX'),
            max_skip_fraction=settings.get_float('FISHREPRO_MAX_SKIP_FRACTION'),
        )

    def overridden(self, values: Dict[str, Any]) -> 'RunConfig':
        """A copy with every non-None entry of `values` applied."""
        known = {f.name for f in fields(self)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f'unknown run setting(s): {", ".join(unknown)}')
        return replace(self, **{k: v for k, v in values.items() if v is not None})

    @property
    def label(self) -> str:
        if self.projection == KIND_HYBRID:
            return f'H alpha_t={self.alpha_t:g}'
        return self.projection


def load_run_config(path: Path, base: Optional[RunConfig] = None) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text(encoding='utf-8'))
    except (OSError, ValueError) as exc:
        raise ConfigError(f'could not read run config {path}: {exc}') from exc
    if not isinstance(data, dict):
        raise ConfigError('run config must be a JSON object')
    return (base or RunConfig()).overridden(data)


# ------------------------------------------------------------------ one person

@dataclass
class PersonResult:
    record: EvaluationRecord
    zoom: float
    fallback: bool = False


def choose_projection(config: RunConfig, box_angle: float) -> str:
    if config.projection == KIND_HYBRID:
        return select_projection(box_angle, config.alpha_t).kind
    return config.projection


def process_person(scene: SyntheticScene, index: int, placed: RigCamera,
                   config: RunConfig) -> PersonResult:
    """Run one skeleton through the whole chain."""
    pose = scene.skeletons[index]
    in_camera = Pose3D(placed.extrinsics.camera_from_world(pose.joints), FRAME_CAMERA)
    bbox = person_bbox(pose, placed)
    box_angle = mbba(bbox, placed.camera).degrees
    kind = choose_projection(config, box_angle)

    fallback = False
    try:
        crop = make_crop(placed.camera, bbox, kind, config.crop_size, margin=config.zoom_margin)
    except FovExceededError:
        if not (config.fallback_to_ds and kind == KIND_PH):
            raise
        logger.debug('%s: PH cannot hold the box, falling back to DS', record_id(index))
        kind, fallback = KIND_DS, True
        crop = make_crop(placed.camera, bbox, kind, config.crop_size, margin=config.zoom_margin)

    rng = np.random.default_rng([scene.seed, index])
    prediction = oracle_predict(scene, index, placed, crop, config.noise_2d, config.noise_3d, rng)
    translation = recover_translation(prediction, crop.output_camera)
    predicted = absolute_pose(prediction.rel_pose, translation, crop.rotation, placed.extrinsics)

    record = EvaluationRecord(
        record_id=record_id(index), gt_pose=pose, pred_pose=predicted,
        mpja=mpja(in_camera), mbba=box_angle, projection_used=kind,
        camera_id=placed.camera_id,
        alpha_t=config.alpha_t if config.projection == KIND_HYBRID else None,
        label=config.label,
    )
    return PersonResult(record, zoom_factor(crop, placed.camera), fallback)


@dataclass
class SceneRun:
    label: str
    results: List[PersonResult]
    failures: Dict[str, str]

    @property
    def records(self) -> List[EvaluationRecord]:
        return [result.record for result in self.results]

    @property
    def total(self) -> int:
        return len(self.results) + len(self.failures)


def run_scene(scene: SyntheticScene, config: RunConfig) -> SceneRun:
    """Every skeleton of `scene`, in parallel. Failures are collected, not raised."""
    placed = scene.camera(config.camera_id)
    outcomes = parallel_map(lambda i: process_person(scene, i, placed, config),
                            range(len(scene.skeletons)), threads=config.threads,
                            catch=GeometryError)
    results, failures = [], {}
    for outcome in outcomes:
        if outcome.ok:
            results.append(outcome.value)
        else:
            failures[record_id(outcome.index)] = str(outcome.error)
            logger.debug('%s failed: %s', record_id(outcome.index), outcome.error)
    if failures:
        logger.warning('%s: %d of %d record(s) failed', config.label, len(failures),
                       len(outcomes))
    return SceneRun(config.label, results, failures)


def scene_for(config: RunConfig) -> SyntheticScene:
    if config.scene:
        return load_scene(Path(config.scene))
    return generate_scene(config.seed, config.skeletons, config.mpja_range)


# ------------------------------------------------------------------ runs

def run_pipeline(config: RunConfig) -> Dict[str, Any]:
    """One configured run. Writes its outputs under ``config.out_dir``."""
    if config.images:
        return crop_images(config)

    scene = scene_for(config)
    run = run_scene(scene, config)
    out_dir = Path(config.out_dir)
    placed = scene.camera(config.camera_id)

    report = run_report(run, config)
    report['camera'] = {'id': placed.camera_id, 'kind': placed.camera.kind,
                        'max_fov_deg': max_fov_deg(placed.camera)}
    write_jsonl(out_dir / 'gt.jsonl', scene_ground_truth(scene, config.camera_id))
    write_jsonl(out_dir / 'pred.jsonl', (prediction_line(r) for r in run.results))
    atomic_write_text(out_dir / 'camera.json',
                      json.dumps(camera_to_dict(placed.camera), indent=2) + '\n')
    write_report(report, out_dir / 'report.json')
    write_curves(report, out_dir / 'curves.csv')

    if run.total and len(run.failures) / run.total > config.max_skip_fraction:
        raise RecordSkipError(f'{len(run.failures)} of {run.total} records failed - more '
                              f'than {config.max_skip_fraction:.0%}')
    return report


def run_report(run: SceneRun, config: RunConfig) -> Dict[str, Any]:
    records = run.records
    by_kind: Dict[str, List[EvaluationRecord]] = {}
    for record in records:
        by_kind.setdefault(record.projection_used, []).append(record)
    zooms = [r.zoom for r in run.results]
    return {
        'label': run.label,
        'config': _config_dict(config),
        'records': run.total,
        'failed': len(run.failures),
        'failures': run.failures,
        'fallbacks': sum(r.fallback for r in run.results),
        'summary': summarize(records, config.pck_threshold, config.root_index).to_dict(),
        'by_projection': {kind: summarize(group, config.pck_threshold,
                                          config.root_index).to_dict()
                          for kind, group in sorted(by_kind.items())},
        'mean_zoom': float(np.mean(zooms)) if zooms else None,
        'curves': {run.label: curve_rows(records, config.bin_width, config.pck_threshold,
                                         config.root_index)},
    }


def prediction_line(result: PersonResult) -> Dict[str, Any]:
    """One pred.jsonl line, with the provenance every record carries."""
    record = result.record
    return {'id': record.record_id, 'projection': record.projection_used,
            'label': record.label,
            'abs_pose_world': record.pred_pose.to_list(), 'mbba': record.mbba,
            'mpja': record.mpja, 'alpha_t': record.alpha_t, 'camera_id': record.camera_id,
            'zoom': result.zoom}


def _config_dict(config: RunConfig) -> Dict[str, Any]:
    data = asdict(config)
    data['mpja_range'] = list(config.mpja_range)
    return data


def sweep(config: RunConfig) -> Dict[str, Any]:
    """Every projection kind, and H at every alpha_t, over one scene."""
    scene = scene_for(config)
    rows: Dict[str, Dict[str, Any]] = {}
    runs: List[SceneRun] = []
    for kind in KINDS:
        runs.append(run_scene(scene, replace(config, projection=kind)))
    for alpha_t in config.alpha_ts:
        runs.append(run_scene(scene, replace(config, projection=KIND_HYBRID, alpha_t=alpha_t)))
    for run in runs:
        summary = summarize(run.records, config.pck_threshold, config.root_index).to_dict()
        summary['failed'] = len(run.failures)
        rows[run.label] = summary

    # The same people under every projection, for the MPJA-vs-MBBA bookkeeping.
    pooled = [record for run in runs[:len(KINDS)] for record in run.records
              if record.label in (KIND_PH, KIND_DS)]
    comparison = build_report(pooled, config.alpha_ts, config.bin_width,
                              config.pck_threshold, config.root_index)
    report = {'scene': {'seed': scene.seed, 'skeletons': len(scene.skeletons),
                        'mpja_range': list(scene.mpja_range)},
              'table': rows,
              'best_alpha_t': comparison['best_alpha_t'],
              'agreement': comparison['agreement'],
              'curves': {run.label: curve_rows(run.records, config.bin_width,
                                               config.pck_threshold, config.root_index)
                         for run in runs}}
    out_dir = Path(config.out_dir)
    write_report(report, out_dir / 'sweep.json')
    write_curves(report, out_dir / 'sweep_curves.csv')
    return report


# ------------------------------------------------------------------ image mode

def crop_images(config: RunConfig) -> Dict[str, Any]:
    """Warp every listed person into a crop PNG with its sidecar.

    The list is JSON lines of ``{"id", "image", "bbox": [x, y, w, h]}``; image paths
    are relative to the list's folder.
    """
    if not config.camera:
        raise ConfigError('image mode needs a camera file')
    camera = load_camera(Path(config.camera))
    listing = Path(config.images)
    out_dir = Path(config.out_dir) / 'crops'

    def crop_one(row: Dict[str, Any]) -> str:
        rid = str(row['id'])
        bbox = BoundingBox.from_xywh(*row['bbox'])
        box_angle = mbba(bbox, camera).degrees
        kind = choose_projection(config, box_angle)
        crop = make_crop(camera, bbox, kind, config.crop_size,
                         src=load_png(listing.parent / row['image']), margin=config.zoom_margin)
        save_png(crop.image, record_path(out_dir, rid, '.png'))
        write_sidecar(record_path(out_dir, rid, '.json'), crop, camera, bbox,
                      {'id': rid, 'projection': kind, 'mbba': box_angle,
                       'alpha_t': config.alpha_t if config.projection == KIND_HYBRID else None})
        return kind

    rows = read_jsonl(listing)
    outcomes = parallel_map(crop_one, rows, threads=config.threads,
                            catch=(GeometryError, KeyError, TypeError, OSError))
    kinds: Dict[str, int] = {}
    failures = {}
    for outcome, row in zip(outcomes, rows):
        if outcome.ok:
            kinds[outcome.value] = kinds.get(outcome.value, 0) + 1
        else:
            failures[str(row.get('id', outcome.index))] = str(outcome.error)
            logger.warning('Could not crop %s: %s', row.get('id', outcome.index), outcome.error)
    report = {'label': config.label, 'records': len(rows), 'failed': len(failures),
              'failures': failures, 'projections': kinds}
    if rows and len(failures) / len(rows) > config.max_skip_fraction:
        raise RecordSkipError(f'{len(failures)} of {len(rows)} crops failed')
    return report


# ------------------------------------------------------------------ lifting a prediction

def recover_from_sidecar(crop: VirtualCrop, rel_pose: Pose3D, keypoints2d: np.ndarray,
                         extrinsics: Extrinsics, weights: Optional[np.ndarray] = None) -> Pose3D:
    """World pose from a network's output for a crop described by a sidecar."""
    prediction = Prediction(rel_pose, keypoints2d, weights)
    translation = recover_translation(prediction, crop.output_camera)
    return absolute_pose(prediction.rel_pose, translation, crop.rotation, extrinsics)
