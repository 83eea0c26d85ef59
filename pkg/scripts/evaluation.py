"""Pose metrics, MPJA-binned curves, and the comparison report.

Relative metrics (MPJPE, PCK) align both poses on the root joint first; the absolute
variants (A-MPJPE, A-PCK) compare the poses where they stand. Everything pools joints:
a bin's MPJPE is the mean over every joint of every record in it, not a mean of
per-record means.

The report compares every run label found in the predictions (a single projection, or
``H alpha_t=110`` for a hybrid run). When the predictions pair a PH run with a DS run
over the same people, each threshold also gets two synthetic hybrid rows: H choosing by
ground-truth MPJA and H choosing by MBBA.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .camera_models import CameraModel, load_camera, project_many
from .models import (FRAME_CAMERA, FRAME_WORLD, KIND_DS, KIND_PH, BoundingBox, EvaluationRecord,
                     Extrinsics, GeometryError, MetricSummary, Pose3D, RecordSkipError)
from .paths import atomic_write_text
from .records import read_jsonl
from .spatial_metrics import (choice_agreement, mbba, mpja, mpja_histogram, select_projection,
                              tight_bbox)

logger = logging.getLogger(__name__)

PCK_THRESHOLD_MM = 150.0
BIN_WIDTH_DEG = 10.0
MAX_SKIP_FRACTION = 0.10

CURVE_COLUMNS = ('bin_lo_deg', 'count', 'mpjpe_mm', 'a_mpjpe_mm', 'pck150', 'a_pck150')


# ------------------------------------------------------------------ per-pose metrics

def relative_align(pose: Pose3D, root_index: int = 0) -> Pose3D:
    """The pose with its root joint moved to the origin."""
    if not 0 <= root_index < len(pose):
        raise GeometryError(f'root index {root_index} outside a {len(pose)}-joint pose')
    return Pose3D(pose.joints - pose.joints[root_index], pose.frame)


def joint_errors(gt: Pose3D, pred: Pose3D, absolute: bool = False,
                 root_index: int = 0) -> np.ndarray:
    """Per-joint Euclidean error, mm."""
    if len(gt) != len(pred):
        raise GeometryError(f'ground truth has {len(gt)} joints, prediction {len(pred)}')
    if not absolute:
        gt, pred = relative_align(gt, root_index), relative_align(pred, root_index)
    return np.linalg.norm(gt.joints - pred.joints, axis=1)


def mpjpe(gt: Pose3D, pred: Pose3D, absolute: bool = False, root_index: int = 0) -> float:
    return float(joint_errors(gt, pred, absolute, root_index).mean())


def pck(gt: Pose3D, pred: Pose3D, threshold_mm: float = PCK_THRESHOLD_MM,
        absolute: bool = False, root_index: int = 0) -> float:
    """Percent of joints strictly closer than `threshold_mm`."""
    errors = joint_errors(gt, pred, absolute, root_index)
    return float(100.0 * np.mean(errors < threshold_mm))


def summarize(records: Sequence[EvaluationRecord], threshold_mm: float = PCK_THRESHOLD_MM,
              root_index: int = 0) -> MetricSummary:
    if not records:
        return MetricSummary()
    relative = np.concatenate([joint_errors(r.gt_pose, r.pred_pose, False, root_index)
                               for r in records])
    absolute = np.concatenate([joint_errors(r.gt_pose, r.pred_pose, True, root_index)
                               for r in records])
    return MetricSummary(
        mpjpe_mm=float(relative.mean()),
        a_mpjpe_mm=float(absolute.mean()),
        pck150_pct=float(100.0 * np.mean(relative < threshold_mm)),
        a_pck150_pct=float(100.0 * np.mean(absolute < threshold_mm)),
        count=len(records),
    )


# ------------------------------------------------------------------ binning

@dataclass
class BinSummary:
    lo_deg: float
    hi_deg: float
    summary: MetricSummary


def bin_index(angle: float, bin_width: float, bins: int) -> int:
    return min(int(math.floor(angle / bin_width)), bins - 1)


def bin_by_mpja(records: Sequence[EvaluationRecord], bin_width: float = BIN_WIDTH_DEG,
                threshold_mm: float = PCK_THRESHOLD_MM, root_index: int = 0
                ) -> List[BinSummary]:
    """One summary per `bin_width` slice of [0, 180); empty slices have count 0."""
    if not records:
        raise GeometryError('nothing to bin')
    bins = int(math.ceil(180.0 / bin_width))
    members: List[List[EvaluationRecord]] = [[] for _ in range(bins)]
    for record in records:
        members[bin_index(record.mpja, bin_width, bins)].append(record)
    return [BinSummary(index * bin_width, min((index + 1) * bin_width, 180.0),
                       summarize(group, threshold_mm, root_index))
            for index, group in enumerate(members)]


# ------------------------------------------------------------------ thresholds

def hybrid_records(by_kind: Dict[str, Dict[str, EvaluationRecord]], ids: Sequence[str],
                   alpha_t: float, use: str = 'mbba') -> List[EvaluationRecord]:
    """Pick each person's PH or DS prediction by the chosen angle against `alpha_t`."""
    chosen = []
    for record_id in ids:
        ph, ds = by_kind[KIND_PH].get(record_id), by_kind[KIND_DS].get(record_id)
        if ph is None or ds is None:
            continue
        angle = ds.mpja if use == 'mpja' else ds.mbba
        if angle is None:
            continue
        chosen.append(ph if select_projection(angle, alpha_t).kind == KIND_PH else ds)
    return chosen


@dataclass
class ThresholdSweep:
    rows: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    best_mpjpe_alpha_t: Optional[float] = None
    best_pck_alpha_t: Optional[float] = None


def threshold_sweep(by_kind: Dict[str, Dict[str, EvaluationRecord]], ids: Sequence[str],
                    alpha_ts: Iterable[float], threshold_mm: float = PCK_THRESHOLD_MM,
                    root_index: int = 0) -> ThresholdSweep:
    """H w/MPJA and H w/MBBA at every threshold, and the thresholds that did best."""
    sweep = ThresholdSweep()
    if KIND_PH not in by_kind or KIND_DS not in by_kind:
        return sweep
    best_mpjpe: Tuple[float, Optional[float]] = (math.inf, None)
    best_pck: Tuple[float, Optional[float]] = (-math.inf, None)
    for alpha_t in alpha_ts:
        for use, name in (('mpja', 'MPJA'), ('mbba', 'MBBA')):
            records = hybrid_records(by_kind, ids, alpha_t, use)
            summary = summarize(records, threshold_mm, root_index)
            sweep.rows[f'H w/{name} alpha_t={alpha_t:g}'] = summary.to_dict()
            if use == 'mbba' and summary.count:
                if summary.mpjpe_mm < best_mpjpe[0]:
                    best_mpjpe = (summary.mpjpe_mm, alpha_t)
                if summary.pck150_pct > best_pck[0]:
                    best_pck = (summary.pck150_pct, alpha_t)
    sweep.best_mpjpe_alpha_t, sweep.best_pck_alpha_t = best_mpjpe[1], best_pck[1]
    return sweep


# ------------------------------------------------------------------ the report

def build_report(records: Sequence[EvaluationRecord], alpha_ts: Sequence[float],
                 bin_width: float = BIN_WIDTH_DEG, threshold_mm: float = PCK_THRESHOLD_MM,
                 root_index: int = 0, skipped: int = 0) -> Dict[str, Any]:
    """Summaries per label, binned curves, hybrid rows and the MPJA/MBBA agreement."""
    by_label: Dict[str, Dict[str, EvaluationRecord]] = {}
    ids: List[str] = []
    for record in records:
        by_label.setdefault(record.label, {})[record.record_id] = record
        if record.record_id not in ids:
            ids.append(record.record_id)

    report: Dict[str, Any] = {'records': len(ids), 'skipped': skipped, 'summaries': {},
                              'curves': {}, 'agreement': {}}
    for label in sorted(by_label):
        group = [by_label[label][i] for i in ids if i in by_label[label]]
        report['summaries'][label] = summarize(group, threshold_mm, root_index).to_dict()
        report['curves'][label] = curve_rows(group, bin_width, threshold_mm, root_index)

    # Only whole PH and DS runs pair up; a hybrid run's own records never do.
    by_kind = {kind: by_label[kind] for kind in (KIND_PH, KIND_DS) if kind in by_label}
    sweep = threshold_sweep(by_kind, ids, alpha_ts, threshold_mm, root_index)
    report['summaries'].update(sweep.rows)
    report['best_alpha_t'] = {'mpjpe': sweep.best_mpjpe_alpha_t, 'pck': sweep.best_pck_alpha_t}
    for alpha_t in alpha_ts:
        for use in ('mpja', 'mbba'):
            group = hybrid_records(by_kind, ids, alpha_t, use) if sweep.rows else []
            if group:
                name = f'H w/{use.upper()} alpha_t={alpha_t:g}'
                report['curves'][name] = curve_rows(group, bin_width, threshold_mm, root_index)

    # Agreement is judged once per person, whichever label carried the angles.
    people = {}
    for record in records:
        if record.mbba is not None:
            people.setdefault(record.record_id, record)
    for alpha_t in alpha_ts:
        report['agreement'][f'{alpha_t:g}'] = choice_agreement(
            [r.mpja for r in people.values()], [r.mbba for r in people.values()], alpha_t)
    first = {}
    for record in records:
        first.setdefault(record.record_id, record)
    report['mpja_histogram'] = {'bin_width_deg': bin_width,
                                'counts': mpja_histogram((r.mpja for r in first.values()),
                                                         bin_width)}
    return report


def curve_rows(records: Sequence[EvaluationRecord], bin_width: float, threshold_mm: float,
               root_index: int) -> List[Dict[str, Any]]:
    if not records:
        return []
    return [{'bin_lo_deg': b.lo_deg, **b.summary.to_dict()}
            for b in bin_by_mpja(records, bin_width, threshold_mm, root_index)]


def write_report(report: Dict[str, Any], path: Path) -> None:
    atomic_write_text(Path(path), json.dumps(_json_safe(report), indent=2) + '\n')
    logger.info('Wrote report to %s', path)


def curves_path(path: Path, label: str, first: bool) -> Path:
    """Where one label's curve goes: `path` itself for the first, a sibling otherwise."""
    path = Path(path)
    if first:
        return path
    slug = re.sub(r'[^A-Za-z0-9.]+', '_', label).strip('_') or 'curve'
    return path.with_name(f'{path.stem}.{slug}{path.suffix}')


def write_curves(report: Dict[str, Any], path: Path) -> List[Path]:
    """One CSV per label, each with exactly the :data:`CURVE_COLUMNS`.

    The first label in the report goes to `path`; further labels go to
    ``<stem>.<label>.csv`` next to it.
    """
    written = []
    for position, (label, rows) in enumerate(report['curves'].items()):
        target = curves_path(path, label, position == 0)
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, 'w', encoding='utf-8', newline='') as handle:
            writer = csv.writer(handle)
            writer.writerow(CURVE_COLUMNS)
            for row in rows:
                writer.writerow([f'{row["bin_lo_deg"]:g}', row['count'],
                                 _cell(row['mpjpe_mm']), _cell(row['a_mpjpe_mm']),
                                 _cell(row['pck150_pct']), _cell(row['a_pck150_pct'])])
        written.append(target)
        logger.info('Wrote %s curves to %s', label, target)
    return written


def _cell(value: Optional[float]) -> str:
    return '' if value is None else f'{value:.6f}'


def _json_safe(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {key: _json_safe(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(item) for item in value]
    return value


# ------------------------------------------------------------------ from files

def load_evaluation_records(gt_file: Path, pred_file: Path, camera: CameraModel,
                            max_skip_fraction: float = MAX_SKIP_FRACTION
                            ) -> Tuple[List[EvaluationRecord], int]:
    """Join predictions to ground truth by id.

    Ground truth lines are ``{"id", "pose", "extrinsics"?, "bbox"?}`` with the pose in
    world mm; prediction lines are ``{"id", "projection", "abs_pose_world", "mbba"?,
    "label"?, "alpha_t"?}``. A line without a label belongs to ``H alpha_t=<a>`` when it
    carries a threshold, else to its projection.
    MPJA comes from the ground truth in `camera`'s frame; MBBA from the prediction
    line, else from the ground-truth bbox, else from the box around the projected
    joints.
    """
    truth = {}
    for row in read_jsonl(gt_file):
        try:
            truth[str(row['id'])] = row
        except KeyError:
            logger.warning('Ground-truth line without an id skipped')

    records: List[EvaluationRecord] = []
    skipped = 0
    total = 0
    for row in read_jsonl(pred_file):
        total += 1
        record_id = str(row.get('id', ''))
        gt_row = truth.get(record_id)
        if gt_row is None:
            skipped += 1
            logger.debug('Prediction %r has no ground truth', record_id)
            continue
        try:
            records.append(_record_from_rows(record_id, gt_row, row, camera))
        except (GeometryError, KeyError, TypeError, ValueError) as exc:
            skipped += 1
            logger.warning('Skipped record %s: %s', record_id, exc)

    if skipped:
        logger.warning('Skipped %d of %d prediction record(s)', skipped, total)
    if total and skipped / total > max_skip_fraction:
        raise RecordSkipError(f'{skipped} of {total} prediction records could not be '
                              f'matched - more than {max_skip_fraction:.0%}')
    return records, skipped


def _record_from_rows(record_id: str, gt_row: Dict[str, Any], pred_row: Dict[str, Any],
                      camera: CameraModel) -> EvaluationRecord:
    extrinsics = Extrinsics.from_dict(gt_row.get('extrinsics'))
    gt_world = Pose3D(gt_row['pose'], FRAME_WORLD)
    in_camera = Pose3D(extrinsics.camera_from_world(gt_world.joints), FRAME_CAMERA)
    angle = mpja(in_camera)

    box_angle = pred_row.get('mbba')
    if box_angle is None:
        if gt_row.get('bbox'):
            box = BoundingBox.from_xywh(*gt_row['bbox'])
        else:
            uv, _, valid = project_many(camera, in_camera.joints)
            box = tight_bbox(uv[valid])
        box_angle = mbba(box, camera).degrees
    projection = str(pred_row.get('projection', ''))
    alpha_t = pred_row.get('alpha_t')
    label = pred_row.get('label') or (f'H alpha_t={alpha_t:g}' if alpha_t is not None
                                        else projection)
    return EvaluationRecord(
        record_id=record_id,
        gt_pose=gt_world,
        pred_pose=Pose3D(pred_row['abs_pose_world'], FRAME_WORLD),
        mpja=angle,
        mbba=float(box_angle),
        projection_used=projection,
        camera_id=str(pred_row.get('camera_id', gt_row.get('camera_id', ''))),
        alpha_t=alpha_t,
        label=str(label),
    )


def evaluate_run(gt_file: Path, pred_file: Path, cam_file: Path, alpha_ts: Sequence[float],
                 bin_width: float = BIN_WIDTH_DEG, threshold_mm: float = PCK_THRESHOLD_MM,
                 root_index: int = 0, max_skip_fraction: float = MAX_SKIP_FRACTION
                 ) -> Dict[str, Any]:
    camera = load_camera(cam_file)
    records, skipped = load_evaluation_records(gt_file, pred_file, camera, max_skip_fraction)
    if not records:
        raise RecordSkipError('no prediction matched the ground truth')
    return build_report(records, alpha_ts, bin_width, threshold_mm, root_index, skipped)
