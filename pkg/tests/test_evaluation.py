"""Pose metrics, MPJA bins, hybrid rows and the on-disk report."""

from __future__ import annotations

import csv
import json
from typing import Optional

import numpy as np
import pytest

from conftest import fisheye
from scripts.camera_models import camera_to_dict
from scripts.evaluation import (CURVE_COLUMNS, bin_by_mpja, build_report, evaluate_run,
                                hybrid_records, mpjpe, pck, relative_align, summarize,
                                threshold_sweep, write_curves, write_report)
from scripts.models import (KIND_DS, KIND_PH, EvaluationRecord, GeometryError, Pose3D,
                            RecordSkipError)
from scripts.records import write_jsonl

# Three people, three joints each, errors picked so the pooled numbers are easy by hand:
#   A: shifted 200 mm in depth      -> relative 0, 0, 0       absolute 200, 200, 200
#   B: one joint off by exactly 150 -> relative 0, 150, 0     absolute 0, 150, 0
#   C: shifted 50 mm sideways       -> relative 0, 0, 0       absolute 50, 50, 50
HAND_GT = {
    'a': [[0, 0, 1000], [100, 0, 1000], [0, 100, 1000]],
    'b': [[0, 0, 2000], [100, 0, 2000], [0, 100, 2000]],
    'c': [[500, 0, 3000], [600, 0, 3000], [500, 100, 3000]],
}
HAND_PRED = {
    'a': [[0, 0, 1200], [100, 0, 1200], [0, 100, 1200]],
    'b': [[0, 0, 2000], [250, 0, 2000], [0, 100, 2000]],
    'c': [[530, 40, 3000], [630, 40, 3000], [530, 140, 3000]],
}


def _write_fixture(tmp_path, pred_ids=None):
    gt_file, pred_file = tmp_path / 'gt.jsonl', tmp_path / 'pred.jsonl'
    cam_file = tmp_path / 'cam.json'
    write_jsonl(gt_file, [{'id': key, 'pose': pose} for key, pose in HAND_GT.items()])
    write_jsonl(pred_file, [{'id': key, 'projection': KIND_DS, 'mbba': 10.0,
                             'abs_pose_world': HAND_PRED.get(key, HAND_PRED['a'])}
                            for key in (pred_ids or HAND_PRED)])
    cam_file.write_text(json.dumps(camera_to_dict(fisheye())), encoding='utf-8')
    return gt_file, pred_file, cam_file


def _record(record_id: str, angle: float, error: float = 0.0, kind: str = KIND_DS,
            box_angle: Optional[float] = None) -> EvaluationRecord:
    """A three-joint record whose second joint is `error` mm off."""
    gt = Pose3D([[0, 0, 2000], [100, 0, 2000], [0, 100, 2000]])
    pred = Pose3D(gt.joints + [[0, 0, 0], [error, 0, 0], [0, 0, 0]])
    return EvaluationRecord(record_id, gt, pred, angle, box_angle, kind)


# ---------------------------------------------------------------- per-pose metrics

def test_pck_counts_only_errors_strictly_below_the_threshold():
    gt = Pose3D([[0, 0, 0], [0, 0, 0]])
    pred = Pose3D([[0, 0, 0], [150, 0, 0]])
    assert pck(gt, pred, 150.0, absolute=True) == 50.0
    assert pck(gt, pred, 150.0001, absolute=True) == 100.0


def test_relative_metrics_ignore_a_shared_shift(rng):
    gt = Pose3D(rng.normal(0.0, 300.0, (17, 3)) + [0, 0, 3000])
    pred = Pose3D(gt.joints + rng.normal(0.0, 20.0, (17, 3)))
    offset = rng.normal(0.0, 1000.0, 3)
    assert mpjpe(gt.translated(offset), pred.translated(offset)) == \
        pytest.approx(mpjpe(gt, pred), abs=1e-9)
    assert mpjpe(gt, pred.translated(offset)) == pytest.approx(mpjpe(gt, pred), abs=1e-9)
    assert mpjpe(gt, pred.translated(offset), absolute=True) > mpjpe(gt, pred, absolute=True)


def test_relative_align_moves_the_root_to_the_origin():
    aligned = relative_align(Pose3D([[10, 20, 30], [11, 20, 30]]), root_index=1)
    assert np.array_equal(aligned.joints, [[-1, 0, 0], [0, 0, 0]])
    with pytest.raises(GeometryError):
        relative_align(Pose3D([[0, 0, 0]]), root_index=1)


def test_mpjpe_matches_a_per_joint_loop(rng):
    gt = Pose3D(rng.normal(0.0, 300.0, (17, 3)))
    pred = Pose3D(rng.normal(0.0, 300.0, (17, 3)))
    expected = sum(float(np.sqrt(sum((g - p) ** 2 for g, p in zip(gj, pj))))
                   for gj, pj in zip(gt.joints, pred.joints)) / 17
    assert mpjpe(gt, pred, absolute=True) == pytest.approx(expected, abs=1e-9)


def test_mismatched_joint_counts_are_refused():
    with pytest.raises(GeometryError):
        mpjpe(Pose3D(np.zeros((3, 3))), Pose3D(np.zeros((4, 3))))


def test_an_empty_summary_carries_no_numbers():
    summary = summarize([])
    assert summary.count == 0 and summary.mpjpe_mm is None


# ---------------------------------------------------------------- bins

def test_a_57_degree_record_lands_in_the_50_degree_bin():
    bins = bin_by_mpja([_record('x', 57.0)], 10.0)
    assert len(bins) == 18
    (hit,) = [b for b in bins if b.summary.count]
    assert (hit.lo_deg, hit.hi_deg) == (50.0, 60.0)


def test_bins_partition_the_records_and_match_filtered_metrics(rng):
    records = [_record(f'r{i}', float(angle), float(error))
               for i, (angle, error) in enumerate(zip(rng.uniform(0, 180, 60),
                                                      rng.uniform(0, 300, 60)))]
    records.append(_record('edge', 180.0, 5.0))
    bins = bin_by_mpja(records, 10.0)
    assert sum(b.summary.count for b in bins) == len(records)
    for b in bins:
        members = [r for r in records if b.lo_deg <= r.mpja < b.hi_deg
                   or (b.hi_deg == 180.0 and r.mpja == 180.0)]
        expected = summarize(members)
        assert b.summary.count == expected.count
        assert b.summary.a_mpjpe_mm == expected.a_mpjpe_mm


def test_nothing_to_bin_is_an_error():
    with pytest.raises(GeometryError):
        bin_by_mpja([])


# ---------------------------------------------------------------- hybrid rows

def test_hybrid_endpoints_reduce_to_a_single_projection():
    by_kind = {KIND_PH: {}, KIND_DS: {}}
    for i, angle in enumerate((10.0, 90.0, 170.0)):
        by_kind[KIND_PH][f'p{i}'] = _record(f'p{i}', angle, 10.0, KIND_PH, angle)
        by_kind[KIND_DS][f'p{i}'] = _record(f'p{i}', angle, 20.0, KIND_DS, angle)
    ids = ['p0', 'p1', 'p2']
    assert {r.projection_used for r in hybrid_records(by_kind, ids, 0.0)} == {KIND_DS}
    assert {r.projection_used for r in hybrid_records(by_kind, ids, 180.0)} == {KIND_PH}
    mixed = hybrid_records(by_kind, ids, 110.0, use='mpja')
    assert [r.projection_used for r in mixed] == [KIND_PH, KIND_PH, KIND_DS]


def test_a_sweep_needs_both_single_projection_runs():
    only_ds = {KIND_DS: {'p0': _record('p0', 30.0, 5.0, KIND_DS, 30.0)}}
    sweep = threshold_sweep(only_ds, ['p0'], [110.0])
    assert sweep.rows == {} and sweep.best_mpjpe_alpha_t is None


def test_report_picks_the_threshold_that_did_best():
    records = []
    # PH is better for narrow people, DS for wide ones; 110 separates them.
    for i, angle in enumerate((20.0, 60.0, 100.0, 130.0, 160.0)):
        ph_error, ds_error = (10.0, 30.0) if angle < 110 else (90.0, 30.0)
        records.append(_record(f'p{i}', angle, ph_error, KIND_PH, angle))
        records.append(_record(f'p{i}', angle, ds_error, KIND_DS, angle))
    report = build_report(records, [0.0, 110.0, 180.0])
    assert report['records'] == 5
    assert report['best_alpha_t'] == {'mpjpe': 110.0, 'pck': 0.0}
    assert 'H w/MBBA alpha_t=110' in report['summaries']
    assert report['agreement']['110'] == 1.0
    assert sum(report['mpja_histogram']['counts']) == 5


def test_a_hybrid_run_is_not_split_by_the_projection_each_person_got():
    records = [_record(f'p{i}', angle, 10.0, kind, angle)
               for i, (angle, kind) in enumerate(((30.0, KIND_PH), (80.0, KIND_PH),
                                                  (150.0, KIND_DS)))]
    for record in records:
        record.label = 'H alpha_t=110'
    report = build_report(records, [110.0])
    assert list(report['summaries']) == ['H alpha_t=110']
    assert report['summaries']['H alpha_t=110']['count'] == 3
    assert list(report['curves']) == ['H alpha_t=110']



# ---------------------------------------------------------------- from files

def test_evaluate_run_reproduces_the_hand_computed_table(tmp_path):
    report = evaluate_run(*_write_fixture(tmp_path), alpha_ts=[110.0])
    row = report['summaries'][KIND_DS]
    assert row['count'] == 3
    assert row['mpjpe_mm'] == pytest.approx(150.0 / 9, abs=1e-9)
    assert row['a_mpjpe_mm'] == pytest.approx(900.0 / 9, abs=1e-9)
    assert row['pck150_pct'] == pytest.approx(800.0 / 9, abs=1e-9)
    assert row['a_pck150_pct'] == pytest.approx(500.0 / 9, abs=1e-9)
    assert sum(r['count'] for r in report['curves'][KIND_DS]) == 3


def test_too_many_unmatched_predictions_fail_the_run(tmp_path):
    files = _write_fixture(tmp_path, pred_ids=['a', 'b', 'c', 'ghost'])
    with pytest.raises(RecordSkipError):
        evaluate_run(*files, alpha_ts=[110.0])
    report = evaluate_run(*files, alpha_ts=[110.0], max_skip_fraction=0.5)
    assert report['skipped'] == 1 and report['records'] == 3


def test_report_and_curves_land_on_disk(tmp_path):
    report = evaluate_run(*_write_fixture(tmp_path), alpha_ts=[110.0])
    write_report(report, tmp_path / 'out' / 'report.json')
    write_curves(report, tmp_path / 'out' / 'curves.csv')

    saved = json.loads((tmp_path / 'out' / 'report.json').read_text(encoding='utf-8'))
    assert saved['summaries'][KIND_DS]['count'] == 3
    with open(tmp_path / 'out' / 'curves.csv', encoding='utf-8', newline='') as handle:
        rows = list(csv.DictReader(handle))
        assert tuple(rows[0]) == CURVE_COLUMNS
    assert len(rows) == 18
    empty = [r for r in rows if r['count'] == '0']
    assert empty and all(r['mpjpe_mm'] == '' for r in empty)


def test_each_label_gets_its_own_curves_file(tmp_path):
    records = []
    for i, angle in enumerate((20.0, 130.0)):
        records.append(_record(f'p{i}', angle, 10.0, KIND_PH, angle))
        records.append(_record(f'p{i}', angle, 30.0, KIND_DS, angle))
    report = build_report(records, [110.0])
    written = write_curves(report, tmp_path / 'curves.csv')

    assert written[0] == tmp_path / 'curves.csv'
    names = {path.name for path in written}
    assert {'curves.PH.csv', 'curves.H_w_MPJA_alpha_t_110.csv',
            'curves.H_w_MBBA_alpha_t_110.csv'} <= names
    for path in written:
        with open(path, encoding='utf-8', newline='') as handle:
            assert next(csv.reader(handle)) == list(CURVE_COLUMNS)


def test_unlabelled_lines_with_a_threshold_belong_to_the_hybrid_run(tmp_path):
    gt_file, pred_file, cam_file = _write_fixture(tmp_path)
    write_jsonl(pred_file, [{'id': key, 'projection': kind, 'alpha_t': 110, 'mbba': 10.0,
                             'abs_pose_world': HAND_PRED[key]}
                            for key, kind in zip(HAND_PRED, (KIND_PH, KIND_DS, KIND_PH))])
    report = evaluate_run(gt_file, pred_file, cam_file, alpha_ts=[110.0])
    assert list(report['summaries']) == ['H alpha_t=110']
    assert report['summaries']['H alpha_t=110']['count'] == 3
