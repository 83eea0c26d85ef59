"""The end-to-end chain on synthetic scenes, its configuration, and image mode."""

from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pytest

from scripts.camera_models import camera_to_dict
from scripts.crop_reprojection import ImageBuffer, make_crop
from scripts.evaluation import evaluate_run, mpjpe
from scripts.imaging import load_png, save_png
from scripts.models import KIND_DS, KIND_HYBRID, KIND_PH, KINDS, ConfigError
from scripts.pipeline import (RunConfig, load_run_config, process_person, recover_from_sidecar,
                              run_pipeline, run_scene, sweep)
from scripts.records import read_jsonl, write_jsonl
from scripts.scene import oracle_predict, person_bbox, save_scene
from scripts.sidecar import read_sidecar, write_sidecar
from scripts.spatial_metrics import select_projection


@pytest.fixture
def config(tmp_path):
    return RunConfig(seed=3, skeletons=12, threads=2, out_dir=str(tmp_path / 'out'))


# ---------------------------------------------------------------- configuration

def test_run_config_refuses_bad_values():
    with pytest.raises(ConfigError):
        RunConfig(projection='XX')
    with pytest.raises(ConfigError):
        RunConfig(alpha_t=200.0)
    with pytest.raises(ConfigError):
        RunConfig(alpha_ts=[0.0, -5.0])
    with pytest.raises(ConfigError):
        RunConfig(zoom_margin=1.5)


def test_overrides_skip_unset_values_and_refuse_unknown_ones():
    base = RunConfig()
    changed = base.overridden({'alpha_t': 135.0, 'crop_size': None})
    assert changed.alpha_t == 135.0 and changed.crop_size == base.crop_size
    with pytest.raises(ConfigError, match='bogus'):
        base.overridden({'bogus': 1})


def test_config_starts_from_settings(settings):
    settings.set('FISHREPRO_ALPHA_T', '120')
    settings.set('FISHREPRO_CROP_SIZE', '128')
    config = RunConfig.from_settings(settings)
    assert (config.alpha_t, config.crop_size) == (120.0, 128)
    assert config.label == 'H alpha_t=120'


def test_run_config_file_overrides_the_base(tmp_path):
    path = tmp_path / 'run.json'
    path.write_text(json.dumps({'projection': 'ds', 'skeletons': 5}), encoding='utf-8')
    config = load_run_config(path, RunConfig(seed=9))
    assert (config.projection, config.skeletons, config.seed) == (KIND_DS, 5, 9)
    assert config.label == KIND_DS
    path.write_text('[1, 2]', encoding='utf-8')
    with pytest.raises(ConfigError):
        load_run_config(path)


# ---------------------------------------------------------------- the chain

@pytest.mark.parametrize('kind', KINDS)
def test_noiseless_oracle_runs_recover_every_pose_exactly(kind, small_scene, config):
    run = run_scene(small_scene, replace(config, projection=kind, fallback_to_ds=False))
    if kind != KIND_PH:
        assert not run.failures
    assert run.results
    for record in run.records:
        assert record.projection_used == kind
        assert mpjpe(record.gt_pose, record.pred_pose, absolute=True) < 1e-4


def test_hybrid_follows_the_box_angle(small_scene, config):
    run = run_scene(small_scene, replace(config, projection=KIND_HYBRID, fallback_to_ds=True))
    assert not run.failures
    for result in run.results:
        record = result.record
        expected = select_projection(record.mbba, 110.0).kind
        assert record.projection_used == (KIND_DS if result.fallback else expected)
        assert record.alpha_t == 110.0


def test_fallback_turns_pinhole_overflows_into_ds_crops(small_scene, config):
    strict = run_scene(small_scene, replace(config, projection=KIND_PH))
    lenient = run_scene(small_scene, replace(config, projection=KIND_PH, fallback_to_ds=True))
    assert not lenient.failures
    assert sum(r.fallback for r in lenient.results) == len(strict.failures)


@pytest.mark.parametrize('alpha_t, kind', [(0.0, KIND_DS), (180.0, KIND_PH)])
def test_hybrid_endpoints_reproduce_the_single_projection_runs(alpha_t, kind, small_scene,
                                                               config):
    noisy = replace(config, noise_2d=1.5, noise_3d=20.0)
    hybrid = run_scene(small_scene, replace(noisy, projection=KIND_HYBRID, alpha_t=alpha_t))
    single = run_scene(small_scene, replace(noisy, projection=kind))
    assert set(hybrid.failures) == set(single.failures)
    for mine, theirs in zip(hybrid.records, single.records):
        assert mine.record_id == theirs.record_id
        assert np.array_equal(mine.pred_pose.joints, theirs.pred_pose.joints)


def test_person_results_do_not_depend_on_thread_count(small_scene, config):
    noisy = replace(config, projection=KIND_DS, noise_2d=2.0)
    one = run_scene(small_scene, replace(noisy, threads=1))
    many = run_scene(small_scene, replace(noisy, threads=4))
    for a, b in zip(one.records, many.records):
        assert np.array_equal(a.pred_pose.joints, b.pred_pose.joints)


def test_noise_shows_up_in_the_error(small_scene, config):
    result = process_person(small_scene, 0, small_scene.camera(),
                            replace(config, projection=KIND_DS, noise_3d=30.0))
    assert mpjpe(result.record.gt_pose, result.record.pred_pose) > 1.0


# ---------------------------------------------------------------- runs on disk

def test_a_run_writes_files_that_evaluate_to_the_same_numbers(small_scene, config, tmp_path):
    scene_file = tmp_path / 'scene.json'
    save_scene(small_scene, scene_file)
    run_config = replace(config, projection=KIND_DS, scene=str(scene_file), noise_3d=15.0)
    report = run_pipeline(run_config)

    out = tmp_path / 'out'
    for name in ('gt.jsonl', 'pred.jsonl', 'camera.json', 'report.json', 'curves.csv'):
        assert (out / name).exists()
    assert len(read_jsonl(out / 'pred.jsonl')) == report['records'] - report['failed']

    again = evaluate_run(out / 'gt.jsonl', out / 'pred.jsonl', out / 'camera.json', [110.0])
    assert again['summaries'][KIND_DS]['a_mpjpe_mm'] == \
        pytest.approx(report['summary']['a_mpjpe_mm'], abs=1e-6)
    assert again['summaries'][KIND_DS]['count'] == report['summary']['count']


def test_a_hybrid_run_evaluates_under_its_own_label(small_scene, config, tmp_path):
    scene_file = tmp_path / 'scene.json'
    save_scene(small_scene, scene_file)
    run_pipeline(replace(config, projection=KIND_HYBRID, alpha_t=110.0, fallback_to_ds=True,
                         scene=str(scene_file)))
    out = tmp_path / 'out'
    lines = read_jsonl(out / 'pred.jsonl')
    assert {line['label'] for line in lines} == {'H alpha_t=110'}

    again = evaluate_run(out / 'gt.jsonl', out / 'pred.jsonl', out / 'camera.json', [110.0])
    assert list(again['summaries']) == ['H alpha_t=110']
    assert again['summaries']['H alpha_t=110']['count'] == len(lines)
    assert again['best_alpha_t'] == {'mpjpe': None, 'pck': None}


def test_sweep_compares_every_projection(tmp_path):
    config = RunConfig(seed=5, skeletons=6, threads=2, alpha_ts=[0.0, 110.0],
                       fallback_to_ds=True, out_dir=str(tmp_path))
    report = sweep(config)
    assert set(report['table']) == set(KINDS) | {'H alpha_t=0', 'H alpha_t=110'}
    assert all(row['failed'] == 0 for row in report['table'].values())
    assert set(report['agreement']) == {'0', '110'}
    assert (tmp_path / 'sweep.json').exists() and (tmp_path / 'sweep_curves.csv').exists()


# ---------------------------------------------------------------- image mode

def test_image_mode_writes_crops_and_sidecars(tmp_path, fisheye_camera):
    rng = np.random.default_rng(1)
    save_png(ImageBuffer(rng.integers(0, 256, (1024, 1024, 3), dtype=np.uint8)),
             tmp_path / 'frame.png')
    (tmp_path / 'cam.json').write_text(json.dumps(camera_to_dict(fisheye_camera)),
                                       encoding='utf-8')
    write_jsonl(tmp_path / 'boxes.jsonl', [
        {'id': 'near', 'image': 'frame.png', 'bbox': [100, 100, 800, 800]},
        {'id': 'far', 'image': 'frame.png', 'bbox': [480, 300, 40, 90]},
        {'id': 'broken', 'image': 'frame.png'},
    ])
    config = RunConfig(images=str(tmp_path / 'boxes.jsonl'), camera=str(tmp_path / 'cam.json'),
                       crop_size=64, out_dir=str(tmp_path / 'out'), max_skip_fraction=0.5)
    report = run_pipeline(config)

    assert report['failed'] == 1 and 'broken' in report['failures']
    crops = tmp_path / 'out' / 'crops'
    assert load_png(crops / 'far.png').width == 64
    sidecar = json.loads((crops / 'far.json').read_text(encoding='utf-8'))
    assert sidecar['projection'] == KIND_PH
    assert json.loads((crops / 'near.json').read_text(encoding='utf-8'))['projection'] == KIND_DS


def test_image_mode_needs_a_camera(tmp_path):
    with pytest.raises(ConfigError):
        run_pipeline(RunConfig(images=str(tmp_path / 'boxes.jsonl')))


def test_a_sidecar_is_enough_to_lift_a_prediction(small_scene, tmp_path):
    placed = small_scene.camera()
    bbox = person_bbox(small_scene.skeletons[4], placed)
    crop = make_crop(placed.camera, bbox, KIND_DS, 256)
    write_sidecar(tmp_path / 'p.json', crop, placed.camera, bbox)

    restored = read_sidecar(tmp_path / 'p.json')
    prediction = oracle_predict(small_scene, 4, placed, crop)
    pose = recover_from_sidecar(restored, prediction.rel_pose, prediction.keypoints2d,
                                placed.extrinsics, prediction.weights)
    assert np.allclose(pose.joints, small_scene.skeletons[4].joints, atol=1e-6)
