"""The command line, end to end, in a scratch directory."""

from __future__ import annotations

import argparse
import csv
import io
import json

import numpy as np
import pytest

import main
from conftest import fisheye
from scripts import settings as settings_module
from scripts import utils
from scripts.camera_models import camera_to_dict
from scripts.crop_reprojection import ImageBuffer, make_crop
from scripts.imaging import load_png, save_png
from scripts.models import KIND_DS, KIND_PH, Pose3D
from scripts.records import read_jsonl, write_jsonl
from scripts.scene import oracle_predict, person_bbox
from scripts.sidecar import write_sidecar
from scripts.spatial_metrics import comd, mbba, mpja, select_projection


@pytest.fixture(autouse=True)
def quiet_cli(settings, monkeypatch):
    """Private settings, and no log file written into the project."""
    monkeypatch.setattr(settings_module, '_settings', settings)
    monkeypatch.setattr(utils, '_CONFIGURED', True)
    settings.set('FISHREPRO_THREADS', 2)


@pytest.fixture
def fisheye_files(tmp_path):
    rng = np.random.default_rng(1)
    save_png(ImageBuffer(rng.integers(0, 256, (1024, 1024, 3), dtype=np.uint8)),
             tmp_path / 'frame.png')
    (tmp_path / 'cam.json').write_text(json.dumps(camera_to_dict(fisheye())), encoding='utf-8')
    return tmp_path / 'frame.png', tmp_path / 'cam.json'


def test_synth_then_run_then_evaluate(tmp_path, capsys):
    scene = tmp_path / 'scene.json'
    assert main.main(['synth', '--seed', '3', '--skeletons', '6', '--out', str(scene),
                      '--gt', str(tmp_path / 'scene_gt.jsonl')]) == 0
    assert len(read_jsonl(tmp_path / 'scene_gt.jsonl')) == 6

    out = tmp_path / 'out'
    assert main.main(['run', '--scene', str(scene), '--projection', 'ds',
                      '--out-dir', str(out)]) == 0
    assert 'A-MPJPE' in capsys.readouterr().out
    assert len(read_jsonl(out / 'pred.jsonl')) == 6

    assert main.main(['evaluate', '--gt', str(out / 'gt.jsonl'), '--pred',
                      str(out / 'pred.jsonl'), '--camera', str(out / 'camera.json'),
                      '--out', str(tmp_path / 'report.json'),
                      '--curves', str(tmp_path / 'curves.csv')]) == 0
    report = json.loads((tmp_path / 'report.json').read_text(encoding='utf-8'))
    assert report['summaries'][KIND_DS]['count'] == 6
    assert (tmp_path / 'curves.csv').exists()


def test_a_run_config_file_sits_between_settings_and_flags(tmp_path):
    (tmp_path / 'run.json').write_text(json.dumps({'projection': 'PH', 'skeletons': 2,
                                                   'fallback_to_ds': True}), encoding='utf-8')
    out = tmp_path / 'out'
    assert main.main(['--config', str(tmp_path / 'run.json'), 'run', '--seed', '4',
                      '--skeletons', '3', '--out-dir', str(out)]) == 0
    report = json.loads((out / 'report.json').read_text(encoding='utf-8'))
    assert report['label'] == KIND_PH
    assert report['records'] == 3


def test_triangulating_synthetic_detections(tmp_path):
    files = {name: tmp_path / name for name in ('scene.json', 'det.jsonl', 'rig.json')}
    assert main.main(['synth', '--seed', '3', '--skeletons', '4', '--out',
                      str(files['scene.json']), '--detections', str(files['det.jsonl']),
                      '--rig-out', str(files['rig.json'])]) == 0
    assert main.main(['triangulate', '--rig', str(files['rig.json']), '--detections',
                      str(files['det.jsonl']), '--out', str(tmp_path / 'tri.jsonl')]) == 0
    lines = read_jsonl(tmp_path / 'tri.jsonl')
    assert [line['id'] for line in lines] == [f'person-{i:05d}' for i in range(4)]


def test_reproject_writes_a_crop_and_its_sidecar(fisheye_files, tmp_path):
    image, camera = fisheye_files
    out = tmp_path / 'crop.png'
    assert main.main(['reproject', '--camera', str(camera), '--bbox', '480,300,40,90',
                      '--out-kind', 'ds', '--out-size', '64', str(image), str(out)]) == 0
    sidecar = json.loads(out.with_suffix('.json').read_text(encoding='utf-8'))
    assert sidecar['projection'] == KIND_DS
    assert sidecar['output_camera']['width'] == 64
    crop = load_png(out)
    assert (crop.width, crop.height) == (64, 64)


def test_reproject_defaults_to_the_hybrid_choice(fisheye_files, tmp_path):
    image, camera = fisheye_files
    out = tmp_path / 'crop.png'
    assert main.main(['reproject', '--camera', str(camera), '--bbox', '480,300,40,90',
                      str(image), str(out)]) == 0
    sidecar = json.loads(out.with_suffix('.json').read_text(encoding='utf-8'))
    assert sidecar['projection'] == KIND_PH
    assert sidecar['mbba'] < 110.0


def test_angles_reports_the_hybrid_choice(fisheye_files, tmp_path, capsys):
    _, camera = fisheye_files
    assert main.main(['angles', '--camera', str(camera), '--bbox', '0,0,1024,1024']) == 0
    assert f'-> {KIND_DS}' in capsys.readouterr().out
    assert main.main(['angles', '--camera', str(camera)]) == 2


def test_angles_writes_one_csv_row_per_pose(small_scene, tmp_path, capsys):
    placed = small_scene.camera()
    (tmp_path / 'cam.json').write_text(json.dumps(camera_to_dict(placed.camera)),
                                       encoding='utf-8')
    poses, boxes = {}, {}
    for index, skeleton in enumerate(small_scene.skeletons):
        rid = f'p{index}'
        poses[rid] = Pose3D(placed.extrinsics.camera_from_world(skeleton.joints))
        if index % 2 == 0:
            boxes[rid] = person_bbox(skeleton, placed)
    write_jsonl(tmp_path / 'poses.jsonl',
                [{'id': rid, 'pose': pose.to_list()} for rid, pose in poses.items()])
    write_jsonl(tmp_path / 'boxes.jsonl',
                [{'id': rid, 'bbox': box.as_xywh()} for rid, box in boxes.items()])
    capsys.readouterr()

    assert main.main(['angles', '--camera', str(tmp_path / 'cam.json'), '--poses',
                      str(tmp_path / 'poses.jsonl'), '--bboxes',
                      str(tmp_path / 'boxes.jsonl'), '--alpha-t', '110']) == 0
    reader = csv.DictReader(io.StringIO(capsys.readouterr().out))
    assert tuple(reader.fieldnames) == ('id', 'MPJA_deg', 'MBBA_deg', 'CoMD_mm', 'H_choice')
    rows = {row['id']: row for row in reader}
    assert set(rows) == set(poses)
    for rid, pose in poses.items():
        row = rows[rid]
        assert float(row['MPJA_deg']) == pytest.approx(mpja(pose), abs=1e-3)
        assert float(row['CoMD_mm']) == pytest.approx(comd(pose), abs=0.1)
        if rid in boxes:
            angle = mbba(boxes[rid], placed.camera).degrees
            assert float(row['MBBA_deg']) == pytest.approx(angle, abs=1e-3)
        else:
            angle = mpja(pose)
            assert row['MBBA_deg'] == ''
        assert row['H_choice'] == select_projection(angle, 110.0).kind



def test_recover_lifts_a_prediction_from_its_sidecar(small_scene, tmp_path):
    placed = small_scene.camera()
    bbox = person_bbox(small_scene.skeletons[5], placed)
    crop = make_crop(placed.camera, bbox, KIND_DS, 256)
    write_sidecar(tmp_path / 'p.json', crop, placed.camera, bbox)
    prediction = oracle_predict(small_scene, 5, placed, crop)
    (tmp_path / 'pred.json').write_text(json.dumps({
        'rel_pose': prediction.rel_pose.to_list(),
        'keypoints2d': prediction.keypoints2d.tolist(),
        'weights': prediction.weights.tolist()}), encoding='utf-8')

    assert main.main(['recover', '--sidecar', str(tmp_path / 'p.json'), '--prediction',
                      str(tmp_path / 'pred.json'), '--out', str(tmp_path / 'pose.json')]) == 0
    pose = json.loads((tmp_path / 'pose.json').read_text(encoding='utf-8'))
    assert np.allclose(pose['pose'], small_scene.skeletons[5].joints, atol=1e-6)


def test_geometry_errors_exit_with_two(tmp_path, capsys):
    assert main.main(['synth', '--mpja-range', '150,120', '--out',
                      str(tmp_path / 'scene.json')]) == 2
    assert 'Error' in capsys.readouterr().out


def test_unknown_projections_are_refused_by_the_parser():
    with pytest.raises(SystemExit):
        main.main(['run', '--projection', 'XX'])


def test_every_flag_is_documented():
    parser = main.build_parser()
    (commands,) = [a for a in parser._actions if isinstance(a, argparse._SubParsersAction)]
    for name, command in [('fishrepro', parser), *commands.choices.items()]:
        for action in command._actions:
            if isinstance(action, argparse._SubParsersAction):
                continue
            assert action.help, f'{name}: {action.option_strings or action.dest} has no help'
