"""fishrepro - fisheye-aware crops, absolute 3D pose recovery and its evaluation.

    python main.py synth --seed 1 --skeletons 200 --out scene.json
    python main.py run --scene scene.json --projection H --alpha-t 110 --out-dir out
    python main.py evaluate --gt out/gt.jsonl --pred out/pred.jsonl --camera out/camera.json
    python main.py sweep --skeletons 300 --alpha-ts 0,110,135,180
    python main.py triangulate --rig rig.json --detections det.jsonl --out gt.jsonl
    python main.py reproject --camera cam.json --bbox 480,300,40,90 --out-kind DS in.png crop.png
    python main.py angles --camera cam.json --poses poses.jsonl --bboxes boxes.jsonl
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from colorama import Fore, Style, just_fix_windows_console

from scripts.camera_models import load_camera
from scripts.crop_reprojection import make_crop
from scripts.evaluation import evaluate_run, write_curves, write_report
from scripts.imaging import load_png, save_png
from scripts.models import (KIND_HYBRID, KINDS, BoundingBox, ConfigError, Extrinsics,
                            GeometryError, Pose3D, RecordSkipError)
from scripts.paths import atomic_write_text
from scripts.pipeline import RunConfig, load_run_config, recover_from_sidecar, run_pipeline, sweep
from scripts.records import read_jsonl, write_jsonl
from scripts.scene import default_rig, generate_scene, save_scene, scene_detections, \
    scene_ground_truth
from scripts.settings import get_settings
from scripts.sidecar import read_sidecar, write_sidecar
from scripts.spatial_metrics import comd, mbba, mpja, select_projection
from scripts.triangulation import (default_topology, load_rig, load_topology, rig_to_dict,
                                   triangulate_skeleton, views_from_record)
from scripts.utils import format_number, format_table, parse_float_list, setup_logging
from scripts.version import APP_VERSION
from scripts.workers import parallel_map

logger = logging.getLogger('fishrepro')

LABELS = KINDS + (KIND_HYBRID,)


# ------------------------------------------------------------------------- helpers

def _bbox(text: str) -> BoundingBox:
    try:
        x, y, w, h = parse_float_list(text)
    except ValueError:
        raise argparse.ArgumentTypeError('expected x,y,w,h')
    return BoundingBox.from_xywh(x, y, w, h)


def _angles(text: str) -> List[float]:
    try:
        return parse_float_list(text)
    except ValueError:
        raise argparse.ArgumentTypeError('expected comma-separated degrees')


def _say(text: str, colour: str = '') -> None:
    print(f'{colour}{text}{Style.RESET_ALL}' if colour else text)


def _summary_rows(table: Dict[str, Dict[str, Any]]) -> List[List[str]]:
    return [[label, format_number(row.get('mpjpe_mm')), format_number(row.get('a_mpjpe_mm')),
             format_number(row.get('pck150_pct')), format_number(row.get('a_pck150_pct')),
             str(row.get('count', 0))] for label, row in table.items()]


SUMMARY_HEADER = ['LABEL', 'MPJPE', 'A-MPJPE', 'PCK150', 'A-PCK150', 'N']


# ------------------------------------------------------------------------- commands

def cmd_reproject(args, settings) -> int:
    camera = load_camera(args.camera)
    kind = args.out_kind
    angle = mbba(args.bbox, camera).degrees
    if kind == KIND_HYBRID:
        kind = select_projection(angle, args.alpha_t).kind
    crop = make_crop(camera, args.bbox, kind, args.out_size, src=load_png(args.input),
                     margin=settings.get_float('FISHREPRO_ZOOM_MARGIN'))
    save_png(crop.image, args.output)
    sidecar = write_sidecar(args.output.with_suffix('.json'), crop, camera, args.bbox,
                            {'projection': kind, 'mbba': angle})
    _say(f'{kind} crop written to {args.output} (MBBA {angle:.1f} deg, '
         f'f={crop.output_camera.intrinsics.fx:.1f})', Fore.GREEN)
    if sidecar:
        print(f'Sidecar: {sidecar}')
    return 0


ANGLE_COLUMNS = ('id', 'MPJA_deg', 'MBBA_deg', 'CoMD_mm', 'H_choice')


def _boxes_by_id(path: Optional[Path]) -> Dict[str, BoundingBox]:
    boxes = {}
    for line in read_jsonl(path) if path else []:
        try:
            boxes[str(line['id'])] = BoundingBox.from_xywh(*line['bbox'])
        except (KeyError, TypeError, ValueError) as exc:
            logger.warning('Box line %r skipped: %s', line.get('id'), exc)
    return boxes


def cmd_angles(args, settings) -> int:
    camera = load_camera(args.camera)
    if args.bbox is not None:
        result = mbba(args.bbox, camera)
        choice = select_projection(result.degrees, args.alpha_t)
        print(f'MBBA {result.degrees:.2f} deg -> {choice.kind} at alpha_t={args.alpha_t:g}'
              + (f'  ({result.skipped} sample(s) skipped)' if result.skipped else ''))
    if args.poses is not None:
        boxes = _boxes_by_id(args.bboxes)
        writer = csv.writer(sys.stdout, lineterminator='\n')
        writer.writerow(ANGLE_COLUMNS)
        for position, line in enumerate(read_jsonl(args.poses)):
            record_id = str(line.get('id', position))
            pose = Pose3D(line['pose'])
            joint_angle = mpja(pose)
            box = boxes.get(record_id)
            box_angle = mbba(box, camera).degrees if box is not None else None
            # without a box the hybrid falls back to the joints' own angle
            choice = select_projection(joint_angle if box_angle is None else box_angle,
                                       args.alpha_t)
            writer.writerow([record_id, f'{joint_angle:.3f}',
                             '' if box_angle is None else f'{box_angle:.3f}',
                             f'{comd(pose):.1f}', choice.kind])
    if args.bbox is None and args.poses is None:
        _say('Give --bbox, --poses or both.', Fore.YELLOW)
        return 2
    return 0



def cmd_evaluate(args, settings) -> int:
    report = evaluate_run(args.gt, args.pred, args.camera, args.alpha_t,
                          bin_width=settings.get_float('FISHREPRO_BIN_WIDTH'),
                          threshold_mm=settings.get_float('FISHREPRO_PCK_THRESHOLD'),
                          root_index=settings.get_int('FISHREPRO_ROOT_INDEX'),
                          max_skip_fraction=settings.get_float('FISHREPRO_MAX_SKIP_FRACTION'))
    write_report(report, args.out)
    if args.curves:
        write_curves(report, args.curves)
    print(format_table(SUMMARY_HEADER, _summary_rows(report['summaries'])))
    for alpha_t, rate in report['agreement'].items():
        print(f'MPJA/MBBA agreement at alpha_t={alpha_t}: {format_number(100 * rate)}%')
    return 0


def cmd_triangulate(args, settings) -> int:
    rig = {placed.camera_id: placed for placed in load_rig(args.rig)}
    topology = load_topology(args.topology) if args.topology else default_topology()
    lambda_sym = args.lambda_sym if args.lambda_sym is not None \
        else settings.get_float('FISHREPRO_LAMBDA_SYM')
    delta = settings.get_float('FISHREPRO_HUBER_DELTA')
    records = read_jsonl(args.detections)

    def solve(record: Dict[str, Any]) -> Dict[str, Any]:
        result = triangulate_skeleton(views_from_record(record, rig), topology, lambda_sym, delta)
        return {'id': record.get('id'), **result.to_dict()}

    outcomes = parallel_map(solve, records, threads=settings.get_int('FISHREPRO_THREADS'),
                            catch=(GeometryError, KeyError, TypeError))
    solved = []
    for outcome, record in zip(outcomes, records):
        if outcome.ok:
            solved.append(outcome.value)
        else:
            logger.warning('Could not triangulate %s: %s', record.get('id'), outcome.error)
    write_jsonl(args.out, solved)
    failed = len(records) - len(solved)
    _say(f'Triangulated {len(solved)} of {len(records)} skeleton(s) into {args.out}',
         Fore.GREEN if not failed else Fore.YELLOW)
    if records and failed / len(records) > settings.get_float('FISHREPRO_MAX_SKIP_FRACTION'):
        raise RecordSkipError(f'{failed} of {len(records)} skeletons failed')
    return 0


def cmd_synth(args, settings) -> int:
    scene = generate_scene(args.seed, args.skeletons, tuple(args.mpja_range),
                           default_rig(args.aux_cameras))
    save_scene(scene, args.out)
    print(f'Scene with {len(scene.skeletons)} skeleton(s) written to {args.out}')
    if args.detections:
        write_jsonl(args.detections,
                    scene_detections(scene, args.noise_2d, np.random.default_rng(args.seed)))
        print(f'Detections: {args.detections}')
    if args.gt:
        write_jsonl(args.gt, scene_ground_truth(scene))
        print(f'Ground truth: {args.gt}')
    if args.rig_out:
        atomic_write_text(args.rig_out, json.dumps(rig_to_dict(scene.rig), indent=2) + '\n')
        print(f'Rig: {args.rig_out}')
    return 0


def _run_config(args, settings) -> RunConfig:
    """Settings, then --config, then explicit flags."""
    config = RunConfig.from_settings(settings)
    if args.config:
        config = load_run_config(args.config, config)
    return config.overridden({
        'projection': getattr(args, 'projection', None),
        'alpha_t': getattr(args, 'alpha_t', None),
        'alpha_ts': getattr(args, 'alpha_ts', None),
        'crop_size': args.size,
        'scene': str(args.scene) if args.scene else None,
        'seed': args.seed,
        'skeletons': args.skeletons,
        'mpja_range': tuple(args.mpja_range) if args.mpja_range else None,
        'noise_2d': args.noise_2d,
        'noise_3d': args.noise_3d,
        'fallback_to_ds': True if args.fallback_to_ds else None,
        'images': str(args.images) if getattr(args, 'images', None) else None,
        'camera': str(args.camera) if getattr(args, 'camera', None) else None,
        'out_dir': str(args.out_dir) if args.out_dir else None,
    })


def cmd_run(args, settings) -> int:
    config = _run_config(args, settings)
    report = run_pipeline(config)
    if 'summary' in report:
        print(format_table(SUMMARY_HEADER, _summary_rows({report['label']: report['summary']})))
        print(f'{report["failed"]} of {report["records"]} record(s) failed; '
              f'outputs in {config.out_dir}')
    else:
        print(f'Cropped {report["records"] - report["failed"]} of {report["records"]} '
              f'person(s) into {Path(config.out_dir) / "crops"}')
    return 0


def cmd_sweep(args, settings) -> int:
    config = _run_config(args, settings)
    report = sweep(config)
    rows = _summary_rows(report['table'])
    for row, values in zip(rows, report['table'].values()):
        row.append(str(values.get('failed', 0)))
    print(format_table(SUMMARY_HEADER + ['FAILED'], rows))
    best = report['best_alpha_t']
    print(f'Best alpha_t by MPJPE: {best["mpjpe"]}, by PCK150: {best["pck"]}')
    return 0


def cmd_recover(args, settings) -> int:
    crop = read_sidecar(args.sidecar)
    try:
        prediction = json.loads(Path(args.prediction).read_text(encoding='utf-8'))
        rel_pose = Pose3D(prediction['rel_pose'])
        keypoints = np.asarray(prediction['keypoints2d'], dtype=float)
        weights = prediction.get('weights')
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f'bad prediction file {args.prediction}: {exc}') from exc
    extrinsics = Extrinsics.identity()
    if args.extrinsics:
        extrinsics = Extrinsics.from_dict(json.loads(Path(args.extrinsics).read_text('utf-8')))
    pose = recover_from_sidecar(crop, rel_pose, keypoints, extrinsics, weights)
    atomic_write_text(args.out, json.dumps({'pose': pose.to_list(), 'frame': pose.frame},
                                           indent=2) + '\n')
    _say(f'Absolute pose written to {args.out}', Fore.GREEN)
    return 0


COMMANDS = {
    'reproject': cmd_reproject,
    'angles': cmd_angles,
    'evaluate': cmd_evaluate,
    'triangulate': cmd_triangulate,
    'synth': cmd_synth,
    'run': cmd_run,
    'sweep': cmd_sweep,
    'recover': cmd_recover,
}


# ------------------------------------------------------------------------- parser

def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--size', type=int, metavar='PX', help='output crop side, pixels')
    parser.add_argument('--scene', type=Path, help='scene JSON from `synth`; else one is generated')
    parser.add_argument('--seed', type=int, help='seed for a generated scene')
    parser.add_argument('--skeletons', type=int, help='people in a generated scene')
    parser.add_argument('--mpja-range', type=_angles, metavar='LO,HI',
                        help='MPJA range for a generated scene, degrees')
    parser.add_argument('--noise-2d', type=float, metavar='PX',
                        help='Gaussian keypoint noise of the oracle, pixels')
    parser.add_argument('--noise-3d', type=float, metavar='MM',
                        help='Gaussian relative-pose noise of the oracle, mm')
    parser.add_argument('--fallback-to-ds', action='store_true',
                        help='use DS instead of failing when a box exceeds the pinhole FOV')
    parser.add_argument('--out-dir', type=Path, help='where reports are written')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='fishrepro',
        description='Fisheye-aware person crops, absolute 3D pose recovery and evaluation.')
    parser.add_argument('--version', action='version', version=f'%(prog)s {APP_VERSION}')
    parser.add_argument('--log-level', default=None,
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'],
                        help='console log level (default: FISHREPRO_LOG_LEVEL)')
    parser.add_argument('--config', type=Path, metavar='RUN_JSON',
                        help='run settings overriding .env for this run')
    commands = parser.add_subparsers(dest='command', required=True)

    p = commands.add_parser('reproject', help='warp one person into a virtual crop')
    p.add_argument('--camera', type=Path, required=True, help='input camera JSON')
    p.add_argument('--bbox', type=_bbox, required=True, metavar='X,Y,W,H',
                   help='person box in the input image, pixels')
    p.add_argument('--out-kind', type=str.upper, choices=LABELS, default=KIND_HYBRID,
                   help='projection of the crop; H picks PH or DS from the box angle')
    p.add_argument('--alpha-t', type=float, default=110.0, metavar='DEG',
                   help='hybrid threshold for --out-kind H, degrees')
    p.add_argument('--out-size', type=int, default=256, metavar='PX',
                   help='side of the square crop, pixels')
    p.add_argument('input', type=Path, help='input PNG')
    p.add_argument('output', type=Path, help='crop PNG; the sidecar JSON goes beside it')

    p = commands.add_parser('angles', help='MPJA, CoMD and MBBA, with the hybrid choice')
    p.add_argument('--camera', type=Path, required=True, help='camera JSON')
    p.add_argument('--bbox', type=_bbox, metavar='X,Y,W,H',
                   help='print the MBBA and hybrid choice of one box')
    p.add_argument('--poses', type=Path,
                   help='JSONL of {"id", "pose"} in the camera frame, mm; prints CSV')
    p.add_argument('--bboxes', type=Path,
                   help='JSONL of {"id", "bbox": [x, y, w, h]} joined to --poses by id; '
                        'H_choice uses MBBA where a box exists, else MPJA')
    p.add_argument('--alpha-t', type=float, default=110.0, metavar='DEG',
                   help='hybrid threshold, degrees')

    p = commands.add_parser('evaluate', help='score predictions against ground truth')
    p.add_argument('--gt', type=Path, required=True, help='ground-truth JSONL')
    p.add_argument('--pred', type=Path, required=True, help='prediction JSONL')
    p.add_argument('--camera', type=Path, required=True,
                   help='camera JSON the MPJA and MBBA are measured in')
    p.add_argument('--alpha-t', type=_angles, default=[110.0, 135.0], metavar='DEG,...',
                   help='hybrid thresholds to compare, degrees')
    p.add_argument('--out', type=Path, default=Path('report.json'), help='report JSON')
    p.add_argument('--curves', type=Path,
                   help='per-bin CSV; labels after the first go to sibling files')

    p = commands.add_parser('triangulate', help='multi-view skeletons as pseudo ground truth')
    p.add_argument('--rig', type=Path, required=True, help='rig JSON of placed cameras')
    p.add_argument('--detections', type=Path, required=True,
                   help='JSONL of per-camera 2D detections')
    p.add_argument('--topology', type=Path, help='skeleton JSON (default: 17 joints)')
    p.add_argument('--lambda-sym', type=float,
                   help='bone symmetry weight (default: FISHREPRO_LAMBDA_SYM)')
    p.add_argument('--out', type=Path, default=Path('gt.jsonl'), help='skeleton JSONL')

    p = commands.add_parser('synth', help='generate a synthetic scene')
    p.add_argument('--seed', type=int, default=1, help='random seed')
    p.add_argument('--skeletons', type=int, default=100, help='number of people')
    p.add_argument('--mpja-range', type=_angles, default=[0.0, 180.0], metavar='LO,HI',
                   help='MPJA range the people are spread over, degrees')
    p.add_argument('--aux-cameras', type=int, default=4,
                   help='extra pinhole cameras around the scene')
    p.add_argument('--noise-2d', type=float, default=0.0, metavar='PX',
                   help='Gaussian noise on the written detections, pixels')
    p.add_argument('--out', type=Path, default=Path('scene.json'), help='scene JSON')
    p.add_argument('--detections', type=Path, help='also write multi-view detections JSONL')
    p.add_argument('--gt', type=Path, help='also write ground-truth JSONL')
    p.add_argument('--rig-out', type=Path, help='also write the rig JSON')

    p = commands.add_parser('run', help='the whole pipeline over a scene or a folder of images')
    p.add_argument('--projection', type=str.upper, choices=LABELS,
                   help='crop projection, or H for the hybrid')
    p.add_argument('--alpha-t', type=float, metavar='DEG', help='hybrid threshold, degrees')
    p.add_argument('--images', type=Path, help='JSONL of {"id", "image", "bbox"}: crop only')
    p.add_argument('--camera', type=Path, help='camera JSON for --images')
    _add_run_flags(p)

    p = commands.add_parser('sweep', help='every projection and H over one scene')
    p.add_argument('--alpha-ts', type=_angles, metavar='DEG,...',
                   help='hybrid thresholds to run, degrees')
    _add_run_flags(p)

    p = commands.add_parser('recover', help='lift a network prediction for a crop')
    p.add_argument('--sidecar', type=Path, required=True, help='crop sidecar JSON')
    p.add_argument('--prediction', type=Path, required=True,
                   help='JSON with rel_pose, keypoints2d and optional weights')
    p.add_argument('--extrinsics', type=Path, help='input camera placement JSON')
    p.add_argument('--out', type=Path, default=Path('pose.json'), help='absolute pose JSON')
    return parser



def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = get_settings()
    setup_logging(args.log_level or settings.get('FISHREPRO_LOG_LEVEL', 'INFO'))
    just_fix_windows_console()
    logger.debug('Settings file: %s  (exists=%s)', settings.env_path, settings.env_path.exists())

    try:
        return COMMANDS[args.command](args, settings)
    except RecordSkipError as exc:
        _say(f'Too many failures: {exc}', Fore.RED)
        return 1
    except GeometryError as exc:
        _say(f'Error: {exc}', Fore.RED)
        return 2
    except KeyboardInterrupt:
        print('\nInterrupted')
        return 130


if __name__ == '__main__':
    sys.exit(main())
