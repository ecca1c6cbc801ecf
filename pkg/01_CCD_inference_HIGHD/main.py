"""
Comments to version:
- Subcommands: ingest (High-D style recordings -> scene files), synth (seeded convoy scenes), discover (one report
  per scene), evaluate (metrics table + summary), sweep (all variants over the lambda grid, then evaluate).
- Exit codes: 0 success, 1 input error, 2 some scenes failed.
- Every output file carries the config hash of the run that wrote it.
"""
import argparse
import dataclasses
import glob
import json
import logging
import os
import sys
import timeit

from tqdm import tqdm

from ccd_config import apply_overrides, config_hash, discovery_hash, load_config, setup_logging
from ccd_counterfactual import VARIANTS, discovery_report, result_for, score_candidates
from ccd_errors import InvalidInputError
from ccd_eval import (RANDOM_BASELINE_P, aggregate_rows, random_baseline_row, score_report, score_scenes,
                      summary_lines, write_metrics_csv)
from ccd_ingest import extract_causal_scenes, parse_tracks, write_scene_index
from ccd_scene import decision_to_dict, load_scene, save_scene
from ccd_sim import write_trace_csv
from ccd_synth import generate_synthetic_scene

logger = logging.getLogger('ccd')

# FILES
SCENE_INDEX_NAME = 'scene_index.json'
REPORTS_DIR_NAME = 'reports'
TRACES_DIR_NAME = 'traces'
DECISIONS_DIR_NAME = 'decisions'
METRICS_FILE_NAME = 'metrics.csv'
SUMMARY_FILE_NAME = 'summary.txt'
TRACKS_PATTERN = '*_tracks.csv'

# EXIT CODES
EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_SCENE_FAILURES = 2


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', dest='config', default=None, help='path to the run config (YAML)', type=str)
    common.add_argument('--input_dir', dest='input_dir', default=None, help='path to recordings', type=str)
    common.add_argument('--scene_dir', dest='scene_dir', default=None, help='path to scene files', type=str)
    common.add_argument('--output_dir', dest='output_dir', default=None, help='path to output folder', type=str)
    common.add_argument('--variant', dest='variant', default=None, choices=VARIANTS, help='link test')
    common.add_argument('--lambda', dest='reward_threshold', default=None, type=float,
                        help='reward threshold lambda_dR in (0, 1]')
    common.add_argument('--seed', dest='seed', default=None, help='rng seed', type=int)
    common.add_argument('--workers', dest='workers', default=None, help='worker processes', type=int)
    common.add_argument('--n_scenes', dest='n_scenes', default=None, help='number of synthetic scenes', type=int)
    common.add_argument('--dump-traces', dest='dump_traces', action='store_true',
                        help='write one CSV per (scene, candidate, world)')
    common.add_argument('--dump-decisions', dest='dump_decisions', action='store_true',
                        help='write the extracted decisions of every scene')
    common.add_argument('--verbose', dest='verbose', action='store_true', help='debug logging')

    parser = argparse.ArgumentParser(description='Counterfactual causal discovery on driving scenes')
    sub = parser.add_subparsers(dest='command', required=True)
    for name, help_text in (('ingest', 'extract convoy scenes from recordings'),
                            ('synth', 'generate synthetic convoy scenes'),
                            ('discover', 'run causal discovery on every scene'),
                            ('evaluate', 'score discovery reports against ground truth'),
                            ('sweep', 'discover with every variant over the lambda grid, then evaluate')):
        sub.add_parser(name, parents=[common], help=help_text)
    return parser


# =============================================================================
# HELPERS
# =============================================================================

def _require_dir(path, what):
    if path is None or not os.path.isdir(path):
        raise InvalidInputError(f"{what} '{path}' does not exist")


def _stamp(scene, chash):
    return dataclasses.replace(scene, metadata={**scene.metadata, 'config_hash': chash})


def _scene_files(scene_dir):
    return [p for p in sorted(glob.glob(os.path.join(scene_dir, '*.json')))
            if os.path.basename(p) != SCENE_INDEX_NAME]


def _load_scenes(scene_dir):
    """Scenes of a directory sorted by scene id, plus the number of unreadable files."""
    scenes, failures = [], 0
    for path in _scene_files(scene_dir):
        try:
            scenes.append(load_scene(path))
        except (InvalidInputError, KeyError, TypeError, ValueError) as e:
            logger.error("cannot load scene %s: %s", path, e)
            failures += 1
    return sorted(scenes, key=lambda s: s.scene_id), failures


def cell_name(variant, reward_threshold):
    return variant if variant == 'agency' else f"{variant}_lam{reward_threshold:g}"


def _cells(variants, lambdas):
    return [(v, None) if v == 'agency' else (v, lam) for v in variants for lam in ([None] if v == 'agency' else lambdas)]


def _trace_writer(cfg, scene, chash):
    trace_dir = os.path.join(cfg.paths.output_dir, TRACES_DIR_NAME, scene.scene_id)
    os.makedirs(trace_dir, exist_ok=True)

    def write(link, outcomes):
        stem = f"{link.cause.agent_id}_{link.cause.decision_time:.2f}__{link.effect.agent_id}_{link.effect.decision_time:.2f}"
        for variant, outcome in outcomes.items():
            write_trace_csv(outcome.trace, os.path.join(trace_dir, f"{stem}_{variant.value}.csv"),
                            header_lines=(f"config_hash={chash}", f"scene={scene.scene_id}",
                                          f"candidate={link.label()}", f"world={variant.value}"))
    return write


def _score_all(scenes, cd, cfg, chash):
    if not cfg.discovery.dump_traces:
        return score_scenes(scenes, cd, cfg.run.workers, progress=True)
    out = []
    for scene in tqdm(scenes):
        try:
            out.append((score_candidates(scene, cd, on_worlds=_trace_writer(cfg, scene, chash)), None))
        except Exception as e:
            out.append((None, f"{type(e).__name__}: {e}"))
    return out


def _write_reports(scenes, scored, cells, cfg, chash):
    failures = 0
    dhash = discovery_hash(cfg)
    for scene, (sc, error) in zip(scenes, scored):
        if sc is None:
            logger.warning("scene %s failed: %s", scene.scene_id, error)
            failures += 1
            continue
        if cfg.discovery.dump_decisions:
            decision_dir = os.path.join(cfg.paths.output_dir, DECISIONS_DIR_NAME)
            os.makedirs(decision_dir, exist_ok=True)
            with open(os.path.join(decision_dir, f"{scene.scene_id}_decisions.json"), 'w') as f:
                json.dump({'config_hash': chash, 'scene_id': scene.scene_id,
                           'decisions': [decision_to_dict(d) for d in sc.decisions.all()]}, f, indent=2)
        for variant, lam in cells:
            result = result_for(sc, variant, cfg.discovery.reward_threshold if lam is None else lam)
            report_dir = os.path.join(cfg.paths.output_dir, REPORTS_DIR_NAME, cell_name(variant, lam))
            os.makedirs(report_dir, exist_ok=True)
            with open(os.path.join(report_dir, f"{scene.scene_id}.json"), 'w') as f:
                json.dump({**discovery_report(result, chash), 'discovery_hash': dhash}, f, indent=2)
    return failures


# =============================================================================
# COMMANDS
# =============================================================================

def cmd_ingest(cfg, chash):
    _require_dir(cfg.paths.input_dir, 'input dir')
    os.makedirs(cfg.paths.scene_dir, exist_ok=True)
    params = cfg.scenes.params
    recordings = sorted(glob.glob(os.path.join(cfg.paths.input_dir, TRACKS_PATTERN)))
    all_scenes, failures = [], 0
    for path in recordings:
        try:
            start = timeit.default_timer()
            print("")
            print("Processing:", os.path.basename(path))
            tracks, meta = parse_tracks(path, cfg.scenes.column_map)
            scenes = [_stamp(s, chash) for s in extract_causal_scenes(tracks, meta, params)]
            for scene in scenes:
                save_scene(scene, os.path.join(cfg.paths.scene_dir, f"{scene.scene_id}.json"))
            all_scenes.extend(scenes)
            stop = timeit.default_timer()
            print(f"{meta.recording_id}: {len(scenes)} scene(s) in {round(stop - start, 1)} s")
        except InvalidInputError as e:
            logger.error("There was some problem with the recording. The error is: %s", e)
            failures += 1
    write_scene_index(all_scenes, params, os.path.join(cfg.paths.scene_dir, SCENE_INDEX_NAME), chash)
    logger.info("ingest: %d recording(s), %d scene(s), %d failure(s)", len(recordings), len(all_scenes), failures)
    return EXIT_INPUT_ERROR if failures else EXIT_OK


def cmd_synth(cfg, chash):
    os.makedirs(cfg.paths.scene_dir, exist_ok=True)
    scenes = []
    for i in tqdm(range(cfg.run.n_scenes)):
        scene = _stamp(generate_synthetic_scene(cfg.run.seed + i, cfg.synth), chash)
        save_scene(scene, os.path.join(cfg.paths.scene_dir, f"{scene.scene_id}.json"))
        scenes.append(scene)
    write_scene_index(scenes, cfg.synth, os.path.join(cfg.paths.scene_dir, SCENE_INDEX_NAME), chash)
    certified = sum(bool(s.metadata.get('counterfactual_collision')) for s in scenes)
    if certified < len(scenes):
        logger.warning("%d of %d scene(s) show no counterfactual collision", len(scenes) - certified, len(scenes))
    print(f"synth: {len(scenes)} scene(s), {certified} with a counterfactual collision")
    return EXIT_OK


def cmd_discover(cfg, chash):
    _require_dir(cfg.paths.scene_dir, 'scene dir')
    scenes, load_failures = _load_scenes(cfg.paths.scene_dir)
    if not scenes:
        logger.warning("no scenes in %s", cfg.paths.scene_dir)
        return EXIT_SCENE_FAILURES if load_failures else EXIT_OK
    cd = cfg.cd_config()
    lam = None if cd.variant == 'agency' else cd.reward_threshold
    scored = _score_all(scenes, cd, cfg, chash)
    failures = load_failures + _write_reports(scenes, scored, [(cd.variant, lam)], cfg, chash)
    print(f"discover: {len(scenes) - failures + load_failures} report(s) for {cell_name(cd.variant, lam)}, "
          f"{failures} failure(s)")
    return EXIT_SCENE_FAILURES if failures else EXIT_OK


def cmd_evaluate(cfg, chash):
    _require_dir(cfg.paths.scene_dir, 'scene dir')
    report_paths = sorted(glob.glob(os.path.join(cfg.paths.output_dir, REPORTS_DIR_NAME, '*', '*.json')))
    if not report_paths:
        raise InvalidInputError(f"no discovery reports under {cfg.paths.output_dir}")
    scenes, _ = _load_scenes(cfg.paths.scene_dir)
    truths = {s.scene_id: s.ground_truth for s in scenes if s.ground_truth is not None}

    dhash = discovery_hash(cfg)
    records, skipped, stale, failures = [], set(), 0, 0
    for path in report_paths:
        try:
            with open(path) as f:
                report = json.load(f)
            if report.get('discovery_hash') != dhash:
                stale += 1
                continue
            truth = truths.get(report['scene_id'])
            if truth is None:
                skipped.add(report['scene_id'])
                continue
            records.append(score_report(report, truth))
        except (InvalidInputError, KeyError, ValueError) as e:
            logger.error("cannot score report %s: %s", path, e)
            failures += 1
    if stale:
        logger.warning("%d report(s) written under other discovery settings skipped", stale)
        if stale == len(report_paths):
            raise InvalidInputError(f"no report under {cfg.paths.output_dir} matches discovery settings {dhash}")
    if skipped:
        logger.warning("%d scene(s) without ground truth skipped", len(skipped))

    scored_ids = {r['scene_id'] for r in records}
    rows = aggregate_rows(records)
    rows.append(random_baseline_row([s for s in scenes if s.scene_id in scored_ids], RANDOM_BASELINE_P, cfg.run.seed))
    write_metrics_csv(rows, os.path.join(cfg.paths.output_dir, METRICS_FILE_NAME), chash)
    lines = summary_lines(rows, chash) + [f"scenes skipped without ground truth: {len(skipped)}"]
    with open(os.path.join(cfg.paths.output_dir, SUMMARY_FILE_NAME), 'w') as f:
        f.write('\n'.join(lines) + '\n')
    print('\n'.join(lines))
    return EXIT_SCENE_FAILURES if failures else EXIT_OK


def cmd_sweep(cfg, chash, variants):
    _require_dir(cfg.paths.scene_dir, 'scene dir')
    scenes, load_failures = _load_scenes(cfg.paths.scene_dir)
    if not scenes:
        raise InvalidInputError(f"no scenes in {cfg.paths.scene_dir}")
    scored = _score_all(scenes, cfg.cd_config(), cfg, chash)
    cells = _cells(variants, cfg.discovery.lambdas)
    failures = load_failures + _write_reports(scenes, scored, cells, cfg, chash)
    code = cmd_evaluate(cfg, chash)
    return EXIT_SCENE_FAILURES if failures or code == EXIT_SCENE_FAILURES else code


COMMANDS = {'ingest': cmd_ingest, 'synth': cmd_synth, 'discover': cmd_discover, 'evaluate': cmd_evaluate}


# =============================================================================
# MAIN SCRIPT
# =============================================================================

def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = apply_overrides(load_config(args.config), args)
    except InvalidInputError as e:
        logger.error("Config error: %s", e)
        return EXIT_INPUT_ERROR
    setup_logging(cfg.paths.output_dir, args.verbose)
    chash = config_hash(cfg)
    logger.info("%s: config hash %s", args.command, chash)
    try:
        if args.command == 'sweep':
            variants = (args.variant,) if args.variant else VARIANTS
            return cmd_sweep(cfg, chash, variants)
        return COMMANDS[args.command](cfg, chash)
    except InvalidInputError as e:
        logger.error("%s", e)
        return EXIT_INPUT_ERROR


if __name__ == '__main__':
    sys.exit(main())
