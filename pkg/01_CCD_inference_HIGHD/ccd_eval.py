"""
Scoring of discovered entity graphs against ground truth, lambda sweeps and the random baseline.

Conventions for empty denominators: precision = 1 when tp + fp = 0 and fn = 0 (else 0), recall = 1 when
tp + fn = 0, f1 = 1 when prediction and truth are both empty. Scene metrics are macro averaged.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from ccd_counterfactual import VARIANTS, CdConfig, DiscoveryResult, ScoredScene, result_for, score_candidates
from ccd_errors import InvalidInputError
from ccd_scene import EntityCausalGraph, Scene

logger = logging.getLogger(__name__)

# SWEEP GRID: 0.01 stands in for 0.0
LAMBDA_GRID = (0.01, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
RANDOM_BASELINE_P = 0.5

# Peak F1 reported for the three variants on 3396 High-D scenes; quoted, never recomputed
REFERENCE_PEAK_F1 = {'reward': 0.514, 'agency': 0.649, 'hybrid': 0.643}
REFERENCE_BASELINE_GAP = 0.2

METRIC_COLUMNS = ('variant', 'lambda', 'precision_mean', 'recall_mean', 'f1_mean', 'wall_time_mean_s', 'n_scenes')
CONVENTIONS = ("precision=1 if tp+fp=0 and fn=0 else 0; recall=1 if tp+fn=0; f1=1 if both graphs empty; "
               "macro averaged over scenes")
ROW_ORDER = VARIANTS + ('random',)


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise InvalidInputError(f"negative confusion count in {self}")

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricRow:
    variant: str
    reward_threshold: Optional[float]     # None: not applicable
    precision: float
    recall: float
    f1: float
    wall_time_s: float
    n_scenes: int


def confusion(pred: EntityCausalGraph, truth: EntityCausalGraph) -> Confusion:
    if set(pred.nodes) != set(truth.nodes):
        raise InvalidInputError(f"node sets differ: {sorted(pred.nodes)} vs {sorted(truth.nodes)}")
    p = pred.adjacency().astype(bool)
    t = truth.adjacency().astype(bool)
    off = ~np.eye(len(pred.nodes), dtype=bool)
    return Confusion(int(np.sum(p & t & off)), int(np.sum(p & ~t & off)),
                     int(np.sum(~p & ~t & off)), int(np.sum(~p & t & off)))


def prf1(c: Confusion) -> Tuple[float, float, float]:
    if c.tp + c.fp > 0:
        precision = c.tp / (c.tp + c.fp)
    else:
        precision = 1.0 if c.fn == 0 else 0.0
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn > 0 else 1.0
    errors = c.fp + c.fn
    f1 = 1.0 if c.tp + errors == 0 else 2 * c.tp / (2 * c.tp + errors)
    return precision, recall, f1


def random_baseline(scene: Scene, p, rng_seed) -> EntityCausalGraph:
    """Every ordered pair of distinct agents gets an edge with probability p."""
    if not 0 <= p <= 1:
        raise InvalidInputError(f"p must lie in [0, 1], got {p}")
    nodes = tuple(sorted(scene.agent_ids))
    draw = np.random.default_rng(rng_seed).random((len(nodes), len(nodes))) < p
    np.fill_diagonal(draw, False)
    return EntityCausalGraph(nodes, frozenset((nodes[i], nodes[j]) for i, j in zip(*np.nonzero(draw))))


# =============================================================================
# PER SCENE SCORES
# =============================================================================

def _score(scene_id, variant, reward_threshold, pred, truth, wall_time_s):
    c = confusion(pred, truth)
    precision, recall, f1 = prf1(c)
    return {'scene_id': scene_id, 'variant': variant, 'lambda': reward_threshold,
            'tp': c.tp, 'fp': c.fp, 'tn': c.tn, 'fn': c.fn,
            'precision': precision, 'recall': recall, 'f1': f1, 'wall_time_s': wall_time_s}


def score_result(result: DiscoveryResult, truth: EntityCausalGraph):
    return _score(result.scene_id, result.variant, result.reward_threshold, result.entity_graph, truth,
                  result.wall_time_s)


def score_report(report: Mapping, truth: EntityCausalGraph):
    """Per-scene score record of a discovery report (JSON dict)."""
    pred = EntityCausalGraph(tuple(report['entity_nodes']), frozenset(tuple(e) for e in report['entity_edges']))
    return _score(report['scene_id'], report['variant'], report.get('lambda_dR'), pred, truth,
                  float(report.get('wall_time_s', 0.0)))


# =============================================================================
# AGGREGATION
# =============================================================================

def _row_key(row: MetricRow):
    order = ROW_ORDER.index(row.variant) if row.variant in ROW_ORDER else len(ROW_ORDER)
    return order, -1.0 if row.reward_threshold is None else row.reward_threshold


def aggregate_rows(records: Iterable[Mapping]) -> List[MetricRow]:
    """Macro average of per-scene records per (variant, lambda) cell."""
    df = pd.DataFrame(list(records))
    if df.empty:
        return []
    grouped = df.groupby(['variant', 'lambda'], dropna=False, sort=False)
    agg = grouped.agg(precision=('precision', 'mean'), recall=('recall', 'mean'), f1=('f1', 'mean'),
                      wall_time_s=('wall_time_s', 'mean'), n_scenes=('scene_id', 'count')).reset_index()
    rows = [MetricRow(r['variant'], None if pd.isna(r['lambda']) else float(r['lambda']),
                      float(r['precision']), float(r['recall']), float(r['f1']),
                      float(r['wall_time_s']), int(r['n_scenes']))
            for _, r in agg.iterrows()]
    return sorted(rows, key=_row_key)


def metrics_frame(rows: Sequence[MetricRow]) -> pd.DataFrame:
    return pd.DataFrame([[r.variant, r.reward_threshold, r.precision, r.recall, r.f1, r.wall_time_s, r.n_scenes]
                         for r in rows], columns=list(METRIC_COLUMNS))


def write_metrics_csv(rows: Sequence[MetricRow], path, config_hash=None):
    with open(path, 'w') as f:
        f.write(f"# config_hash={config_hash}\n")
        f.write(f"# {CONVENTIONS}\n")
        peaks = ';'.join(f"{v}:{f1:g}" for v, f1 in REFERENCE_PEAK_F1.items())
        f.write(f"# reference_peak_f1={peaks}\n")
        metrics_frame(rows).to_csv(f, index=False, na_rep='n/a')


def peak_rows(rows: Sequence[MetricRow]) -> Dict[str, MetricRow]:
    """Best f1 row per variant; the lowest lambda wins ties."""
    best = {}
    for row in sorted(rows, key=_row_key):
        if row.variant not in best or row.f1 > best[row.variant].f1:
            best[row.variant] = row
    return best


def random_baseline_row(scenes: Sequence[Scene], p=RANDOM_BASELINE_P, seed=0, n_draws=1) -> MetricRow:
    """Macro averaged scores of n_draws random graphs per scene; scenes without ground truth are ignored."""
    records = []
    for i, scene in enumerate(sorted((s for s in scenes if s.ground_truth is not None), key=lambda s: s.scene_id)):
        for d in range(n_draws):
            pred = random_baseline(scene, p, [seed, i, d])
            records.append(_score(scene.scene_id, 'random', None, pred, scene.ground_truth, 0.0))
    if not records:
        return MetricRow('random', None, math.nan, math.nan, math.nan, 0.0, 0)
    df = pd.DataFrame(records)
    return MetricRow('random', None, float(df['precision'].mean()), float(df['recall'].mean()),
                     float(df['f1'].mean()), 0.0, int(df['scene_id'].nunique()))


def summary_lines(rows: Sequence[MetricRow], config_hash=None) -> List[str]:
    lines = [f"config_hash: {config_hash}", f"conventions: {CONVENTIONS}"]
    for variant, row in peak_rows(rows).items():
        lam = 'n/a' if row.reward_threshold is None else f"{row.reward_threshold:g}"
        line = f"{variant:>7}: peak F1 {row.f1:.3f} at lambda {lam} (P {row.precision:.3f}, R {row.recall:.3f}, " \
               f"{row.n_scenes} scenes, {row.wall_time_s:.2f} s/scene)"
        if variant in REFERENCE_PEAK_F1:
            line += f"; reference High-D peak {REFERENCE_PEAK_F1[variant]:.3f}"
        lines.append(line)
    return lines


# =============================================================================
# SWEEP
# =============================================================================

def _score_worker(job):
    scene, cfg = job
    try:
        return score_candidates(scene, cfg), None
    except Exception as e:
        return None, f"{type(e).__name__}: {e}"


def score_scenes(scenes: Sequence[Scene], cfg: CdConfig, workers=1, progress=False
                 ) -> List[Tuple[Optional[ScoredScene], Optional[str]]]:
    """Four-world scoring of every scene, in input order whatever the worker count. Failures come back as messages."""
    if workers < 1:
        raise InvalidInputError(f"workers must be >= 1, got {workers}")
    jobs = [(s, cfg) for s in scenes]
    if workers == 1:
        results = map(_score_worker, jobs)
        return list(tqdm(results, total=len(jobs), disable=not progress))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(tqdm(pool.map(_score_worker, jobs), total=len(jobs), disable=not progress))


def sweep(scenes: Sequence[Scene], variant, lambdas: Sequence[float] = LAMBDA_GRID, cfg: CdConfig = CdConfig(),
          workers=1) -> List[MetricRow]:
    """
    One row per lambda (a single row for the agency variant, which ignores lambda). Simulations run once per
    scene; scenes without ground truth are skipped, failing scenes are logged and left out of the means.
    """
    if variant not in VARIANTS:
        raise InvalidInputError(f"unknown variant '{variant}'")
    usable = [s for s in scenes if s.ground_truth is not None]
    if len(usable) < len(scenes):
        logger.warning("%d scene(s) without ground truth skipped", len(scenes) - len(usable))
    cells = [None] if variant == 'agency' else list(lambdas)

    records = []
    for scene, (scored, error) in zip(usable, score_scenes(usable, cfg, workers)):
        if scored is None:
            logger.warning("scene %s failed: %s", scene.scene_id, error)
            continue
        for lam in cells:
            result = result_for(scored, variant, cfg.reward_threshold if lam is None else lam)
            records.append(score_result(result, scene.ground_truth))
    return aggregate_rows(records)
