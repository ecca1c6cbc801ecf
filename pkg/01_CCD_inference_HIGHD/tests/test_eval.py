import math

import numpy as np
import pandas as pd
import pytest

from ccd_counterfactual import CdConfig
from ccd_errors import InvalidInputError
from ccd_eval import (LAMBDA_GRID, METRIC_COLUMNS, Confusion, MetricRow, aggregate_rows, confusion, peak_rows,
                      prf1, random_baseline, random_baseline_row, score_report, score_scenes, summary_lines, sweep,
                      write_metrics_csv)
from ccd_scene import EntityCausalGraph

NODES = ('1', '2', '3')
TRUTH = EntityCausalGraph(NODES, frozenset({('1', '2')}))


def _graph(*edges):
    return EntityCausalGraph(NODES, frozenset(edges))


class TestConfusion:

    def test_perfect(self):
        assert confusion(_graph(('1', '2')), TRUTH) == Confusion(1, 0, 5, 0)

    def test_empty_prediction(self):
        assert confusion(_graph(), TRUTH) == Confusion(0, 0, 5, 1)

    def test_extra_edge(self):
        c = confusion(_graph(('1', '2'), ('3', '2')), TRUTH)
        assert c == Confusion(1, 1, 4, 0)
        assert c.total == 6

    def test_node_mismatch(self):
        with pytest.raises(InvalidInputError):
            confusion(EntityCausalGraph(('1', '2')), TRUTH)


class TestPrf1:

    @pytest.mark.parametrize("counts, expected", [
        ((1, 0, 5, 0), (1.0, 1.0, 1.0)),
        ((0, 0, 6, 0), (1.0, 1.0, 1.0)),
        ((1, 1, 4, 0), (0.5, 1.0, 2 / 3)),
        ((0, 0, 5, 1), (0.0, 0.0, 0.0)),
        ((0, 2, 4, 0), (0.0, 1.0, 0.0)),
    ])
    def test_conventions(self, counts, expected):
        assert prf1(Confusion(*counts)) == pytest.approx(expected)


class TestRandomBaseline:

    def test_extremes(self, synth_scene):
        assert random_baseline(synth_scene, 0.0, 1).edges == frozenset()
        full = random_baseline(synth_scene, 1.0, 1)
        assert len(full.edges) == 6
        assert all(a != b for a, b in full.edges)

    def test_mean_edge_count(self, synth_scene):
        counts = [len(random_baseline(synth_scene, 0.5, seed).edges) for seed in range(2000)]
        assert np.mean(counts) == pytest.approx(3.0, abs=0.1)

    def test_seeded(self, synth_scene):
        assert random_baseline(synth_scene, 0.5, 9) == random_baseline(synth_scene, 0.5, 9)

    def test_bad_probability(self, synth_scene):
        with pytest.raises(InvalidInputError):
            random_baseline(synth_scene, 1.5, 0)

    def test_row(self, synth_scenes):
        row = random_baseline_row(synth_scenes, p=1.0)
        assert row.variant == 'random' and row.reward_threshold is None
        assert row.recall == 1.0 and row.precision == pytest.approx(1 / 6)
        assert row.n_scenes == len(synth_scenes)

    def test_row_without_truth(self):
        row = random_baseline_row([])
        assert row.n_scenes == 0 and math.isnan(row.f1)

    def test_f1_stable_across_seeds(self, synth_scenes):
        # 2000 draws on each of 5 scenes: 10^4 graphs per run
        first = random_baseline_row(synth_scenes, 0.5, seed=0, n_draws=2000)
        second = random_baseline_row(synth_scenes, 0.5, seed=1, n_draws=2000)
        assert abs(first.f1 - second.f1) <= 0.02
        assert first.f1 < 0.5


class TestAggregation:

    def _records(self):
        report = {'scene_id': 's1', 'variant': 'reward', 'lambda_dR': 0.5,
                  'entity_nodes': list(NODES), 'entity_edges': [['1', '2']], 'wall_time_s': 2.0}
        good = score_report(report, TRUTH)
        bad = score_report({**report, 'scene_id': 's2', 'entity_edges': [], 'wall_time_s': 4.0}, TRUTH)
        agency = score_report({**report, 'variant': 'agency', 'lambda_dR': None}, TRUTH)
        return [good, bad, agency]

    def test_macro_average(self):
        rows = aggregate_rows(self._records())
        assert [(r.variant, r.reward_threshold) for r in rows] == [('reward', 0.5), ('agency', None)]
        reward = rows[0]
        assert reward.f1 == pytest.approx(0.5)
        assert reward.wall_time_s == pytest.approx(3.0)
        assert reward.n_scenes == 2
        assert rows[1].f1 == 1.0

    def test_empty(self):
        assert aggregate_rows([]) == []

    def test_peak_prefers_lowest_lambda(self):
        rows = [MetricRow('reward', 0.1, 1.0, 1.0, 0.8, 1.0, 5), MetricRow('reward', 0.5, 1.0, 1.0, 0.8, 1.0, 5),
                MetricRow('reward', 0.9, 1.0, 1.0, 0.4, 1.0, 5)]
        assert peak_rows(rows)['reward'].reward_threshold == 0.1

    def test_metrics_csv(self, tmp_path):
        rows = aggregate_rows(self._records()) + [MetricRow('random', None, 0.2, 0.5, 0.3, 0.0, 2)]
        path = tmp_path / 'metrics.csv'
        write_metrics_csv(rows, path, config_hash='deadbeef0000')
        lines = path.read_text().splitlines()
        assert lines[0] == '# config_hash=deadbeef0000'
        assert lines[1].startswith('# precision=1')
        assert lines[2] == '# reference_peak_f1=reward:0.514;agency:0.649;hybrid:0.643'
        df = pd.read_csv(path, comment='#', keep_default_na=False)
        assert tuple(df.columns) == METRIC_COLUMNS
        assert df['variant'].tolist() == ['reward', 'agency', 'random']
        assert df['lambda'].tolist()[1:] == ['n/a', 'n/a']

    def test_summary(self):
        lines = summary_lines([MetricRow('agency', None, 1.0, 1.0, 1.0, 0.5, 3)], config_hash='abc')
        assert lines[0] == 'config_hash: abc'
        assert 'peak F1 1.000 at lambda n/a' in lines[2]
        assert 'reference High-D peak 0.649' in lines[2]


class TestSweep:

    def test_agency_single_row(self, synth_scenes):
        (row,) = sweep(synth_scenes[:2], 'agency', cfg=CdConfig())
        assert row.reward_threshold is None
        assert row.f1 == 1.0 and row.n_scenes == 2

    def test_reward_row_per_lambda(self, synth_scenes):
        rows = sweep(synth_scenes[:1], 'reward', lambdas=(0.01, 1.0), cfg=CdConfig(variant='reward'))
        assert [r.reward_threshold for r in rows] == [0.01, 1.0]
        assert rows[0].f1 == 1.0
        assert rows[1].recall == 0.0

    def test_unknown_variant(self, synth_scenes):
        with pytest.raises(InvalidInputError):
            sweep(synth_scenes, 'oracle')

    def test_grid(self):
        assert LAMBDA_GRID[0] == 0.01 and LAMBDA_GRID[-1] == 1.0 and len(LAMBDA_GRID) == 11

    def test_agency_beats_random_baseline(self, synth_scenes):
        (agency,) = sweep(synth_scenes, 'agency', cfg=CdConfig())
        random_row = random_baseline_row(synth_scenes, 0.5, seed=0, n_draws=200)
        assert agency.f1 - random_row.f1 >= 0.2

    def test_worker_count_does_not_change_scores(self, synth_scenes):
        serial = score_scenes(synth_scenes[:3], CdConfig(), workers=1)
        parallel = score_scenes(synth_scenes[:3], CdConfig(), workers=2)
        assert [e for _, e in parallel] == [None, None, None]
        assert [s.scene_id for s, _ in parallel] == [s.scene_id for s, _ in serial]
        assert [s.decisions for s, _ in parallel] == [s.decisions for s, _ in serial]
        assert [s.candidates for s, _ in parallel] == [s.candidates for s, _ in serial]

    def test_bad_worker_count(self, synth_scenes):
        with pytest.raises(InvalidInputError):
            score_scenes(synth_scenes, CdConfig(), workers=0)
