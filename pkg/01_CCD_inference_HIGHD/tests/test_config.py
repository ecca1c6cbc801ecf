import argparse
import dataclasses

import pytest

from ccd_config import RunConfig, apply_overrides, config_from_dict, config_hash, discovery_hash, load_config
from ccd_errors import InvalidInputError


def _args(**values):
    defaults = dict(input_dir=None, scene_dir=None, output_dir=None, variant=None, reward_threshold=None,
                    seed=None, workers=None, n_scenes=None, dump_traces=False, dump_decisions=False)
    return argparse.Namespace(**{**defaults, **values})


class TestLoadConfig:

    def test_defaults_without_file(self):
        assert load_config(None) == RunConfig()

    def test_yaml_sections(self, tmp_path):
        path = tmp_path / 'run.yaml'
        path.write_text('extract:\n  min_speed_delta: 2.0\n'
                        'discovery:\n  variant: hybrid\n  lambdas: [0.1, 0.5]\n'
                        'scenes:\n  max_headway: 2.5\n  column_map: {lane: laneId}\n'
                        'synth:\n  dt: 0.1\n')
        cfg = load_config(str(path))
        assert cfg.extract.min_speed_delta == 2.0
        assert cfg.discovery.variant == 'hybrid' and cfg.discovery.lambdas == (0.1, 0.5)
        assert cfg.scenes.params.max_headway == 2.5
        assert cfg.scenes.column_map == {'lane': 'laneId'}
        assert cfg.synth.dt == 0.1

    def test_empty_file(self, tmp_path):
        path = tmp_path / 'run.yaml'
        path.write_text('')
        assert load_config(str(path)) == RunConfig()

    @pytest.mark.parametrize("raw", [
        {'extract': {'accel_treshold': 0.3}},
        {'extrct': {}},
        {'run': [1, 2]},
        {'run': {'workers': 0}},
        {'synth': {'headway': -1.0}},
    ])
    def test_rejected(self, raw):
        with pytest.raises(InvalidInputError):
            config_from_dict(raw)

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / 'run.yaml'
        path.write_text('paths: [unclosed\n')
        with pytest.raises(InvalidInputError):
            load_config(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(InvalidInputError):
            load_config(str(tmp_path / 'absent.yaml'))


class TestOverrides:

    def test_flags_replace_file_values(self):
        cfg = apply_overrides(RunConfig(), _args(output_dir='/tmp/out', variant='reward', reward_threshold=0.3,
                                                 workers=4, dump_traces=True))
        assert cfg.paths.output_dir == '/tmp/out'
        assert cfg.discovery.variant == 'reward'
        assert cfg.discovery.reward_threshold == 0.3 and cfg.discovery.lambdas == (0.3,)
        assert cfg.run.workers == 4
        assert cfg.discovery.dump_traces

    def test_unset_flags_keep_values(self):
        assert apply_overrides(RunConfig(), _args()) == RunConfig()

    def test_cd_config(self):
        cfg = config_from_dict({'discovery': {'variant': 'hybrid', 'reward_threshold': 0.4, 'dt': 0.1}})
        cd = cfg.cd_config()
        assert cd.variant == 'hybrid' and cd.reward_threshold == 0.4
        assert cd.sim.dt == 0.1
        assert cfg.cd_config('agency', 0.9).reward_threshold == 0.9
        assert RunConfig().cd_config().sim is None


class TestConfigHash:

    def test_stable(self):
        assert config_hash(RunConfig()) == config_hash(load_config(None))
        assert len(config_hash(RunConfig())) == 12

    def test_worker_count_ignored(self):
        cfg = RunConfig()
        assert config_hash(cfg) == config_hash(dataclasses.replace(cfg, run=dataclasses.replace(cfg.run, workers=8)))

    def test_semantic_change(self):
        cfg = RunConfig()
        assert config_hash(cfg) != config_hash(dataclasses.replace(cfg, run=dataclasses.replace(cfg.run, seed=1)))

    def test_discovery_hash_ignores_cell_and_paths(self):
        cfg = RunConfig()
        other = dataclasses.replace(cfg, paths=dataclasses.replace(cfg.paths, output_dir='/elsewhere'),
                                    discovery=dataclasses.replace(cfg.discovery, variant='reward',
                                                                  reward_threshold=0.3, dump_traces=True))
        assert discovery_hash(other) == discovery_hash(cfg)
        assert config_hash(other) != config_hash(cfg)

    def test_discovery_hash_follows_scoring_settings(self):
        cfg = RunConfig()
        longer = dataclasses.replace(cfg, discovery=dataclasses.replace(cfg.discovery, ttc_horizon=30.0))
        stricter = dataclasses.replace(cfg, extract=dataclasses.replace(cfg.extract, accel_threshold=0.5))
        assert len({discovery_hash(cfg), discovery_hash(longer), discovery_hash(stricter)}) == 3
