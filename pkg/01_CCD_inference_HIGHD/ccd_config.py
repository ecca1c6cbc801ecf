# RUN CONFIGURATION
# One YAML document with the sections paths, extract, scenes, discovery, synth and run. Missing keys take the
# defaults below, unknown keys are an input error, command line flags override the file.
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, fields
from typing import Dict, Optional, Tuple

import yaml

from ccd_counterfactual import REWARD_THRESHOLD, CdConfig
from ccd_errors import InvalidInputError
from ccd_eval import LAMBDA_GRID
from ccd_extract import ExtractConfig
from ccd_ingest import SceneExtractionParams
from ccd_sim import TTC_HORIZON, SimConfig
from ccd_synth import SyntheticSpec

LOG_FILE_NAME = 'ccd_run.log'
LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'
HASH_LENGTH = 12

# discovery keys that change report contents; variant and lambda are part of the report cell
REPORT_SETTINGS = ('dt', 'ttc_horizon', 'literal_cct_polarity', 'any_collision_agency')


@dataclass(frozen=True)
class PathsSection:
    input_dir: Optional[str] = None     # recordings (NN_tracks.csv)
    scene_dir: str = './scenes'
    output_dir: str = './output'


@dataclass(frozen=True)
class ScenesSection:
    params: SceneExtractionParams = field(default_factory=SceneExtractionParams)
    column_map: Dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class DiscoverySection:
    variant: str = 'agency'
    reward_threshold: float = REWARD_THRESHOLD
    lambdas: Tuple[float, ...] = LAMBDA_GRID
    dt: Optional[float] = None          # None: step of each scene's grid
    ttc_horizon: float = TTC_HORIZON
    literal_cct_polarity: bool = False
    any_collision_agency: bool = False
    dump_traces: bool = False
    dump_decisions: bool = False


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    workers: int = 1
    n_scenes: int = 100

    def __post_init__(self):
        if self.workers < 1:
            raise InvalidInputError(f"workers must be >= 1, got {self.workers}")
        if self.n_scenes < 0:
            raise InvalidInputError(f"n_scenes must be >= 0, got {self.n_scenes}")


@dataclass(frozen=True)
class RunConfig:
    paths: PathsSection = field(default_factory=PathsSection)
    extract: ExtractConfig = field(default_factory=ExtractConfig)
    scenes: ScenesSection = field(default_factory=ScenesSection)
    discovery: DiscoverySection = field(default_factory=DiscoverySection)
    synth: SyntheticSpec = field(default_factory=SyntheticSpec)
    run: RunSection = field(default_factory=RunSection)

    def cd_config(self, variant=None, reward_threshold=None) -> CdConfig:
        d = self.discovery
        sim = None
        if d.dt is not None:
            sim = SimConfig(dt=d.dt, ttc_horizon=d.ttc_horizon)
        return CdConfig(variant=variant or d.variant,
                        reward_threshold=d.reward_threshold if reward_threshold is None else reward_threshold,
                        sim=sim, ttc_horizon=d.ttc_horizon, extract=self.extract,
                        literal_cct_polarity=d.literal_cct_polarity, any_collision_agency=d.any_collision_agency)


def _section(cls, raw, name):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise InvalidInputError(f"config section '{name}' must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise InvalidInputError(f"unknown key(s) in config section '{name}': {unknown}")
    values = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    try:
        return cls(**values)
    except TypeError as e:
        raise InvalidInputError(f"config section '{name}': {e}") from None


def config_from_dict(raw) -> RunConfig:
    raw = dict(raw or {})
    unknown = sorted(set(raw) - {f.name for f in fields(RunConfig)})
    if unknown:
        raise InvalidInputError(f"unknown config section(s): {unknown}")
    scenes_raw = dict(raw.get('scenes') or {})
    column_map = scenes_raw.pop('column_map', None) or {}
    if not isinstance(column_map, dict):
        raise InvalidInputError("scenes.column_map must be a mapping")
    return RunConfig(
        paths=_section(PathsSection, raw.get('paths'), 'paths'),
        extract=_section(ExtractConfig, raw.get('extract'), 'extract'),
        scenes=ScenesSection(_section(SceneExtractionParams, scenes_raw, 'scenes'),
                             {str(k): str(v) for k, v in column_map.items()}),
        discovery=_section(DiscoverySection, raw.get('discovery'), 'discovery'),
        synth=_section(SyntheticSpec, raw.get('synth'), 'synth'),
        run=_section(RunSection, raw.get('run'), 'run'),
    )


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path) as f:
            raw = yaml.safe_load(f)
    except OSError as e:
        raise InvalidInputError(f"cannot read config {path}: {e}") from None
    except yaml.YAMLError as e:
        raise InvalidInputError(f"config {path} is not valid YAML: {e}") from None
    if raw is not None and not isinstance(raw, dict):
        raise InvalidInputError(f"config {path} must be a mapping of sections")
    return config_from_dict(raw)


def apply_overrides(cfg: RunConfig, args) -> RunConfig:
    """Command line values that are not None replace the matching config keys."""
    get = lambda name: getattr(args, name, None)
    paths = {k: get(k) for k in ('input_dir', 'scene_dir', 'output_dir') if get(k) is not None}
    discovery = {}
    if get('variant') is not None:
        discovery['variant'] = get('variant')
    if get('reward_threshold') is not None:
        discovery['reward_threshold'] = get('reward_threshold')
        discovery['lambdas'] = (get('reward_threshold'),)
    if get('dump_traces'):
        discovery['dump_traces'] = True
    if get('dump_decisions'):
        discovery['dump_decisions'] = True
    run = {k: get(k) for k in ('seed', 'workers', 'n_scenes') if get(k) is not None}
    return dataclasses.replace(cfg,
                               paths=dataclasses.replace(cfg.paths, **paths),
                               discovery=dataclasses.replace(cfg.discovery, **discovery),
                               run=dataclasses.replace(cfg.run, **run))


def config_to_dict(cfg: RunConfig):
    return dataclasses.asdict(cfg)


def _short_hash(tree) -> str:
    canonical = json.dumps(tree, sort_keys=True, separators=(',', ':'), default=str)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:HASH_LENGTH]


def config_hash(cfg: RunConfig) -> str:
    """Short SHA-256 of the canonical config, worker count excluded."""
    tree = config_to_dict(cfg)
    tree['run'].pop('workers', None)
    return _short_hash(tree)


def discovery_hash(cfg: RunConfig) -> str:
    """Hash of the settings a discovery report depends on besides its (variant, lambda) cell."""
    tree = {'extract': dataclasses.asdict(cfg.extract),
            'discovery': {k: getattr(cfg.discovery, k) for k in REPORT_SETTINGS}}
    return _short_hash(tree)


def setup_logging(output_dir, verbose=False):
    os.makedirs(output_dir, exist_ok=True)
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=LOG_FORMAT,
        handlers=[
            logging.FileHandler(os.path.join(output_dir, LOG_FILE_NAME)),
            logging.StreamHandler()
        ],
        force=True
    )
    return logging.getLogger('ccd')
