"""
Comments to version:
- Reads High-D style recordings: NN_tracks.csv plus the optional NN_recordingMeta.csv and NN_tracksMeta.csv siblings.
- x, y in the tracks file are the top-left corner of the bounding box; width is the vehicle length along the road,
  height is the vehicle width. Tracks are stored by box centre.
- Convoy thresholds are not published for the reference scene set; defaults below are configurable.
"""
from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import asdict, dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.ndimage import uniform_filter1d

from ccd_errors import InvalidInputError, ParseError
from ccd_scene import AgentTrack, EntityCausalGraph, Role, Scene, TimeGrid

logger = logging.getLogger(__name__)

# SCHEMA
TRACK_COLUMNS = ('frame', 'id', 'x', 'y', 'xVelocity', 'yVelocity', 'xAcceleration', 'yAcceleration',
                 'laneId', 'width', 'height')
ACCEL_COLUMNS = ('xAcceleration', 'yAcceleration')
INTEGER_COLUMNS = ('frame', 'id', 'laneId')
DEFAULT_FRAME_RATE = 25.0

# DATA QUALITY
SPEED_RESIDUAL_WARN = 0.5   # m/s, recorded speed vs integrated acceleration

# SCENE EXTRACTION DEFAULTS
MIN_REL_SPEED_CHANGE = 5.0  # m/s
MIN_SCENE_DURATION = 10.0   # s
MAX_HEADWAY = 3.0           # s
MAX_SCENE_DURATION = 30.0   # s


@dataclass(frozen=True)
class RecordingMeta:
    recording_id: str
    frame_rate: float = DEFAULT_FRAME_RATE
    upper_markings: Tuple[float, ...] = ()
    lower_markings: Tuple[float, ...] = ()

    def __post_init__(self):
        if not self.frame_rate > 0:
            raise InvalidInputError(f"recording {self.recording_id}: frame rate must be positive, got {self.frame_rate}")

    @property
    def dt(self):
        return 1.0 / self.frame_rate

    @property
    def lanes(self) -> Dict[int, Tuple[float, float]]:
        """
        lane id -> (y_low, y_high). Upper carriageway lanes are numbered from 2, the lower ones continue after
        one skipped id, which is how High-D numbers its lanes.
        """
        lanes = {}
        upper, lower = sorted(self.upper_markings), sorted(self.lower_markings)
        for i, (lo, hi) in enumerate(zip(upper, upper[1:])):
            lanes[2 + i] = (lo, hi)
        for i, (lo, hi) in enumerate(zip(lower, lower[1:])):
            lanes[len(upper) + 2 + i] = (lo, hi)
        return lanes


@dataclass(frozen=True)
class SceneExtractionParams:
    min_rel_speed_change: float = MIN_REL_SPEED_CHANGE
    min_scene_duration: float = MIN_SCENE_DURATION
    max_headway: float = MAX_HEADWAY
    smoothing_window: int = 0
    max_scene_duration: float = MAX_SCENE_DURATION

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise InvalidInputError(f"{name} must be non-negative, got {value}")
        if self.max_scene_duration and self.max_scene_duration < self.min_scene_duration:
            raise InvalidInputError("max_scene_duration is shorter than min_scene_duration")


# =============================================================================
# PARSING
# =============================================================================

def recording_id_of(path):
    name = os.path.basename(path)
    return name[:-len('_tracks.csv')] if name.endswith('_tracks.csv') else os.path.splitext(name)[0]


def _sibling(path, suffix):
    return os.path.join(os.path.dirname(path), f"{recording_id_of(path)}_{suffix}.csv")


def _read_csv(path):
    try:
        return pd.read_csv(path, dtype=str)
    except pd.errors.EmptyDataError:
        raise ParseError(path, 1, "file is empty, expected a header line") from None
    except pd.errors.ParserError as e:
        found = re.search(r'line (\d+)', str(e))
        raise ParseError(path, int(found.group(1)) if found else None, str(e).strip()) from None
    except UnicodeDecodeError as e:
        raise ParseError(path, None, f"not UTF-8 text ({e.reason} at byte {e.start})") from None
    except (ValueError, OSError) as e:
        raise ParseError(path, None, f"cannot read file: {e}") from None


def _numeric(df, columns, path, integer=()):
    out = {}
    for col in columns:
        values = pd.to_numeric(df[col], errors='coerce')
        bad = values.isna() | ~np.isfinite(values)
        if col in integer:
            bad |= (values % 1 != 0)
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise ParseError(path, row + 2, f"column '{col}' holds '{df[col].iloc[row]}', expected a number")
        out[col] = values.to_numpy(dtype=float)
    return out


def _markings(raw):
    if raw is None or (isinstance(raw, float) and np.isnan(raw)) or not str(raw).strip():
        return ()
    return tuple(float(v) for v in str(raw).split(';') if v.strip())


def read_recording_meta(path) -> RecordingMeta:
    """Recording meta of a tracks file; the default frame rate applies when the sibling file is absent."""
    rid = recording_id_of(path)
    meta_path = _sibling(path, 'recordingMeta')
    if not os.path.exists(meta_path):
        logger.debug("no %s, assuming %.0f Hz", meta_path, DEFAULT_FRAME_RATE)
        return RecordingMeta(rid)
    df = _read_csv(meta_path)
    if 'frameRate' not in df.columns or len(df) == 0:
        raise ParseError(meta_path, 1, "expected a 'frameRate' column and one data row")
    frame_rate = _numeric(df.iloc[:1], ('frameRate',), meta_path)['frameRate'][0]
    try:
        upper = _markings(df['upperLaneMarkings'].iloc[0]) if 'upperLaneMarkings' in df.columns else ()
        lower = _markings(df['lowerLaneMarkings'].iloc[0]) if 'lowerLaneMarkings' in df.columns else ()
    except ValueError as e:
        raise ParseError(meta_path, 2, f"bad lane markings: {e}") from None
    return RecordingMeta(rid, float(frame_rate), upper, lower)


def _declared_frames(path):
    meta_path = _sibling(path, 'tracksMeta')
    if not os.path.exists(meta_path):
        return None, {}
    df = _read_csv(meta_path)
    for col in ('id', 'numFrames'):
        if col not in df.columns:
            raise ParseError(meta_path, 1, f"missing column '{col}'")
    values = _numeric(df, ('id', 'numFrames'), meta_path, integer=('id', 'numFrames'))
    declared = {str(int(i)): (int(n), row + 2) for row, (i, n) in enumerate(zip(values['id'], values['numFrames']))}
    return meta_path, declared


def _headings(vx, vy):
    heading = pd.Series(np.arctan2(vy, vx))
    # standing vehicles keep the last heading they had while moving
    heading[np.hypot(vx, vy) < 1e-6] = np.nan
    return heading.ffill().bfill().fillna(0.0).to_numpy()


def parse_tracks(path, column_map: Optional[Dict[str, str]] = None) -> Tuple[List[AgentTrack], RecordingMeta]:
    """
    Parse one recording into tracks on a uniform grid at the recording frame rate.

    :param path: NN_tracks.csv
    :param column_map: optional rename {name in file: schema name} applied before validation
    :return: tracks sorted by agent id, recording meta
    """
    meta = read_recording_meta(path)
    df = _read_csv(path)
    if column_map:
        df = df.rename(columns=dict(column_map))
    required = [c for c in TRACK_COLUMNS if c not in ACCEL_COLUMNS]
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise ParseError(path, 1, f"missing column(s) {missing}")
    has_accel = all(c in df.columns for c in ACCEL_COLUMNS)
    if len(df) == 0:
        return [], meta

    columns = required + (list(ACCEL_COLUMNS) if has_accel else [])
    values = pd.DataFrame(_numeric(df, columns, path, integer=INTEGER_COLUMNS))
    values['row'] = np.arange(len(values))
    for col in ('width', 'height'):
        bad = np.flatnonzero(values[col].to_numpy() <= 0)
        if bad.size:
            raise ParseError(path, int(bad[0]) + 2, f"'{col}' must be positive")
    values['id'] = values['id'].astype(int).astype(str)
    meta_path, declared = _declared_frames(path)

    dt = meta.dt
    tracks = []
    for agent_id, g in values.groupby('id', sort=False):
        g = g.sort_values('frame', kind='mergesort')
        frames = g['frame'].to_numpy().astype(int)
        gaps = np.diff(frames)
        if np.any(gaps != 1):
            k = int(np.flatnonzero(gaps != 1)[0])
            raise InvalidInputError(f"{path}: agent {agent_id} frames {frames[k]} -> {frames[k + 1]} are not consecutive")
        if agent_id in declared and declared[agent_id][0] != len(frames):
            n_declared, line = declared[agent_id]
            raise ParseError(meta_path, line, f"agent {agent_id} declares {n_declared} frames, tracks file has {len(frames)}")

        vx, vy = g['xVelocity'].to_numpy(), g['yVelocity'].to_numpy()
        speed = np.hypot(vx, vy)
        heading = _headings(vx, vy)
        if has_accel:
            accel = g['xAcceleration'].to_numpy() * np.cos(heading) + g['yAcceleration'].to_numpy() * np.sin(heading)
        elif len(speed) > 1:
            accel = np.gradient(speed, dt)
        else:
            accel = np.zeros(1)
        length, width = g['width'].to_numpy(), g['height'].to_numpy()
        track = AgentTrack(agent_id, frames[0] * dt, dt,
                           g['x'].to_numpy() + length / 2, g['y'].to_numpy() + width / 2,
                           heading, speed, accel,
                           length=float(np.median(length)), width=float(np.median(width)),
                           lane_id=int(g['laneId'].mode().iloc[0]))
        residual = track.speed_residual()
        if residual > SPEED_RESIDUAL_WARN:
            logger.warning("%s: agent %s speed disagrees with its acceleration by up to %.2f m/s",
                           meta.recording_id, agent_id, residual)
        tracks.append(track)
    tracks.sort(key=lambda t: _id_key(t.agent_id))
    logger.info("%s: %d track(s) at %.1f Hz", meta.recording_id, len(tracks), meta.frame_rate)
    return tracks, meta


def write_tracks(tracks: Sequence[AgentTrack], meta: RecordingMeta, output_dir):
    """Write NN_tracks.csv and NN_recordingMeta.csv; returns the tracks path."""
    frames = []
    for t in tracks:
        c, s = np.cos(t.heading), np.sin(t.heading)
        frames.append(pd.DataFrame({
            'frame': np.rint(t.times() / meta.dt).astype(int),
            'id': t.agent_id,
            'x': t.x - t.length / 2,
            'y': t.y - t.width / 2,
            'xVelocity': t.speed * c,
            'yVelocity': t.speed * s,
            'xAcceleration': t.long_accel * c,
            'yAcceleration': t.long_accel * s,
            'laneId': t.lane_id,
            'width': t.length,
            'height': t.width,
        }))
    df = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=list(TRACK_COLUMNS))
    tracks_path = os.path.join(output_dir, f"{meta.recording_id}_tracks.csv")
    df[list(TRACK_COLUMNS)].to_csv(tracks_path, index=False)

    pd.DataFrame([{
        'id': meta.recording_id,
        'frameRate': meta.frame_rate,
        'upperLaneMarkings': ';'.join(repr(v) for v in meta.upper_markings),
        'lowerLaneMarkings': ';'.join(repr(v) for v in meta.lower_markings),
    }]).to_csv(os.path.join(output_dir, f"{meta.recording_id}_recordingMeta.csv"), index=False)
    return tracks_path


def smooth_acceleration(track: AgentTrack, window: int) -> AgentTrack:
    """Centred moving average of long_accel; window <= 1 leaves the track as it is."""
    if window <= 1:
        return track
    smoothed = uniform_filter1d(np.asarray(track.long_accel, dtype=float), size=int(window), mode='nearest')
    return replace(track, long_accel=smoothed)


# =============================================================================
# CONVOY SCENES
# =============================================================================

def _id_key(agent_id):
    return (0, int(agent_id), '') if agent_id.isdigit() else (1, 0, agent_id)


def _frame_table(tracks, dt):
    rows = []
    for t in tracks:
        direction = 1.0 if np.median(np.cos(t.heading)) >= 0 else -1.0
        rows.append(pd.DataFrame({
            'frame': np.rint(t.times() / dt).astype(int),
            'id': t.agent_id,
            'lane': t.lane_id,
            'station': t.x * direction,
            'speed': t.speed,
            'length': t.length,
        }))
    return pd.concat(rows, ignore_index=True)


def _convoy_frames(table: pd.DataFrame, max_headway):
    """Rows (frame, head, tail, headway, rel_speed) where tail directly follows head within max_headway."""
    df = table.sort_values(['frame', 'lane', 'station'], ascending=[True, True, False], kind='mergesort')
    grouped = df.groupby(['frame', 'lane'], sort=False)
    df = df.assign(head=grouped['id'].shift(1), head_station=grouped['station'].shift(1),
                   head_length=grouped['length'].shift(1), head_speed=grouped['speed'].shift(1))
    df = df[df['head'].notna() & (df['speed'] > 0)]
    gap = df['head_station'] - df['station'] - (df['head_length'] + df['length']) / 2
    df = df.assign(headway=gap / df['speed'], rel_speed=df['head_speed'] - df['speed'])
    df = df[(df['headway'] >= 0) & (df['headway'] <= max_headway)]
    return df.rename(columns={'id': 'tail'})[['frame', 'head', 'tail', 'headway', 'rel_speed']]


def _longest_run(frames: np.ndarray):
    frames = np.sort(frames)
    breaks = np.flatnonzero(np.diff(frames) != 1) + 1
    runs = np.split(frames, breaks)
    best = max(runs, key=len)
    return int(best[0]), int(best[-1])


def _independent(tracks, exclude_lane, t0, t1, taken):
    candidates = [t for t in tracks if t.agent_id not in taken and t.lane_id != exclude_lane
                  and t.covers(t0) and t.covers(t1)]
    if not candidates:
        return None
    return min(candidates, key=lambda t: _id_key(t.agent_id))


def extract_causal_scenes(tracks: Sequence[AgentTrack], meta: RecordingMeta,
                          params: SceneExtractionParams) -> List[Scene]:
    """
    Convoy scenes: a head/tail pair sharing a lane, tail directly behind head within max_headway for at least
    min_scene_duration (longest such run, truncated to max_scene_duration) and a relative speed swing
    max(v_head - v_tail) - min(v_head - v_tail) of at least min_rel_speed_change. The independent agent is the
    lowest-id vehicle of another lane observed over the whole window. Ground truth is {head -> tail}.
    """
    if not tracks:
        return []
    dt = meta.dt
    tracks = [smooth_acceleration(t, params.smoothing_window) for t in tracks]
    by_id = {t.agent_id: t for t in tracks}
    convoy = _convoy_frames(_frame_table(tracks, dt), params.max_headway)

    scenes = []
    for (head, tail), g in convoy.groupby(['head', 'tail'], sort=False):
        f0, f1 = _longest_run(g['frame'].to_numpy())
        if params.max_scene_duration:
            f1 = min(f1, f0 + int(round(params.max_scene_duration / dt)))
        if (f1 - f0) * dt < params.min_scene_duration - 1e-9:
            continue
        window = g[(g['frame'] >= f0) & (g['frame'] <= f1)]
        swing = float(window['rel_speed'].max() - window['rel_speed'].min())
        if swing < params.min_rel_speed_change:
            continue
        t0, t1 = f0 * dt, f1 * dt
        indep = _independent(tracks, by_id[head].lane_id, t0, t1, {head, tail})
        if indep is None:
            logger.debug("%s: convoy %s->%s has no independent vehicle, skipped", meta.recording_id, head, tail)
            continue

        agents = (head, tail, indep.agent_id)
        scene_tracks = tuple(by_id[a].clip(t0, t1) for a in agents)
        scenes.append(Scene(
            f"{meta.recording_id}_{head}_{tail}",
            TimeGrid(t0, dt, f1 - f0 + 1),
            scene_tracks,
            roles={head: Role.CONVOY_HEAD, tail: Role.CONVOY_TAIL, indep.agent_id: Role.INDEPENDENT},
            ground_truth=EntityCausalGraph(agents, frozenset({(head, tail)})),
            metadata={'source': 'recording', 'recording_id': meta.recording_id,
                      'extraction_params': asdict(params),
                      'rel_speed_swing': swing, 'min_headway': float(window['headway'].min())}))

    scenes.sort(key=lambda s: (s.grid.t_start, _id_key(s.agent_ids[0]), _id_key(s.agent_ids[1])))
    logger.info("%s: %d causal scene(s)", meta.recording_id, len(scenes))
    return scenes


def write_scene_index(scenes: Sequence[Scene], params, path, config_hash=None):
    """
    Index of the scene files in a directory.

    :param params: parameters the scenes were made with (SceneExtractionParams or SyntheticSpec)
    """
    index = {
        'config_hash': config_hash,
        'source': 'recording' if isinstance(params, SceneExtractionParams) else 'synthetic',
        'params': asdict(params),
        'scenes': [{'scene_id': s.scene_id, 'file': f"{s.scene_id}.json",
                    'recording_id': s.metadata.get('recording_id'),
                    'agents': list(s.agent_ids), 't_start': s.grid.t_start, 't_end': s.grid.t_end}
                   for s in scenes],
    }
    with open(path, 'w') as f:
        json.dump(index, f, indent=2)
    return index
