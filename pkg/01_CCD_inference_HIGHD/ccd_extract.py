# AGENT DECISION EXTRACTION
# Recovers (target speed, target time) decisions from a track's acceleration and speed series.
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, List

import numpy as np

from ccd_errors import InvalidInputError
from ccd_scene import TIME_EPS, AgentTrack, Decision, DecisionSet, Goal

logger = logging.getLogger(__name__)

# DEFAULT THRESHOLDS
ACCEL_THRESHOLD = 0.2   # m/s^2, enough actuation for a decision to have been made
MIN_DURATION = 1.0      # s, decision time to goal time
MIN_SPEED_DELTA = 1.0   # m/s, speed change worth calling a goal


@dataclass(frozen=True)
class ExtractConfig:
    accel_threshold: float = ACCEL_THRESHOLD
    min_duration: float = MIN_DURATION
    min_speed_delta: float = MIN_SPEED_DELTA

    def __post_init__(self):
        for name in ('accel_threshold', 'min_duration', 'min_speed_delta'):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be strictly positive, got {getattr(self, name)}")


def _crossings(track: AgentTrack, cfg: ExtractConfig, rising: bool):
    if track.n_steps < 2:
        raise InvalidInputError(f"track {track.agent_id} has {track.n_steps} step(s), need at least 2")
    lam = cfg.accel_threshold
    a_now, a_next = track.long_accel[:-1], track.long_accel[1:]
    if rising:
        hit = ((a_now < lam) & (a_next >= lam)) | ((a_now > -lam) & (a_next <= -lam))
    else:
        hit = ((a_now >= lam) & (a_next < lam)) | ((a_now <= -lam) & (a_next > -lam))
    # reported at the first sample on the far side of the threshold
    return track.times()[np.flatnonzero(hit) + 1]


def candidate_start_times(track: AgentTrack, cfg: ExtractConfig) -> List[float]:
    times = _crossings(track, cfg, rising=True)
    return sorted(set(times.tolist()) | {track.t_first})


def candidate_end_times(track: AgentTrack, cfg: ExtractConfig) -> List[float]:
    times = _crossings(track, cfg, rising=False)
    return sorted(set(times.tolist()) | {track.t_last})


def extract_decisions(track: AgentTrack, cfg: ExtractConfig) -> List[Decision]:
    """
    Walk the sorted start times S (j) and end times F (k). For the end time t' the decision time t
    is the latest unused start before t', i.e. the onset of the actuation that ends at t'. The pair
    becomes a decision when t' - t >= min_duration and |v(t) - v(t')| >= min_speed_delta, otherwise
    the next end time is tried. After a decision the next start is searched from t' onwards since
    only one goal is pursued at a time. With nothing found the agent holds its initial speed.
    """
    starts = candidate_start_times(track, cfg)
    ends = candidate_end_times(track, cfg)
    decisions = []
    j = k = 0
    while j < len(starts) and k < len(ends):
        t_goal = ends[k]
        i = j
        while i + 1 < len(starts) and starts[i + 1] < t_goal - TIME_EPS:
            i += 1
        t = starts[i]
        if t >= t_goal - TIME_EPS:
            k += 1
            continue
        v_t, v_goal = track.speed_at(t), track.speed_at(t_goal)
        if t_goal - t >= cfg.min_duration - TIME_EPS and abs(v_t - v_goal) >= cfg.min_speed_delta:
            decisions.append(Decision(track.agent_id, t, Goal(v_goal, t_goal)))
            j = i
            while j < len(starts) and starts[j] < t_goal - TIME_EPS:
                j += 1
        else:
            k += 1

    if not decisions:
        t0 = track.t_first
        decisions.append(Decision(track.agent_id, t0, Goal(track.speed_at(t0), t0)))
    logger.debug("agent %s: %d decision(s)", track.agent_id, len(decisions))
    return decisions


def extract_decision_set(tracks: Iterable[AgentTrack], cfg: ExtractConfig) -> DecisionSet:
    return DecisionSet({t.agent_id: tuple(extract_decisions(t, cfg)) for t in tracks})
