"""
Deterministic 2D kinematic world used to replay a scene under an arbitrary decision set.

Vehicles are rigid rectangles moving along their heading. Each agent follows a proportional speed
controller towards its active goal; the world records speed, position, acceleration, time to
collision (TTC) and cumulative collision time (CCT) for every agent.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Mapping, Sequence, Tuple

import numpy as np
import pandas as pd

from ccd_collision import closest_approach, overlaps
from ccd_errors import InvalidInputError
from ccd_scene import DecisionSet, Goal, Scene

logger = logging.getLogger(__name__)

TTC_HORIZON = 20.0      # s, cap for the TTC search
TTC_CHUNK = 256         # samples per vectorised TTC batch

TRACE_FIELDS = ('x', 'y', 'speed', 'long_accel', 'ttc', 'cct')


@dataclass(frozen=True)
class BodyState:
    x: float
    y: float
    heading: float
    speed: float
    half_length: float
    half_width: float
    angular_velocity: float = 0.0
    long_accel: float = 0.0

    def __post_init__(self):
        if not (self.half_length > 0 and self.half_width > 0):
            raise InvalidInputError("half extents must be positive")
        if not math.isfinite(self.speed):
            raise InvalidInputError("speed must be finite")

    @property
    def position(self):
        return self.x, self.y

    @property
    def half_extents(self):
        return self.half_length, self.half_width


@dataclass(frozen=True)
class WorldState:
    time: float
    bodies: Mapping[str, BodyState]
    cct: Mapping[str, float] = field(default_factory=dict)
    contacts: FrozenSet[Tuple[str, str]] = frozenset()


@dataclass(frozen=True)
class SimConfig:
    dt: float
    start_time: float = 0.0
    horizon: float = 0.0
    ttc_horizon: float = TTC_HORIZON

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidInputError(f"simulation step must be positive, got {self.dt}")
        if not self.horizon >= 0:
            raise InvalidInputError(f"horizon must be >= 0, got {self.horizon}")
        if not self.ttc_horizon > 0:
            raise InvalidInputError(f"ttc_horizon must be positive, got {self.ttc_horizon}")

    @property
    def n_steps(self):
        return int(math.floor(self.horizon / self.dt + 1e-6))


@dataclass(frozen=True)
class CollisionEvent:
    agents: Tuple[str, str]
    onset: float
    end: float


@dataclass(frozen=True, eq=False)
class SimTrace:
    agent_ids: Tuple[str, ...]
    times: np.ndarray
    series: Mapping[str, Mapping[str, np.ndarray]]
    collisions: Tuple[CollisionEvent, ...] = ()

    def get(self, agent_id, name):
        try:
            return self.series[agent_id][name]
        except KeyError:
            raise InvalidInputError(f"trace has no series '{name}' for agent {agent_id}") from None

    def index_at(self, t):
        return int(np.argmin(np.abs(self.times - t)))

    def window(self, t_after, t_until):
        """Sample indices with t_after < t <= t_until."""
        tol = 1e-6 * (self.times[1] - self.times[0]) if len(self.times) > 1 else 1e-9
        return np.flatnonzero((self.times > t_after + tol) & (self.times <= t_until + tol))

    def same_as(self, other, agent_id=None):
        agents = self.agent_ids if agent_id is None else (agent_id,)
        return all(np.array_equal(self.get(a, n), other.get(a, n), equal_nan=True)
                   for a in agents for n in TRACE_FIELDS)

    def to_frame(self):
        frames = []
        for a in self.agent_ids:
            s = self.series[a]
            frames.append(pd.DataFrame({'time': self.times, 'agent_id': a, 'x': s['x'], 'y': s['y'],
                                        'speed': s['speed'], 'accel': s['long_accel'],
                                        'ttc': s['ttc'], 'cct': s['cct']}))
        df = pd.concat(frames, ignore_index=True).dropna(subset=['x'])
        return df.sort_values(['time', 'agent_id'], kind='mergesort').reset_index(drop=True)


def write_trace_csv(trace: SimTrace, path, header_lines: Sequence[str] = ()):
    with open(path, 'w') as f:
        for line in header_lines:
            f.write(f"# {line}\n")
        trace.to_frame().to_csv(f, index=False)


# =============================================================================
# CONTROLLER AND WORLD STEP
# =============================================================================

def controller_acceleration(current_speed, goal: Goal, now, dt):
    """Acceleration reaching goal.target_speed by goal.target_time, or within one step once that time has passed."""
    if not dt > 0:
        raise InvalidInputError(f"dt must be positive, got {dt}")
    return (goal.target_speed - current_speed) / max(goal.target_time - now, dt)


def check_collision(a: BodyState, b: BodyState) -> bool:
    return bool(overlaps(a.x, a.y, a.heading, a.half_length, a.half_width,
                         b.x, b.y, b.heading, b.half_length, b.half_width))


def _contacts(bodies: Mapping[str, BodyState]):
    pairs = list(itertools.combinations(sorted(bodies), 2))
    if not pairs:
        return frozenset()
    a = [bodies[p] for p, _ in pairs]
    b = [bodies[q] for _, q in pairs]
    col = lambda items, name: np.array([getattr(s, name) for s in items])
    names = ('x', 'y', 'heading', 'half_length', 'half_width')
    hit = overlaps(*(col(a, n) for n in names), *(col(b, n) for n in names))
    return frozenset(p for p, h in zip(pairs, hit) if h)


def step(w: WorldState, active_goals: Mapping[str, Goal], cfg: SimConfig) -> WorldState:
    dt = cfg.dt
    moved = {}
    for agent_id, body in w.bodies.items():
        goal = active_goals.get(agent_id)
        if goal is None:
            raise InvalidInputError(f"agent {agent_id} has no active goal")
        accel = controller_acceleration(body.speed, goal, w.time, dt)
        speed = max(body.speed + accel * dt, 0.0)
        travelled = 0.5 * (body.speed + speed) * dt
        moved[agent_id] = replace(body,
                                  x=body.x + travelled * math.cos(body.heading),
                                  y=body.y + travelled * math.sin(body.heading),
                                  heading=body.heading + body.angular_velocity * dt,
                                  speed=speed,
                                  long_accel=(speed - body.speed) / dt)
    contacts = _contacts(moved)
    in_contact = {a for pair in contacts for a in pair}
    cct = {a: w.cct.get(a, 0.0) + (dt if a in in_contact else 0.0) for a in moved}
    return WorldState(w.time + dt, moved, cct, contacts)


# =============================================================================
# TIME TO COLLISION
# =============================================================================

def _columns(states: Sequence[BodyState]):
    return {n: np.array([getattr(s, n) for s in states], dtype=float)
            for n in ('x', 'y', 'heading', 'speed', 'half_length', 'half_width')}


def _pair_ttc(a, b, dt, ttc_horizon):
    """
    TTC of each row (one row per sample) of bodies a and b projected at constant velocity.
    0 if already overlapping, inf if no contact within ttc_horizon.
    """
    n = len(a['x'])
    out = np.full(n, np.inf)
    taus = dt * np.arange(int(math.floor(ttc_horizon / dt + 1e-6)) + 1)
    taus = np.r_[0.0, taus]
    vax, vay = a['speed'] * np.cos(a['heading']), a['speed'] * np.sin(a['heading'])
    vbx, vby = b['speed'] * np.cos(b['heading']), b['speed'] * np.sin(b['heading'])
    reach = np.hypot(a['half_length'], a['half_width']) + np.hypot(b['half_length'], b['half_width'])
    present = np.isfinite(a['x']) & np.isfinite(b['x'])
    near = np.zeros(n, dtype=bool)
    with np.errstate(invalid='ignore'):
        near[present] = (closest_approach(b['x'] - a['x'], b['y'] - a['y'], vbx - vax, vby - vay, taus[-1])
                         <= reach)[present]
    rows = np.flatnonzero(near)
    for start in range(0, rows.size, TTC_CHUNK):
        r = rows[start:start + TTC_CHUNK]
        t = taus[None, :]
        hit = overlaps(a['x'][r, None] + vax[r, None] * t, a['y'][r, None] + vay[r, None] * t,
                       a['heading'][r, None], a['half_length'][r, None], a['half_width'][r, None],
                       b['x'][r, None] + vbx[r, None] * t, b['y'][r, None] + vby[r, None] * t,
                       b['heading'][r, None], b['half_length'][r, None], b['half_width'][r, None])
        found = hit.any(axis=1)
        out[r[found]] = taus[np.argmax(hit[found], axis=1)]
    return out


def time_to_collision(w: WorldState, agent_id, cfg: SimConfig) -> float:
    if agent_id not in w.bodies:
        raise InvalidInputError(f"agent {agent_id} not in world")
    me = _columns([w.bodies[agent_id]])
    best = np.inf
    for other, body in w.bodies.items():
        if other != agent_id:
            best = min(best, float(_pair_ttc(me, _columns([body]), cfg.dt, cfg.ttc_horizon)[0]))
    return best


# =============================================================================
# SIMULATION
# =============================================================================

def _body_at(track, k) -> BodyState:
    if k + 1 < track.n_steps:
        omega = (track.heading[k + 1] - track.heading[k]) / track.dt
    elif k > 0:
        omega = (track.heading[k] - track.heading[k - 1]) / track.dt
    else:
        omega = 0.0
    return BodyState(float(track.x[k]), float(track.y[k]), float(track.heading[k]),
                     float(track.speed[k]), track.length / 2, track.width / 2,
                     angular_velocity=float(omega), long_accel=float(track.long_accel[k]))


def initial_world(scene: Scene, t_alpha) -> WorldState:
    """Bodies initialised from the recorded values at t_alpha for every agent observed then."""
    bodies = {}
    for track in scene.tracks:
        if not track.covers(t_alpha):
            logger.debug("scene %s: agent %s not observed at %.2f, left out", scene.scene_id, track.agent_id, t_alpha)
            continue
        bodies[track.agent_id] = _body_at(track, track.index_at(t_alpha))
    return WorldState(t_alpha, bodies, {a: 0.0 for a in bodies}, _contacts(bodies))


def _arrivals(scene: Scene, cfg: SimConfig):
    """Step index -> tracks first observed at that step of the run (after start_time, within the horizon)."""
    out: Dict[int, list] = {}
    for track in scene.tracks:
        k = int(round((track.t_first - cfg.start_time) / cfg.dt))
        if 1 <= k <= cfg.n_steps and track.t_first > cfg.start_time + 1e-6 * cfg.dt:
            out.setdefault(k, []).append(track)
    return out


def simulate(scene: Scene, decisions: DecisionSet, cfg: SimConfig) -> SimTrace:
    """
    Replay the scene from cfg.start_time for cfg.horizon seconds. Each agent pursues its latest
    decision taken at or before the current time and holds its initial speed before any.
    Agents first observed later in the run enter the world from their first recorded sample.
    """
    for agent_id in decisions.agents:
        scene.track(agent_id)
    if not scene.grid.contains(cfg.start_time):
        raise InvalidInputError(f"start time {cfg.start_time} outside scene {scene.scene_id} grid")

    t_alpha = cfg.start_time
    w = initial_world(scene, t_alpha)
    holds = {a: Goal(b.speed, t_alpha) for a, b in w.bodies.items()}
    arrivals = _arrivals(scene, cfg)

    def goals_at(t):
        return {a: decisions.active_goal(a, t) or holds[a] for a in holds}

    states = [w]
    for k in range(cfg.n_steps):
        nxt = step(w, goals_at(w.time), cfg)
        bodies = dict(nxt.bodies)
        for track in arrivals.get(k + 1, ()):
            bodies[track.agent_id] = _body_at(track, 0)
            holds[track.agent_id] = Goal(float(track.speed[0]), track.t_first)
        if len(bodies) > len(nxt.bodies):
            contacts = _contacts(bodies)
            in_contact = {a for pair in contacts for a in pair}
            nxt = WorldState(nxt.time, bodies,
                             {a: w.cct.get(a, 0.0) + (cfg.dt if a in in_contact else 0.0) for a in bodies}, contacts)
        w = replace(nxt, time=t_alpha + (k + 1) * cfg.dt)
        states.append(w)
    return _trace(states, goals_at, cfg)


def _present_columns(states, agent_id):
    """Trace columns of one agent, NaN at samples before it entered the world."""
    names = ('x', 'y', 'heading', 'speed', 'half_length', 'half_width')
    return {n: np.array([getattr(s.bodies[agent_id], n) if agent_id in s.bodies else np.nan for s in states],
                        dtype=float) for n in names}


def _trace(states, goals_at, cfg):
    agents = tuple(sorted({a for s in states for a in s.bodies}))
    times = np.array([s.time for s in states])
    last = states[-1]
    final_goals = goals_at(last.time)
    series = {}
    cols = {}
    for a in agents:
        cols[a] = _present_columns(states, a)
        accel = np.full(len(states), np.nan)
        accel[:-1] = [nxt.bodies[a].long_accel if a in cur.bodies else np.nan
                      for cur, nxt in zip(states[:-1], states[1:])]
        body = last.bodies[a]
        tail = controller_acceleration(body.speed, final_goals[a], last.time, cfg.dt)
        accel[-1] = (max(body.speed + tail * cfg.dt, 0.0) - body.speed) / cfg.dt
        series[a] = {'x': cols[a]['x'], 'y': cols[a]['y'], 'speed': cols[a]['speed'], 'long_accel': accel,
                     'ttc': np.full(len(states), np.inf),
                     'cct': np.array([s.cct.get(a, 0.0) for s in states])}

    for a, b in itertools.combinations(agents, 2):
        ttc = _pair_ttc(cols[a], cols[b], cfg.dt, cfg.ttc_horizon)
        series[a]['ttc'] = np.minimum(series[a]['ttc'], ttc)
        series[b]['ttc'] = np.minimum(series[b]['ttc'], ttc)

    times.setflags(write=False)
    for s in series.values():
        for arr in s.values():
            arr.setflags(write=False)
    return SimTrace(agents, times, series, tuple(_collision_log(states, cfg.dt)))


def _collision_log(states, dt):
    events = []
    open_since: Dict[Tuple[str, str], float] = {}
    for s in states:
        for pair in sorted(s.contacts):
            open_since.setdefault(pair, s.time)
        for pair in sorted(set(open_since) - s.contacts):
            events.append(CollisionEvent(pair, open_since.pop(pair), s.time))
    for pair, onset in sorted(open_since.items()):
        events.append(CollisionEvent(pair, onset, states[-1].time + dt))
    return sorted(events, key=lambda e: (e.onset, e.agents))
