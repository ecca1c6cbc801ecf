"""
Scene model shared by every stage of the pipeline.

A scene is a handful of agent tracks recorded on one uniform time grid. Decisions extracted from the
tracks are (target speed, target time) goals; causal graphs link decisions, and the entity graph
projects those links onto agents. All values are immutable after construction; numpy series are
stored read-only.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import networkx as nx
import numpy as np

from ccd_errors import InvalidInputError

# Two times closer than this are the same instant (times are always built as t0 + k * dt)
TIME_EPS = 1e-9

SERIES_FIELDS = ('x', 'y', 'heading', 'speed', 'long_accel')


def _read_only(values, name):
    arr = np.array(values, dtype=float)
    if arr.ndim != 1:
        raise InvalidInputError(f"series '{name}' must be one-dimensional")
    arr.setflags(write=False)
    return arr


def _on_grid(t, t0, dt):
    k = (t - t0) / dt
    return abs(k - round(k)) < 1e-6


@dataclass(frozen=True)
class TimeGrid:
    t_start: float
    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidInputError(f"grid step must be positive, got {self.dt}")
        if self.n_steps < 2:
            raise InvalidInputError(f"grid needs at least 2 steps, got {self.n_steps}")

    @property
    def t_end(self):
        return self.time_at(self.n_steps - 1)

    def time_at(self, k):
        return self.t_start + k * self.dt

    def times(self):
        return self.t_start + np.arange(self.n_steps) * self.dt

    def index_of(self, t):
        return int(round((t - self.t_start) / self.dt))

    def contains(self, t):
        tol = 1e-6 * self.dt
        return self.t_start - tol <= t <= self.t_end + tol


@dataclass(frozen=True, eq=False)
class AgentTrack:
    """
    Per-agent series on a uniform grid starting at t_first.

    Speed is a scalar along heading (>= 0), long_accel is the longitudinal acceleration applied from
    each sample to the next. length/width are the vehicle footprint in meters.
    """
    agent_id: str
    t_first: float
    dt: float
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    speed: np.ndarray
    long_accel: np.ndarray
    length: float
    width: float
    lane_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'agent_id', str(self.agent_id))
        for name in SERIES_FIELDS:
            object.__setattr__(self, name, _read_only(getattr(self, name), name))
        lengths = {len(getattr(self, name)) for name in SERIES_FIELDS}
        if len(lengths) != 1:
            raise InvalidInputError(f"track {self.agent_id}: series lengths differ {sorted(lengths)}")
        if self.n_steps < 1:
            raise InvalidInputError(f"track {self.agent_id} is empty")
        if not self.dt > 0:
            raise InvalidInputError(f"track {self.agent_id}: step must be positive")
        if not (self.length > 0 and self.width > 0):
            raise InvalidInputError(f"track {self.agent_id}: length and width must be positive")
        if not np.all(np.isfinite(self.speed)) or np.any(self.speed < 0):
            raise InvalidInputError(f"track {self.agent_id}: speed must be finite and non-negative")
        object.__setattr__(self, 'lane_id', int(self.lane_id))

    def __eq__(self, other):
        if not isinstance(other, AgentTrack):
            return NotImplemented
        scalars = ('agent_id', 't_first', 'dt', 'length', 'width', 'lane_id')
        return (all(getattr(self, s) == getattr(other, s) for s in scalars)
                and all(np.array_equal(getattr(self, s), getattr(other, s)) for s in SERIES_FIELDS))

    __hash__ = None

    @property
    def n_steps(self):
        return len(self.speed)

    @property
    def t_last(self):
        return self.t_first + (self.n_steps - 1) * self.dt

    @property
    def capture_window(self):
        return self.t_first, self.t_last

    def times(self):
        return self.t_first + np.arange(self.n_steps) * self.dt

    def covers(self, t):
        tol = 1e-6 * self.dt
        return self.t_first - tol <= t <= self.t_last + tol

    def index_at(self, t):
        """Nearest sample index for time t; t must lie in the capture window."""
        if not self.covers(t):
            raise InvalidInputError(f"t={t} outside capture window {self.capture_window} of {self.agent_id}")
        return min(max(int(round((t - self.t_first) / self.dt)), 0), self.n_steps - 1)

    def speed_at(self, t):
        return float(self.speed[self.index_at(t)])

    def speed_residual(self):
        """Largest |v[k+1] - (v[k] + a[k] * dt)| over the track (0 for single-sample tracks)."""
        if self.n_steps < 2:
            return 0.0
        predicted = self.speed[:-1] + self.long_accel[:-1] * self.dt
        return float(np.max(np.abs(self.speed[1:] - predicted)))

    def clip(self, t0, t1):
        """Sub-track covering [t0, t1] (both snapped to samples)."""
        i0, i1 = self.index_at(t0), self.index_at(t1)
        return AgentTrack(self.agent_id, self.t_first + i0 * self.dt, self.dt,
                          *(getattr(self, s)[i0:i1 + 1] for s in SERIES_FIELDS),
                          length=self.length, width=self.width, lane_id=self.lane_id)


@dataclass(frozen=True)
class Goal:
    target_speed: float
    target_time: float

    def __post_init__(self):
        if not self.target_speed >= 0:
            raise InvalidInputError(f"target speed must be >= 0, got {self.target_speed}")


@dataclass(frozen=True)
class Decision:
    agent_id: str
    decision_time: float
    goal: Goal

    def __post_init__(self):
        if self.goal.target_time < self.decision_time - TIME_EPS:
            raise InvalidInputError(f"goal time {self.goal.target_time} precedes decision time {self.decision_time}")

    @property
    def is_hold(self):
        return abs(self.goal.target_time - self.decision_time) <= TIME_EPS

    def label(self):
        return f"{self.agent_id}@{self.decision_time:.2f}"


@dataclass(frozen=True)
class DecisionSet:
    """agent_id -> time-ordered decisions; one goal is pursued at a time per agent."""
    by_agent: Mapping[str, Tuple[Decision, ...]] = field(default_factory=dict)

    def __post_init__(self):
        ordered = {}
        for agent_id in sorted(self.by_agent):
            decisions = tuple(self.by_agent[agent_id])
            for d in decisions:
                if d.agent_id != agent_id:
                    raise InvalidInputError(f"decision of {d.agent_id} filed under {agent_id}")
            for prev, nxt in zip(decisions, decisions[1:]):
                if not nxt.decision_time > prev.decision_time + TIME_EPS:
                    raise InvalidInputError(f"decisions of {agent_id} are not strictly increasing in time")
                if nxt.decision_time < prev.goal.target_time - TIME_EPS:
                    raise InvalidInputError(f"decision {nxt.label()} starts before the previous goal time")
            ordered[agent_id] = decisions
        object.__setattr__(self, 'by_agent', ordered)

    @classmethod
    def from_decisions(cls, decisions: Iterable[Decision], agents: Iterable[str] = ()):
        grouped: Dict[str, List[Decision]] = {a: [] for a in agents}
        for d in decisions:
            grouped.setdefault(d.agent_id, []).append(d)
        return cls({a: tuple(sorted(ds, key=lambda d: d.decision_time)) for a, ds in grouped.items()})

    @property
    def agents(self):
        return tuple(self.by_agent)

    def of(self, agent_id):
        return self.by_agent.get(agent_id, ())

    def all(self):
        return sorted((d for ds in self.by_agent.values() for d in ds),
                      key=lambda d: (d.decision_time, d.agent_id))

    def __contains__(self, decision):
        return decision in self.of(decision.agent_id)

    def __len__(self):
        return sum(len(ds) for ds in self.by_agent.values())

    def active_goal(self, agent_id, t) -> Optional[Goal]:
        """Goal of the latest decision taken at or before t, None before the first one."""
        active = None
        for d in self.of(agent_id):
            if d.decision_time <= t + TIME_EPS:
                active = d.goal
            else:
                break
        return active

    def without(self, removed: Iterable[Decision]):
        removed = set(removed)
        missing = [d.label() for d in removed if d not in self]
        if missing:
            raise InvalidInputError(f"cannot remove decisions absent from the set: {missing}")
        return DecisionSet({a: tuple(d for d in ds if d not in removed) for a, ds in self.by_agent.items()})


class Role(str, enum.Enum):
    CONVOY_HEAD = 'convoy_head'
    CONVOY_TAIL = 'convoy_tail'
    INDEPENDENT = 'independent'


@dataclass(frozen=True)
class EntityCausalGraph:
    nodes: Tuple[str, ...]
    edges: frozenset = frozenset()

    def __post_init__(self):
        nodes = tuple(sorted({str(n) for n in self.nodes}))
        edges = frozenset((str(a), str(b)) for a, b in self.edges)
        for a, b in edges:
            if a == b:
                raise InvalidInputError(f"self-loop on {a}")
            if a not in nodes or b not in nodes:
                raise InvalidInputError(f"edge {a}->{b} touches an unknown agent")
        object.__setattr__(self, 'nodes', nodes)
        object.__setattr__(self, 'edges', edges)

    def to_digraph(self):
        g = nx.DiGraph()
        g.add_nodes_from(self.nodes)
        g.add_edges_from(sorted(self.edges))
        return g

    def adjacency(self):
        """0/1 adjacency matrix with rows/columns in `nodes` order."""
        return nx.to_numpy_array(self.to_digraph(), nodelist=list(self.nodes), dtype=int)


@dataclass(frozen=True)
class DecisionCausalGraph:
    decisions: DecisionSet
    links: frozenset = frozenset()

    def __post_init__(self):
        links = frozenset(self.links)
        for cause, effect in links:
            if cause.agent_id == effect.agent_id:
                raise InvalidInputError(f"link {cause.label()}->{effect.label()} stays within one agent")
            if not cause.decision_time < effect.decision_time - TIME_EPS:
                raise InvalidInputError(f"link {cause.label()}->{effect.label()} goes back in time")
            if cause not in self.decisions or effect not in self.decisions:
                raise InvalidInputError(f"link {cause.label()}->{effect.label()} uses unknown decisions")
        object.__setattr__(self, 'links', links)

    def sorted_links(self):
        key = lambda link: (link[0].decision_time, link[1].decision_time, link[0].agent_id, link[1].agent_id)
        return sorted(self.links, key=key)


def entity_projection(g: DecisionCausalGraph) -> EntityCausalGraph:
    """Agent a -> b iff some decision of a links to some decision of b."""
    return EntityCausalGraph(g.decisions.agents, frozenset((c.agent_id, e.agent_id) for c, e in g.links))


@dataclass(frozen=True)
class Scene:
    scene_id: str
    grid: TimeGrid
    tracks: Tuple[AgentTrack, ...]
    roles: Mapping[str, Role] = field(default_factory=dict)
    ground_truth: Optional[EntityCausalGraph] = None
    metadata: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        tracks = tuple(self.tracks)
        ids = [t.agent_id for t in tracks]
        if len(set(ids)) != len(ids):
            raise InvalidInputError(f"scene {self.scene_id}: duplicate agent ids")
        for t in tracks:
            if abs(t.dt - self.grid.dt) > 1e-9 * self.grid.dt:
                raise InvalidInputError(f"scene {self.scene_id}: track {t.agent_id} is not on the scene grid step")
            if not (_on_grid(t.t_first, self.grid.t_start, self.grid.dt)
                    and self.grid.contains(t.t_first) and self.grid.contains(t.t_last)):
                raise InvalidInputError(f"scene {self.scene_id}: track {t.agent_id} leaves the scene grid")
        roles = {str(a): Role(r) for a, r in self.roles.items()}
        unknown = set(roles) - set(ids)
        if unknown:
            raise InvalidInputError(f"scene {self.scene_id}: roles for unknown agents {sorted(unknown)}")
        if self.ground_truth is not None:
            if set(roles) != set(ids):
                raise InvalidInputError(f"scene {self.scene_id}: roles must cover every agent with ground truth")
            if set(self.ground_truth.nodes) != set(ids):
                raise InvalidInputError(f"scene {self.scene_id}: ground truth nodes differ from scene agents")
        object.__setattr__(self, 'tracks', tracks)
        object.__setattr__(self, 'roles', roles)
        object.__setattr__(self, 'metadata', dict(self.metadata))

    @property
    def agent_ids(self):
        return tuple(t.agent_id for t in self.tracks)

    def track(self, agent_id):
        for t in self.tracks:
            if t.agent_id == agent_id:
                return t
        raise InvalidInputError(f"scene {self.scene_id} has no agent {agent_id}")

    def with_agent(self, role):
        return [a for a, r in self.roles.items() if r == role]


# =============================================================================
# JSON FILES
# =============================================================================

def decision_to_dict(d: Decision):
    return {'agent_id': d.agent_id, 't': d.decision_time,
            'target_speed': d.goal.target_speed, 'target_time': d.goal.target_time}


def decision_from_dict(raw):
    return Decision(str(raw['agent_id']), float(raw['t']),
                    Goal(float(raw['target_speed']), float(raw['target_time'])))


def graph_to_dict(graph: EntityCausalGraph, decision_graph: Optional[DecisionCausalGraph] = None):
    out = {'nodes': list(graph.nodes), 'edges': [[a, b] for a, b in sorted(graph.edges)]}
    if decision_graph is not None:
        out['decisions'] = [decision_to_dict(d) for d in decision_graph.decisions.all()]
        out['decision_links'] = [{'cause': decision_to_dict(c), 'effect': decision_to_dict(e)}
                                 for c, e in decision_graph.sorted_links()]
    return out


def graph_from_dict(raw) -> EntityCausalGraph:
    return EntityCausalGraph(tuple(raw['nodes']), frozenset(tuple(e) for e in raw['edges']))


def decision_graph_from_dict(raw) -> DecisionCausalGraph:
    decisions = DecisionSet.from_decisions((decision_from_dict(d) for d in raw.get('decisions', [])),
                                           agents=raw['nodes'])
    links = frozenset((decision_from_dict(l['cause']), decision_from_dict(l['effect']))
                      for l in raw.get('decision_links', []))
    return DecisionCausalGraph(decisions, links)


def track_to_dict(t: AgentTrack):
    out = {'agent_id': t.agent_id, 't_first': t.t_first, 'dt': t.dt,
           'length': t.length, 'width': t.width, 'lane_id': t.lane_id}
    for name in SERIES_FIELDS:
        out[name] = getattr(t, name).tolist()
    return out


def track_from_dict(raw):
    return AgentTrack(str(raw['agent_id']), float(raw['t_first']), float(raw['dt']),
                      *(raw[name] for name in SERIES_FIELDS),
                      length=float(raw['length']), width=float(raw['width']), lane_id=int(raw['lane_id']))


def scene_to_dict(scene: Scene):
    out = {
        'scene_id': scene.scene_id,
        'grid': {'t_start': scene.grid.t_start, 'dt': scene.grid.dt, 'n_steps': scene.grid.n_steps},
        'tracks': [track_to_dict(t) for t in scene.tracks],
        'roles': {a: r.value for a, r in sorted(scene.roles.items())},
        'metadata': dict(scene.metadata),
    }
    if scene.ground_truth is not None:
        out['ground_truth'] = graph_to_dict(scene.ground_truth)
    return out


def scene_from_dict(raw) -> Scene:
    grid = raw['grid']
    truth = raw.get('ground_truth')
    return Scene(str(raw['scene_id']),
                 TimeGrid(float(grid['t_start']), float(grid['dt']), int(grid['n_steps'])),
                 tuple(track_from_dict(t) for t in raw['tracks']),
                 roles=raw.get('roles', {}),
                 ground_truth=None if truth is None else graph_from_dict(truth),
                 metadata=raw.get('metadata', {}))


def save_scene(scene: Scene, path):
    with open(path, 'w') as f:
        json.dump(scene_to_dict(scene), f)


def load_scene(path) -> Scene:
    with open(path) as f:
        return scene_from_dict(json.load(f))


def save_graph(graph: EntityCausalGraph, path, decision_graph: Optional[DecisionCausalGraph] = None):
    with open(path, 'w') as f:
        json.dump(graph_to_dict(graph, decision_graph), f, indent=2)


def load_graph(path) -> EntityCausalGraph:
    with open(path) as f:
        return graph_from_dict(json.load(f))


def load_decision_graph(path) -> DecisionCausalGraph:
    with open(path) as f:
        return decision_graph_from_dict(json.load(f))
