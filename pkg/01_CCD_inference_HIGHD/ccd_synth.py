# SYNTHETIC CONVOY SCENES
# Two-car convoy plus one vehicle in the neighbouring lane. The head brakes on a script, the tail mirrors it after
# a delay. Tracks are produced by the kinematic simulator so decision extraction can recover the script.
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import List

import numpy as np

from ccd_errors import InvalidInputError
from ccd_scene import AgentTrack, Decision, DecisionSet, EntityCausalGraph, Goal, Role, Scene, TimeGrid, decision_to_dict
from ccd_sim import SimConfig, simulate

logger = logging.getLogger(__name__)

HEAD_ID, TAIL_ID, INDEPENDENT_ID = '1', '2', '3'
CONVOY_LANE, INDEPENDENT_LANE = 2, 3


@dataclass(frozen=True)
class SyntheticSpec:
    dt: float = 0.04
    duration: float = 20.0
    convoy_speed: float = 30.0            # m/s, both convoy vehicles
    headway: float = 1.0                  # s, bumper gap at convoy_speed
    brake_start: float = 4.0              # s, head decision time
    brake_duration: float = 4.0           # s, head decision to goal time
    target_speed: float = 15.0            # m/s, head goal
    follower_delay: float = 1.0           # s, tail reacts this much later with the same goal
    independent_speed: float = 25.0
    independent_offset: float = 0.0       # m, along the road relative to the head
    lane_width: float = 3.75
    vehicle_length: float = 4.5
    vehicle_width: float = 1.8
    speed_jitter: float = 1.0             # m/s, uniform +- on initial and target speeds
    start_jitter: float = 1.0             # s, uniform delay added to brake_start (snapped to the grid)

    def __post_init__(self):
        if self.headway < 0:
            raise InvalidInputError(f"headway must be non-negative, got {self.headway}")
        if not (self.dt > 0 and self.duration > 0 and self.brake_duration > 0):
            raise InvalidInputError("dt, duration and brake_duration must be positive")
        if self.follower_delay < 0 or self.brake_start < 0 or self.speed_jitter < 0 or self.start_jitter < 0:
            raise InvalidInputError("delays, start time and jitters must be non-negative")
        if self.vehicle_length <= 0 or self.vehicle_width <= 0 or self.lane_width < self.vehicle_width:
            raise InvalidInputError("vehicles must have positive extents and fit in their lane")
        if min(self.convoy_speed, self.target_speed, self.independent_speed) - self.speed_jitter < 0:
            raise InvalidInputError("speeds must stay non-negative under jitter")
        last_goal = self.brake_start + self.start_jitter + self.follower_delay + self.brake_duration
        if last_goal >= self.duration:
            raise InvalidInputError(f"scripted decisions end at {last_goal:.2f} s, after the {self.duration} s scene")


def _constant_track(agent_id, grid: TimeGrid, x0, y0, speed, spec: SyntheticSpec, lane_id):
    t = grid.times() - grid.t_start
    n = grid.n_steps
    return AgentTrack(agent_id, grid.t_start, grid.dt, x0 + speed * t, np.full(n, y0), np.zeros(n),
                      np.full(n, speed), np.zeros(n), length=spec.vehicle_length, width=spec.vehicle_width,
                      lane_id=lane_id)


def scripted_decisions(seed, spec: SyntheticSpec):
    """Initial speeds and the decision script of one seeded scene."""
    rng = np.random.default_rng(seed)
    jitter = lambda: rng.uniform(-spec.speed_jitter, spec.speed_jitter)
    v_convoy = spec.convoy_speed + jitter()
    v_target = spec.target_speed + jitter()
    v_indep = spec.independent_speed + jitter()
    shift = int(rng.integers(0, int(round(spec.start_jitter / spec.dt)) + 1)) * spec.dt
    t_head = round((spec.brake_start + shift) / spec.dt) * spec.dt
    t_tail = round((spec.brake_start + shift + spec.follower_delay) / spec.dt) * spec.dt
    n_goal = round(spec.brake_duration / spec.dt)
    script = [Decision(HEAD_ID, t_head, Goal(v_target, t_head + n_goal * spec.dt)),
              Decision(TAIL_ID, t_tail, Goal(v_target, t_tail + n_goal * spec.dt))]
    return {'convoy': v_convoy, 'independent': v_indep}, script


def _rear_end(trace):
    return any(set(e.agents) == {HEAD_ID, TAIL_ID} for e in trace.collisions)


def generate_synthetic_scene(seed, spec: SyntheticSpec = SyntheticSpec()) -> Scene:
    """
    Deterministic per seed. metadata['counterfactual_collision'] is True when dropping the tail's braking decision
    makes the tail run into the head.
    """
    grid = TimeGrid(0.0, spec.dt, int(round(spec.duration / spec.dt)) + 1)
    speeds, script = scripted_decisions(seed, spec)
    v = speeds['convoy']
    stubs = (
        _constant_track(HEAD_ID, grid, 0.0, 0.0, v, spec, CONVOY_LANE),
        _constant_track(TAIL_ID, grid, -(spec.vehicle_length + spec.headway * v), 0.0, v, spec, CONVOY_LANE),
        _constant_track(INDEPENDENT_ID, grid, spec.independent_offset, spec.lane_width, speeds['independent'], spec,
                        INDEPENDENT_LANE),
    )
    agents = tuple(t.agent_id for t in stubs)
    stub_scene = Scene(f"synth_{seed:05d}", grid, stubs)
    decisions = DecisionSet.from_decisions(script, agents)
    cfg = SimConfig(dt=spec.dt, start_time=grid.t_start, horizon=grid.t_end - grid.t_start)

    trace = simulate(stub_scene, decisions, cfg)
    if trace.collisions:
        raise InvalidInputError(f"seed {seed}: scripted scene already collides, widen the headway")
    tracks = tuple(AgentTrack(s.agent_id, grid.t_start, grid.dt, trace.get(s.agent_id, 'x'), trace.get(s.agent_id, 'y'),
                              s.heading, trace.get(s.agent_id, 'speed'), trace.get(s.agent_id, 'long_accel'),
                              length=s.length, width=s.width, lane_id=s.lane_id) for s in stubs)

    without_tail = decisions.without(decisions.of(TAIL_ID))
    collision = _rear_end(simulate(stub_scene, without_tail, cfg))
    logger.debug("seed %d: counterfactual collision %s", seed, collision)

    return Scene(
        stub_scene.scene_id, grid, tracks,
        roles={HEAD_ID: Role.CONVOY_HEAD, TAIL_ID: Role.CONVOY_TAIL, INDEPENDENT_ID: Role.INDEPENDENT},
        ground_truth=EntityCausalGraph(agents, frozenset({(HEAD_ID, TAIL_ID)})),
        metadata={'source': 'synthetic', 'seed': int(seed), 'spec': asdict(spec),
                  'script': [decision_to_dict(d) for d in script],
                  'counterfactual_collision': bool(collision)})


def generate_synthetic_scenes(n, seed, spec: SyntheticSpec = SyntheticSpec()) -> List[Scene]:
    return [generate_synthetic_scene(seed + i, spec) for i in range(n)]
