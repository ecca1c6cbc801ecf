import os
import sys

import numpy as np
import pytest

# stage modules are flat, imported as top-level modules like main.py does
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from ccd_scene import AgentTrack, Scene, TimeGrid  # noqa: E402
from ccd_synth import SyntheticSpec, generate_synthetic_scene  # noqa: E402

# Coarser step than the recordings keeps the end-to-end tests quick
FAST_SPEC = SyntheticSpec(dt=0.1)


def make_track(agent_id, accel, dt=0.1, v0=30.0, x0=0.0, y0=0.0, t_first=0.0, length=4.5, width=1.8, lane_id=2):
    """Straight-road track integrated from a longitudinal acceleration profile (speed clamped at 0)."""
    accel = np.asarray(accel, dtype=float)
    speed = np.empty(len(accel))
    speed[0] = v0
    for k in range(1, len(accel)):
        speed[k] = max(speed[k - 1] + accel[k - 1] * dt, 0.0)
    x = x0 + np.concatenate(([0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * dt)))
    n = len(accel)
    return AgentTrack(agent_id, t_first, dt, x, np.full(n, y0), np.zeros(n), speed, accel,
                      length=length, width=width, lane_id=lane_id)


def step_profile(n, dt, segments):
    """Acceleration array of n samples; segments are (t_from, t_to, a) with t_from <= t < t_to."""
    t = np.arange(n) * dt
    a = np.zeros(n)
    for t0, t1, value in segments:
        a[(t >= t0 - 1e-9) & (t < t1 - 1e-9)] = value
    return a


def scene_of(*tracks, scene_id='scene'):
    n = max(t.n_steps for t in tracks)
    return Scene(scene_id, TimeGrid(tracks[0].t_first, tracks[0].dt, n), tuple(tracks))


@pytest.fixture
def braking_track():
    # 30 m/s, -2 m/s^2 from t=2 to t=7 (20 m/s), 10 s at 25 Hz
    dt = 0.04
    return make_track('1', step_profile(251, dt, [(2.0, 7.0, -2.0)]), dt=dt)


@pytest.fixture(scope='session')
def synth_scene():
    return generate_synthetic_scene(7, FAST_SPEC)


@pytest.fixture(scope='session')
def synth_scenes():
    return [generate_synthetic_scene(seed, FAST_SPEC) for seed in range(5)]


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: corpus-scale checks at the native 25 Hz step')
