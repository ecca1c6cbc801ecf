import math

import numpy as np
import pandas as pd
import pytest

from ccd_errors import InvalidInputError
from ccd_scene import Decision, DecisionSet, Goal
from ccd_sim import (BodyState, SimConfig, WorldState, controller_acceleration, simulate, step,
                     time_to_collision, write_trace_csv)
from conftest import make_track, scene_of


def _world(*bodies, time=0.0):
    named = {str(i + 1): b for i, b in enumerate(bodies)}
    return WorldState(time, named, {a: 0.0 for a in named})


def _rear_end_scene():
    # lead 30 m ahead at 10 m/s, follower at 20 m/s; both recorded at constant speed for 10 s
    lead = make_track('1', np.zeros(101), v0=10.0, x0=30.0)
    follower = make_track('2', np.zeros(101), v0=20.0)
    return scene_of(lead, follower)


class TestController:

    def test_reaches_goal_linearly(self):
        assert controller_acceleration(20.0, Goal(30.0, 5.0), 0.0, 0.04) == pytest.approx(2.0)

    def test_zero_error(self):
        assert controller_acceleration(17.0, Goal(17.0, 3.0), 9.0, 0.04) == 0.0

    def test_past_goal_converges_in_one_step(self):
        assert controller_acceleration(10.0, Goal(12.0, 4.0), 5.0, 0.04) == pytest.approx(50.0)

    def test_rejects_bad_step(self):
        with pytest.raises(InvalidInputError):
            controller_acceleration(10.0, Goal(12.0, 4.0), 0.0, 0.0)


class TestStep:

    def test_trapezoidal_update(self):
        w = _world(BodyState(0.0, 0.0, 0.0, 10.0, 2.25, 0.9))
        nxt = step(w, {'1': Goal(12.0, 1.0)}, SimConfig(dt=0.04))
        body = nxt.bodies['1']
        assert body.speed == pytest.approx(10.08)
        assert body.x == pytest.approx(0.4016)
        assert nxt.time == pytest.approx(0.04)

    def test_isolated_agent_never_collides(self):
        w = _world(BodyState(0.0, 0.0, 0.0, 30.0, 2.25, 0.9))
        for _ in range(50):
            w = step(w, {'1': Goal(30.0, 0.0)}, SimConfig(dt=0.1))
        assert w.cct['1'] == 0.0
        assert w.bodies['1'].speed == pytest.approx(30.0)

    def test_overlapping_bodies_accumulate_cct(self):
        w = _world(BodyState(0.0, 0.0, 0.0, 5.0, 2.25, 0.9), BodyState(1.0, 0.0, 0.0, 5.0, 2.25, 0.9))
        nxt = step(w, {'1': Goal(5.0, 0.0), '2': Goal(5.0, 0.0)}, SimConfig(dt=0.1))
        assert nxt.cct == pytest.approx({'1': 0.1, '2': 0.1})
        assert nxt.contacts == {('1', '2')}

    def test_speed_clamped_at_zero(self):
        w = _world(BodyState(0.0, 0.0, 0.0, 0.5, 2.25, 0.9))
        nxt = step(w, {'1': Goal(0.0, 0.0)}, SimConfig(dt=0.1))
        assert nxt.bodies['1'].speed == 0.0

    def test_missing_goal(self):
        with pytest.raises(InvalidInputError):
            step(_world(BodyState(0.0, 0.0, 0.0, 5.0, 2.25, 0.9)), {}, SimConfig(dt=0.1))


class TestTimeToCollision:

    def test_closing_gap(self):
        # centres 20 m apart, 2.5 m half lengths: 15 m to contact at 5 m/s closing speed
        w = _world(BodyState(0.0, 0.0, 0.0, 10.0, 2.5, 1.0), BodyState(20.0, 0.0, 0.0, 5.0, 2.5, 1.0))
        cfg = SimConfig(dt=0.1)
        assert abs(time_to_collision(w, '1', cfg) - 3.0) <= cfg.dt + 1e-9
        assert time_to_collision(w, '2', cfg) == time_to_collision(w, '1', cfg)

    def test_no_collision_course(self):
        w = _world(BodyState(0.0, 0.0, 0.0, 10.0, 2.5, 1.0), BodyState(20.0, 0.0, 0.0, 15.0, 2.5, 1.0),
                   BodyState(0.0, 3.75, 0.0, 10.0, 2.5, 1.0))
        assert time_to_collision(w, '1', SimConfig(dt=0.1)) == math.inf

    def test_overlapping_now(self):
        w = _world(BodyState(0.0, 0.0, 0.0, 10.0, 2.5, 1.0), BodyState(3.0, 0.0, 0.0, 10.0, 2.5, 1.0))
        assert time_to_collision(w, '1', SimConfig(dt=0.1)) == 0.0

    def test_beyond_horizon(self):
        w = _world(BodyState(0.0, 0.0, 0.0, 10.0, 2.5, 1.0), BodyState(105.0, 0.0, 0.0, 5.0, 2.5, 1.0))
        assert time_to_collision(w, '1', SimConfig(dt=0.1, ttc_horizon=10.0)) == math.inf

    def test_unknown_agent(self):
        with pytest.raises(InvalidInputError):
            time_to_collision(_world(BodyState(0.0, 0.0, 0.0, 10.0, 2.5, 1.0)), '9', SimConfig(dt=0.1))


class TestSimulate:

    def test_hold_without_decisions(self):
        scene = scene_of(make_track('1', np.zeros(101), v0=25.0))
        trace = simulate(scene, DecisionSet({'1': ()}), SimConfig(dt=0.1, horizon=10.0))
        np.testing.assert_allclose(trace.get('1', 'speed'), 25.0)
        assert not trace.get('1', 'cct').any()
        assert trace.collisions == ()

    def test_goal_reached_in_time(self):
        scene = scene_of(make_track('1', np.zeros(101), v0=20.0))
        decisions = DecisionSet.from_decisions([Decision('1', 0.0, Goal(30.0, 5.0))])
        trace = simulate(scene, decisions, SimConfig(dt=0.1, horizon=10.0))
        k = trace.index_at(5.0 + 0.1)
        assert trace.get('1', 'speed')[k] == pytest.approx(30.0, abs=0.1)
        assert np.all(np.diff(trace.get('1', 'speed')) >= -1e-9)
        assert trace.get('1', 'speed').max() <= 30.0 + 1e-6

    def test_constant_acceleration_matches_closed_form(self):
        scene = scene_of(make_track('1', np.zeros(301), v0=10.0))
        decisions = DecisionSet.from_decisions([Decision('1', 0.0, Goal(40.0, 30.0))])
        trace = simulate(scene, decisions, SimConfig(dt=0.1, horizon=30.0))
        t = trace.times
        expected = 10.0 * t + 0.5 * 1.0 * t ** 2
        np.testing.assert_allclose(trace.get('1', 'x')[1:], expected[1:], rtol=1e-6)

    def test_rear_end_collision_is_logged(self):
        trace = simulate(_rear_end_scene(), DecisionSet({'1': (), '2': ()}), SimConfig(dt=0.1, horizon=10.0))
        cct_lead, cct_follow = trace.get('1', 'cct'), trace.get('2', 'cct')
        assert cct_lead[-1] > 0 and cct_follow[-1] > 0
        assert np.all(np.diff(cct_follow) >= 0)
        (event,) = trace.collisions
        assert event.agents == ('1', '2')
        first = np.flatnonzero(cct_follow > 0)[0]
        assert event.onset <= trace.times[first] + 1e-9
        # 30 m centre gap minus 4.5 m of bodies, closing at 10 m/s
        assert event.onset == pytest.approx(2.6, abs=0.1)

    def test_braking_follower_avoids_collision(self):
        decisions = DecisionSet.from_decisions([Decision('2', 0.0, Goal(10.0, 1.0))], agents=('1',))
        trace = simulate(_rear_end_scene(), decisions, SimConfig(dt=0.1, horizon=10.0))
        assert trace.collisions == ()
        assert np.isfinite(trace.get('2', 'ttc')[0])
        assert trace.get('2', 'ttc')[-1] == math.inf

    def test_late_agent_enters_at_first_sample(self):
        early = make_track('1', np.zeros(101), v0=30.0)
        late = make_track('2', np.zeros(71), v0=28.0, x0=50.0, y0=3.75, t_first=3.0)
        decisions = DecisionSet.from_decisions([Decision('1', 1.0, Goal(20.0, 4.0)),
                                                Decision('2', 6.0, Goal(20.0, 9.0))])
        trace = simulate(scene_of(early, late), decisions, SimConfig(dt=0.1, start_time=1.0, horizon=9.0))

        assert trace.agent_ids == ('1', '2')
        before = trace.times < 3.0 - 1e-9
        speed, x = trace.get('2', 'speed'), trace.get('2', 'x')
        assert np.all(np.isnan(speed[before])) and np.all(trace.get('2', 'ttc')[before] == math.inf)
        k = trace.index_at(3.0)
        assert speed[k] == pytest.approx(28.0) and x[k] == pytest.approx(50.0)
        # holds its entry speed until its own decision
        np.testing.assert_allclose(speed[k:trace.index_at(6.0) + 1], 28.0)
        assert speed[-1] == pytest.approx(20.0, abs=1e-6)
        assert np.all(trace.get('2', 'cct') == 0.0)
        assert trace.get('1', 'speed')[-1] == pytest.approx(20.0, abs=1e-6)

    def test_late_agent_trace_csv_skips_absent_rows(self, tmp_path):
        early = make_track('1', np.zeros(101), v0=30.0)
        late = make_track('2', np.zeros(51), v0=30.0, y0=3.75, t_first=5.0)
        trace = simulate(scene_of(early, late), DecisionSet(), SimConfig(dt=0.1, horizon=10.0))
        assert trace.same_as(simulate(scene_of(early, late), DecisionSet(), SimConfig(dt=0.1, horizon=10.0)))
        write_trace_csv(trace, tmp_path / 'trace.csv')
        df = pd.read_csv(tmp_path / 'trace.csv')
        assert (df['agent_id'] == 2).sum() == 51
        assert df.loc[df['agent_id'] == 2, 'time'].min() == pytest.approx(5.0)

    def test_start_outside_grid(self):
        with pytest.raises(InvalidInputError):
            simulate(_rear_end_scene(), DecisionSet(), SimConfig(dt=0.1, start_time=50.0))

    def test_deterministic(self):
        cfg = SimConfig(dt=0.1, horizon=10.0)
        first = simulate(_rear_end_scene(), DecisionSet(), cfg)
        assert first.same_as(simulate(_rear_end_scene(), DecisionSet(), cfg))

    def test_trace_csv(self, tmp_path):
        trace = simulate(_rear_end_scene(), DecisionSet(), SimConfig(dt=0.1, horizon=1.0))
        path = tmp_path / 'trace.csv'
        write_trace_csv(trace, path, header_lines=['world=EC'])
        assert path.read_text().startswith('# world=EC\n')
        df = pd.read_csv(path, comment='#')
        assert list(df.columns) == ['time', 'agent_id', 'x', 'y', 'speed', 'accel', 'ttc', 'cct']
        assert len(df) == 2 * len(trace.times)
