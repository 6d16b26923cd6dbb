import math

import numpy as np
import pytest

from dronevolve.morphology import baseline_hexacopter, decode
from dronevolve.sim import DroneState
from dronevolve.tasks import (
    BadParams,
    DEFAULT_PASS_RADIUS,
    Gate,
    GateProgress,
    ROTATION_PENALTY,
    TaskEnv,
    Track,
    build_observation,
    evaluate_fitness,
    lap_stats,
    make_track,
    start_state,
    track_from_config,
)


def rot_z(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


class TestMakeTrack:
    def test_circle_geometry(self):
        track = make_track("circle", radius=2.0, n_gates=8)
        assert len(track.gates) == 8
        for k, gate in enumerate(track.gates):
            assert np.linalg.norm(gate.center) == pytest.approx(2.0, abs=1e-12)
        for a, b in zip(track.gates, track.gates[1:]):
            cos_between = float(a.center @ b.center) / 4.0
            assert cos_between == pytest.approx(math.cos(math.pi / 4), abs=1e-12)

    def test_shuttlerun(self):
        track = make_track("shuttlerun", length=4.0)
        assert len(track.gates) == 2
        assert np.linalg.norm(track.gates[0].center - track.gates[1].center) == pytest.approx(4.0)
        # opposing headings
        dyaw = abs(track.gates[0].yaw - track.gates[1].yaw)
        assert dyaw == pytest.approx(math.pi, abs=1e-12)

    def test_figure8_visits_both_lobes(self):
        track = make_track("figure8")
        assert len(track.gates) % 2 == 0
        xs = np.array([g.center[0] for g in track.gates])
        assert (xs > 0.5).any() and (xs < -0.5).any()
        # gates are evenly spaced along the walk: consecutive gaps all equal
        gaps = [
            np.linalg.norm(a.center - b.center)
            for a, b in zip(track.gates, track.gates[1:] + track.gates[:1])
        ]
        np.testing.assert_allclose(gaps, gaps[0], atol=1e-9)

    def test_slalom_alternates(self):
        track = make_track("slalom", width=1.0, spacing=2.0, gates_per_direction=5)
        assert len(track.gates) == 10
        xs = [g.center[0] for g in track.gates]
        assert all(abs(x) == 1.0 for x in xs)
        assert all(a * b < 0 for a, b in zip(xs, xs[1:]))  # strict alternation

    def test_bad_params(self):
        with pytest.raises(BadParams):
            make_track("circle", radius=-1.0)
        with pytest.raises(BadParams):
            make_track("figure8", n_gates=7)
        with pytest.raises(BadParams):
            make_track("warp")
        with pytest.raises(BadParams):
            make_track("circle", bogus=3)

    def test_track_from_config_round_trip(self):
        track = track_from_config({"kind": "circle", "radius": 3.0, "n_gates": 6})
        again = Track.from_dict(track.to_dict())
        assert again.kind == track.kind
        assert len(again.gates) == len(track.gates)
        np.testing.assert_array_equal(again.gates[2].center, track.gates[2].center)


class TestGateProgress:
    def test_pass_increments_and_advances(self):
        track = make_track("circle", radius=2.0, n_gates=4)
        prog = GateProgress(track)
        n = len(track.gates)
        far = np.array([50.0, 50.0, 50.0])
        t = 0.0
        for k in range(6):  # 1.5 laps of teleports
            t += 0.5
            passed = prog.update(track.gates[k % n].center + 0.1, t)
            assert passed
            assert prog.waypoints_passed == k + 1
            assert prog.target_idx == (k + 1) % n
            assert not prog.update(far, t)  # far point never passes

    def test_lap_stats_oracle(self):
        # a gate every 0.5 s for 12 s: 24 passes
        n_gates = 8
        pass_times = [0.5 * (k + 1) for k in range(24)]
        laps, avg = lap_stats(pass_times, n_gates)
        assert laps == 3
        assert avg == pytest.approx(0.5 * n_gates)

    def test_lap_stats_incomplete(self):
        assert lap_stats([0.5, 1.0], 8) == (0, None)


class TestEnvStep:
    def make_env(self, track=None, seconds=12.0):
        track = track or make_track("circle")
        ph = decode(baseline_hexacopter())
        return TaskEnv(track, ph, episode_seconds=seconds)

    def test_reward_arithmetic(self):
        # hand case: s_prev = 5.0, s_t = 4.8, |Omega| = 10 -> 0.2 - 0.01
        s_prev, s_t, omega_norm = 5.0, 4.8, 10.0
        assert (s_prev - s_t) - ROTATION_PENALTY * omega_norm == pytest.approx(0.19)

    def test_stationary_drone_zero_reward(self):
        env = self.make_env()
        env.reset()
        # hold the drone still: hover thrust exactly cancels gravity
        u_hover = env.phys.total_mass * env.phys.g / (6.0 * env.phys.k_f)
        env.state.omega = np.full(6, math.sqrt(u_hover))
        obs, reward, done, info = env.step(np.full(6, math.sqrt(u_hover)))
        assert reward == pytest.approx(0.0, abs=1e-9)

    def test_reward_telescopes(self):
        env = self.make_env()
        env.reset()
        s_start = env.s_prev
        total = 0.0
        penalties = 0.0
        rng = np.random.default_rng(3)
        for _ in range(40):  # free-ish flight, no gate switch expected
            action = rng.uniform(0.3, 0.7, 6)
            _, r, done, _ = env.step(action)
            total += r
            penalties += ROTATION_PENALTY * float(np.linalg.norm(env.state.Omega))
            assert env.progress.waypoints_passed == 0
            if done:
                break
        s_end = env.progress.distance_to_target(env.state.p)
        assert total + penalties == pytest.approx(s_start - s_end, abs=1e-9)

    def test_gate_pass_increments_once(self):
        # custom gate directly under the start point: the sinking drone
        # passes it immediately, then targets the far second gate
        start = start_state(make_track("circle"))
        g0 = Gate(center=start.p - np.array([0.0, 0.0, 0.05]), yaw=0.0)
        g1 = Gate(center=np.array([30.0, 0.0, 0.0]), yaw=0.0)
        track = Track(kind="circle", gates=(g0, g1), pass_radius=DEFAULT_PASS_RADIUS)
        ph = decode(baseline_hexacopter())
        env = TaskEnv(track, ph)
        # align the env start with our custom gate
        env.state = start.copy()
        env.s_prev = env.progress.distance_to_target(env.state.p)
        _, _, _, info = env.step(np.zeros(6))
        assert info["waypoints"] == 1
        assert env.progress.target_idx == 1
        _, _, _, info = env.step(np.zeros(6))
        assert info["waypoints"] == 1  # far gate not reached

    def test_episode_truncates_at_step_limit(self):
        env = self.make_env(seconds=0.1)
        env.reset()
        u = math.sqrt(env.phys.total_mass * env.phys.g / (6.0 * env.phys.k_f))
        env.state.omega = np.full(6, u)
        done = False
        steps = 0
        while not done:
            _, _, done, info = env.step(np.full(6, u))
            steps += 1
        assert steps == 10
        assert not info["terminated"]

    def test_out_of_bounds_terminates(self):
        env = self.make_env()
        env.reset()
        env.state.v = np.array([400.0, 0.0, 0.0])
        _, _, done, info = env.step(np.zeros(6))
        done2 = done
        while not done2:
            _, _, done2, info = env.step(np.zeros(6))
        assert info["terminated"]


class TestObservation:
    def test_length_and_finite(self):
        track = make_track("circle")
        st = start_state(track)
        obs = build_observation(track, 0, st)
        assert obs.shape == (16,)
        assert np.isfinite(obs).all()

    def test_yaw_rotation_invariance(self, rng):
        # rotating the whole scene about world z leaves the 10 relative
        # components unchanged
        track = make_track("slalom")
        for _ in range(20):
            st = DroneState.at_rest(p=rng.uniform(-3, 3, 3))
            st.v = rng.uniform(-2, 2, 3)
            st.Theta = rng.uniform(-0.8, 0.8, 3)
            st.Omega = rng.uniform(-1, 1, 3)
            target = int(rng.integers(len(track.gates)))
            obs = build_observation(track, target, st)

            a = float(rng.uniform(0, 2 * math.pi))
            R = rot_z(a)
            gates = tuple(
                Gate(center=R @ g.center, yaw=g.yaw + a) for g in track.gates
            )
            rotated = Track(kind=track.kind, gates=gates, pass_radius=track.pass_radius)
            st2 = st.copy()
            st2.p = R @ st.p
            st2.v = R @ st.v
            st2.Theta = st.Theta + np.array([0.0, 0.0, a])
            obs2 = build_observation(rotated, target, st2)

            rel = np.r_[0:6, 12:16]  # target offset, velocity, next-gate offset + yaw
            np.testing.assert_allclose(obs2[rel], obs[rel], atol=1e-9)


class TestEvaluateFitness:
    def test_zero_command_policy_scores_zero(self, baseline_ph, phys):
        class ZeroPolicy:
            def act(self, obs, deterministic=True):
                return np.zeros(6), 0.0

        report = evaluate_fitness(baseline_ph, ZeroPolicy(), make_track("circle"), phys)
        assert report.waypoints == 0
        assert report.avg_lap_time is None

    def test_twelve_seconds_is_1200_steps(self, baseline_ph, phys):
        class HoverPolicy:
            def act(self, obs, deterministic=True):
                u = phys.total_mass * phys.g / (6.0 * phys.k_f)
                return np.full(6, math.sqrt(u)), 0.0

        report = evaluate_fitness(baseline_ph, HoverPolicy(), make_track("circle"), phys)
        assert report.n_steps == 1200
