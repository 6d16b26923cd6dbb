"""Waypoint tracks, gate progress, observations, reward, and fitness.

A track is a cyclic sequence of gates (position + heading).  The per-step
reward is the progress toward the current target gate minus a small penalty
on body rotation rate:

    r_t = (s_{t-1} - s_t) - 0.001 * ||Omega_t||

where s is the distance to the gate that was the target when the step began,
so a gate switch never produces a distance jump in the reward.  Fitness is
the number of gates passed in a fixed-length deterministic evaluation
rollout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import PhysicalConstants
from .morphology import Phenotype, wrap_angle_pi
from .sim import DroneState, GimbalLock, NonFiniteState, PITCH_GUARD
from .sim import step as sim_step

OBS_DIM = 16
ROTATION_PENALTY = 0.001
DEFAULT_PASS_RADIUS = 0.3
DEFAULT_EPISODE_SECONDS = 12.0
POSITION_LIMIT = 50.0  # m from the origin before the episode aborts

TRACK_KINDS = ("circle", "slalom", "shuttlerun", "figure8")


class BadParams(ValueError):
    """Invalid track construction parameters."""


@dataclass(frozen=True)
class Gate:
    center: np.ndarray  # (3,) m
    yaw: float          # track heading at the gate, rad


@dataclass(frozen=True)
class Track:
    kind: str
    gates: tuple[Gate, ...]
    pass_radius: float = DEFAULT_PASS_RADIUS

    def __post_init__(self):
        if len(self.gates) < 2:
            raise BadParams("a track needs at least 2 gates")
        if self.pass_radius <= 0:
            raise BadParams("pass_radius must be positive")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "pass_radius": self.pass_radius,
            "gates": [
                {"center": [float(x) for x in gate.center], "yaw": gate.yaw}
                for gate in self.gates
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Track":
        gates = tuple(
            Gate(center=np.asarray(g["center"], dtype=float), yaw=float(g["yaw"]))
            for g in d["gates"]
        )
        return cls(kind=d["kind"], gates=gates, pass_radius=float(d.get("pass_radius", DEFAULT_PASS_RADIUS)))


def _circle(radius=2.0, n_gates=8, pass_radius=DEFAULT_PASS_RADIUS) -> Track:
    if radius <= 0 or n_gates < 2:
        raise BadParams("circle: radius must be > 0 and n_gates >= 2")
    gates = []
    for k in range(n_gates):
        a = 2.0 * math.pi * k / n_gates
        gates.append(Gate(center=np.array([radius * math.cos(a), radius * math.sin(a), 0.0]),
                          yaw=wrap_angle_pi(a + math.pi / 2.0)))
    return Track(kind="circle", gates=tuple(gates), pass_radius=pass_radius)


def _slalom(width=1.0, spacing=2.0, gates_per_direction=5, pass_radius=DEFAULT_PASS_RADIUS) -> Track:
    if width <= 0 or spacing <= 0 or gates_per_direction < 1:
        raise BadParams("slalom: width, spacing and gates_per_direction must be positive")
    n = gates_per_direction
    gates = []
    for k in range(n):  # outbound, weaving along +y
        x = width if k % 2 == 0 else -width
        gates.append(Gate(center=np.array([x, k * spacing, 0.0]), yaw=math.pi / 2.0))
    for k in range(n, 2 * n):  # return leg, alternation continues
        x = width if k % 2 == 0 else -width
        gates.append(Gate(center=np.array([x, (2 * n - 1 - k) * spacing, 0.0]), yaw=-math.pi / 2.0))
    return Track(kind="slalom", gates=tuple(gates), pass_radius=pass_radius)


def _shuttlerun(length=4.0, pass_radius=DEFAULT_PASS_RADIUS) -> Track:
    if length <= 0:
        raise BadParams("shuttlerun: length must be positive")
    gates = (
        Gate(center=np.zeros(3), yaw=math.pi / 2.0),
        Gate(center=np.array([0.0, length, 0.0]), yaw=-math.pi / 2.0),
    )
    return Track(kind="shuttlerun", gates=gates, pass_radius=pass_radius)


def _figure8(radius=2.0, n_gates=12, pass_radius=DEFAULT_PASS_RADIUS) -> Track:
    """Two circles tangent at the origin, right lobe swept counterclockwise
    and left lobe clockwise, crossing at the center like a lemniscate."""
    if radius <= 0:
        raise BadParams("figure8: radius must be positive")
    if n_gates < 4 or n_gates % 2 != 0:
        raise BadParams("figure8: n_gates must be even and >= 4")
    half = n_gates // 2
    gates = []
    right = np.array([radius, 0.0, 0.0])
    for j in range(half):  # right lobe, CCW from the crossing point
        a = math.pi + 2.0 * math.pi * j / half
        gates.append(Gate(center=right + radius * np.array([math.cos(a), math.sin(a), 0.0]),
                          yaw=wrap_angle_pi(a + math.pi / 2.0)))
    left = np.array([-radius, 0.0, 0.0])
    for j in range(half):  # left lobe, CW from the crossing point
        a = -2.0 * math.pi * j / half
        gates.append(Gate(center=left + radius * np.array([math.cos(a), math.sin(a), 0.0]),
                          yaw=wrap_angle_pi(a - math.pi / 2.0)))
    return Track(kind="figure8", gates=tuple(gates), pass_radius=pass_radius)


_TRACK_BUILDERS = {
    "circle": _circle,
    "slalom": _slalom,
    "shuttlerun": _shuttlerun,
    "figure8": _figure8,
}


def make_track(kind: str, **params) -> Track:
    """Build one of the standard tracks; see _TRACK_BUILDERS for parameters."""
    if kind not in _TRACK_BUILDERS:
        raise BadParams(f"unknown track kind {kind!r}; expected one of {TRACK_KINDS}")
    try:
        return _TRACK_BUILDERS[kind](**params)
    except TypeError as exc:
        raise BadParams(f"{kind}: {exc}") from exc


def track_from_config(cfg: dict) -> Track:
    """Track from a config mapping: {'kind': ..., <builder parameters>}."""
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    if kind is None:
        raise BadParams("track config needs a 'kind' field")
    return make_track(kind, **cfg)


# ---------------------------------------------------------------------------
# Gate progress bookkeeping


class GateProgress:
    """Tracks the current target gate, passes, and pass times."""

    def __init__(self, track: Track):
        self.track = track
        self.target_idx = 0
        self.waypoints_passed = 0
        self.pass_times: list[float] = []

    def distance_to_target(self, p: np.ndarray) -> float:
        return float(np.linalg.norm(self.track.gates[self.target_idx].center - p))

    def update(self, p: np.ndarray, t: float) -> bool:
        """Advance the target if p is within the pass radius.  Returns True
        when a gate was passed (the target advances by exactly one)."""
        if self.distance_to_target(p) < self.track.pass_radius:
            self.waypoints_passed += 1
            self.pass_times.append(t)
            self.target_idx = (self.target_idx + 1) % len(self.track.gates)
            return True
        return False


def lap_stats(pass_times: list[float], n_gates: int) -> tuple[int, float | None]:
    """(completed laps, average lap time).

    A lap completes every n_gates passes; the first lap is timed from the
    episode start.  Average lap time is undefined (None) when no lap has
    been completed.
    """
    laps = len(pass_times) // n_gates
    if laps < 1:
        return 0, None
    last_completion = pass_times[laps * n_gates - 1]
    return laps, last_completion / laps


# ---------------------------------------------------------------------------
# Observation


def _rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def build_observation(track: Track, target_idx: int, st: DroneState) -> np.ndarray:
    """16-vector observation.

    Relative quantities (target offset, velocity, next-gate offset and yaw)
    are expressed in the target gate's yaw frame, which makes those ten
    components invariant under a global yaw rotation of the whole scene.
    Euler angles and body rates are appended as-is.
    """
    gates = track.gates
    gate = gates[target_idx]
    nxt = gates[(target_idx + 1) % len(gates)]
    to_gate = _rot_z(gate.yaw).T @ (gate.center - st.p)
    vel = _rot_z(gate.yaw).T @ st.v
    next_rel = _rot_z(gate.yaw).T @ (nxt.center - gate.center)
    next_yaw = wrap_angle_pi(nxt.yaw - gate.yaw)
    return np.concatenate([to_gate, vel, st.Theta, st.Omega, next_rel, [next_yaw]])


def start_state(track: Track, back_off: float = 1.0) -> DroneState:
    """Standardized start: level and at rest, back_off meters behind gate 0
    along the opposite of its heading."""
    g0 = track.gates[0]
    heading = np.array([math.cos(g0.yaw), math.sin(g0.yaw), 0.0])
    return DroneState.at_rest(p=g0.center - back_off * heading)


# ---------------------------------------------------------------------------
# Environment


class TaskEnv:
    """Single-drone waypoint navigation episode.

    Actions are commanded normalized propeller speeds in [0, 1]^6.  Episodes
    truncate at the step limit and terminate early on gimbal lock, a
    non-finite state, or leaving the arena.  step() returns
    (observation, reward, done, info); info['terminated'] distinguishes a
    true failure from the time limit.
    """

    def __init__(
        self,
        track: Track,
        phenotype: Phenotype,
        phys: PhysicalConstants | None = None,
        episode_seconds: float = DEFAULT_EPISODE_SECONDS,
        position_limit: float = POSITION_LIMIT,
    ):
        self.track = track
        self.phenotype = phenotype
        self.phys = phys or PhysicalConstants()
        self.max_steps = int(round(episode_seconds / self.phys.dt))
        self.position_limit = position_limit
        self.reset()

    def reset(self) -> np.ndarray:
        self.state = start_state(self.track)
        self.progress = GateProgress(self.track)
        self.t = 0.0
        self.steps = 0
        self.s_prev = self.progress.distance_to_target(self.state.p)
        self.done = False
        return build_observation(self.track, self.progress.target_idx, self.state)

    def step(self, action: np.ndarray):
        if self.done:
            raise RuntimeError("episode is done; call reset()")
        try:
            new_state = sim_step(self.state, action, self.phenotype, self.phys)
        except (GimbalLock, NonFiniteState):
            self.done = True
            obs = build_observation(self.track, self.progress.target_idx, self.state)
            info = {"terminated": True, "waypoints": self.progress.waypoints_passed}
            return obs, 0.0, True, info

        self.state = new_state
        self.t += self.phys.dt
        self.steps += 1

        # Reward against the gate that was the target when the step began.
        s_t = self.progress.distance_to_target(new_state.p)
        reward = (self.s_prev - s_t) - ROTATION_PENALTY * float(np.linalg.norm(new_state.Omega))
        if self.progress.update(new_state.p, self.t):
            self.s_prev = self.progress.distance_to_target(new_state.p)
        else:
            self.s_prev = s_t

        terminated = (
            abs(new_state.Theta[1]) >= math.pi / 2.0 - PITCH_GUARD
            or float(np.linalg.norm(new_state.p)) > self.position_limit
        )
        truncated = self.steps >= self.max_steps
        self.done = terminated or truncated
        obs = build_observation(self.track, self.progress.target_idx, new_state)
        info = {"terminated": terminated, "waypoints": self.progress.waypoints_passed}
        return obs, reward, self.done, info


@dataclass(frozen=True)
class FitnessReport:
    """Outcome of one deterministic evaluation rollout."""

    waypoints: int
    avg_lap_time: float | None
    episode_return: float
    n_steps: int

    def to_dict(self) -> dict:
        return {
            "waypoints": self.waypoints,
            "avg_lap_time": self.avg_lap_time,
            "episode_return": self.episode_return,
            "n_steps": self.n_steps,
        }


def evaluate_fitness(
    ph: Phenotype,
    policy,
    track: Track,
    phys: PhysicalConstants | None = None,
    episode_seconds: float = DEFAULT_EPISODE_SECONDS,
) -> FitnessReport:
    """Deterministic rollout from the standardized start state.

    ``policy`` needs an act(observation, deterministic=True) -> (action,
    log_prob) method.  The episode runs the full evaluation window unless the
    drone crashes; a crash keeps the waypoints collected so far.
    """
    env = TaskEnv(track, ph, phys, episode_seconds=episode_seconds)
    obs = env.reset()
    total = 0.0
    while not env.done:
        action, _ = policy.act(obs, deterministic=True)
        obs, reward, _, _ = env.step(action)
        total += reward
    laps, avg_lap = lap_stats(env.progress.pass_times, len(track.gates))
    return FitnessReport(
        waypoints=env.progress.waypoints_passed,
        avg_lap_time=avg_lap,
        episode_return=total,
        n_steps=env.steps,
    )
