"""Rigid-body multirotor flight dynamics with first-order propeller lag.

State evolves under

    p'     = v
    v'     = g e3 + R(Theta) B_F w^2        (e3 = (0, 0, -1), inertial z up)
    Theta' = Q(Theta) Omega
    Omega' = B_M w^2
    w'     = (w_c - w) / tau

integrated with a single Forward-Euler step of length dt: all derivatives
are evaluated on the current state, then applied simultaneously.  Euler
angles are ZYX yaw-pitch-roll; Theta = (roll, pitch, yaw).  Normalized
propeller speeds w are clamped to [0, 1] after every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .constants import PhysicalConstants
from .morphology import Phenotype

E3 = np.array([0.0, 0.0, -1.0])  # gravity direction; inertial z points up

PITCH_GUARD = 1e-3  # rad short of +/- pi/2 where the Euler rates blow up


class GimbalLock(RuntimeError):
    """Pitch too close to +/- pi/2 for the Euler-rate kinematics."""


class NonFiniteState(RuntimeError):
    """Integration produced NaN or infinity."""


@dataclass
class DroneState:
    """Position/velocity in the inertial frame, attitude as ZYX Euler angles,
    body angular rates, and normalized propeller speeds."""

    p: np.ndarray      # (3,) m
    v: np.ndarray      # (3,) m/s
    Theta: np.ndarray  # (3,) rad: roll, pitch, yaw
    Omega: np.ndarray  # (3,) rad/s, body frame
    omega: np.ndarray  # (6,) in [0, 1]

    @classmethod
    def at_rest(cls, p=(0.0, 0.0, 0.0), yaw: float = 0.0, n_motors: int = 6) -> "DroneState":
        return cls(
            p=np.asarray(p, dtype=float).copy(),
            v=np.zeros(3),
            Theta=np.array([0.0, 0.0, yaw]),
            Omega=np.zeros(3),
            omega=np.zeros(n_motors),
        )

    def copy(self) -> "DroneState":
        return DroneState(
            p=self.p.copy(),
            v=self.v.copy(),
            Theta=self.Theta.copy(),
            Omega=self.Omega.copy(),
            omega=self.omega.copy(),
        )

    def is_finite(self) -> bool:
        return bool(
            np.isfinite(self.p).all()
            and np.isfinite(self.v).all()
            and np.isfinite(self.Theta).all()
            and np.isfinite(self.Omega).all()
            and np.isfinite(self.omega).all()
        )


def rotation_matrix(Theta: np.ndarray) -> np.ndarray:
    """Body-to-inertial rotation R = Rz(yaw) Ry(pitch) Rx(roll)."""
    roll, pitch, yaw = Theta
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def euler_rate_matrix(Theta: np.ndarray) -> np.ndarray:
    """Q(Theta) mapping body rates to ZYX Euler-angle rates.

    Raises GimbalLock when |pitch| is within PITCH_GUARD of pi/2.
    """
    roll, pitch, _ = Theta
    if abs(pitch) >= math.pi / 2.0 - PITCH_GUARD:
        raise GimbalLock(f"pitch {pitch:.6f} rad too close to +/- pi/2")
    cr, sr = math.cos(roll), math.sin(roll)
    cp, tp = math.cos(pitch), math.tan(pitch)
    return np.array(
        [
            [1.0, sr * tp, cr * tp],
            [0.0, cr, -sr],
            [0.0, sr / cp, cr / cp],
        ]
    )


def step(
    st: DroneState,
    omega_c: np.ndarray,
    ph: Phenotype,
    phys: PhysicalConstants,
) -> DroneState:
    """One Forward-Euler step under commanded propeller speeds.

    Deterministic: identical inputs give bit-identical outputs.  Raises
    GimbalLock before integrating from a near-singular attitude and
    NonFiniteState if the result is not finite.
    """
    omega_c = np.clip(np.asarray(omega_c, dtype=float), 0.0, 1.0)
    R = rotation_matrix(st.Theta)
    Q = euler_rate_matrix(st.Theta)

    u = st.omega * st.omega
    accel = phys.g * E3 + R @ (ph.B_F @ u)
    dt = phys.dt
    new = DroneState(
        p=st.p + st.v * dt,
        v=st.v + accel * dt,
        Theta=st.Theta + (Q @ st.Omega) * dt,
        Omega=st.Omega + (ph.B_M @ u) * dt,
        omega=np.clip(st.omega + (dt / phys.tau) * (omega_c - st.omega), 0.0, 1.0),
    )
    if not new.is_finite():
        raise NonFiniteState("integration produced a non-finite state")
    return new


TRAJECTORY_COLUMNS = (
    "t",
    "px", "py", "pz",
    "vx", "vy", "vz",
    "roll", "pitch", "yaw",
    "wx", "wy", "wz",
    "m1", "m2", "m3", "m4", "m5", "m6",
)


def record_trajectory(
    state: DroneState,
    commands: np.ndarray,
    ph: Phenotype,
    phys: PhysicalConstants,
) -> np.ndarray:
    """Run an open-loop command sequence and tabulate one row per step.

    ``commands`` has shape (n_steps, 6).  Row k holds the state after k
    steps; row 0 is the initial state.  Stops early (short table) if the
    attitude hits gimbal lock.
    """
    commands = np.asarray(commands, dtype=float)
    rows = [np.concatenate([[0.0], state.p, state.v, state.Theta, state.Omega, state.omega])]
    t = 0.0
    for cmd in commands:
        try:
            state = step(state, cmd, ph, phys)
        except (GimbalLock, NonFiniteState):
            break
        t += phys.dt
        rows.append(np.concatenate([[t], state.p, state.v, state.Theta, state.Omega, state.omega]))
    return np.array(rows)


def save_trajectory(path, table: np.ndarray) -> None:
    """Write a record_trajectory table as comma-separated text."""
    np.savetxt(path, table, delimiter=",", header=",".join(TRAJECTORY_COLUMNS), comments="")
