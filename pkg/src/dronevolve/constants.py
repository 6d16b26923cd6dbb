"""Shared physical constants for the hexacopter platform."""

from __future__ import annotations

from dataclasses import dataclass, asdict

GRAVITY = 9.81  # m/s^2


@dataclass(frozen=True)
class PhysicalConstants:
    """Mass, actuator, and rotor-geometry constants.

    The vehicle is modeled as a point-mass hub with six point-mass motors at
    the arm tips.  Thrust is quadratic in the normalized propeller speed: at
    full speed a motor produces ``k_f`` newtons along its axis and ``k_m``
    newton-meters of reactive torque about that axis.  By default ``k_f`` is
    sized so the six motors together lift twice the vehicle weight, and
    ``k_m`` is one percent of ``k_f`` (per meter of unit moment arm).

    ``rotor_sep_xy`` / ``rotor_sep_z`` are minimum center-to-center motor
    separations per axis: the x/y threshold is the propeller diameter and the
    z threshold twice the propeller height (headroom against downwash).
    """

    g: float = GRAVITY
    tau: float = 0.01  # propeller spin-up time constant, s
    dt: float = 0.01   # integrator step, s
    hub_mass: float = 0.5    # kg, at the body origin
    motor_mass: float = 0.1  # kg per motor, at the arm tip
    n_motors: int = 6
    k_f: float | None = None  # N at full speed; filled in __post_init__
    k_m: float | None = None  # N*m at full speed; filled in __post_init__
    rotor_sep_xy: float = 0.20  # m
    rotor_sep_z: float = 0.10   # m
    repair_step: float = 0.01   # m moved per overlapping pair per sweep
    repair_max_iter: int = 1000

    def __post_init__(self):
        if self.g <= 0 or self.tau <= 0 or self.dt <= 0:
            raise ValueError("g, tau and dt must all be positive")
        if self.hub_mass <= 0 or self.motor_mass <= 0:
            raise ValueError("masses must be positive")
        if self.k_f is None:
            object.__setattr__(self, "k_f", 2.0 * self.total_mass * self.g / self.n_motors)
        if self.k_m is None:
            object.__setattr__(self, "k_m", 0.01 * self.k_f)

    @property
    def total_mass(self) -> float:
        return self.hub_mass + self.n_motors * self.motor_mass

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PhysicalConstants":
        return cls(**d)
