"""Hexacopter body plan: gene representation, decoding, mutation, repair.

A body is six arm-motor units.  Each unit is described by six genes: arm
length, arm azimuth/elevation, motor tilt azimuth/angle, and a spin-direction
bit.  Decoding produces motor positions and thrust axes in the body frame
plus the mass properties and the specific force/moment effectiveness
matrices used by the flight simulator.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .constants import PhysicalConstants

N_ARMS = 6
N_PARAMS = 6
PARAM_NAMES = ("l", "psi_a", "theta_a", "psi_m", "theta_m", "dir")
IDX_L, IDX_PSI_A, IDX_THETA_A, IDX_PSI_M, IDX_THETA_M, IDX_DIR = range(N_PARAMS)
L_MIN, L_MAX = 0.09, 0.4

GENOTYPE_SCHEMA = "drone-genotype/1"

TWO_PI = 2.0 * math.pi


class RepairFailed(RuntimeError):
    """Rotor keep-out boxes could not be separated within the iteration cap."""


def wrap_angle_2pi(x: float) -> float:
    """Wrap to [0, 2*pi)."""
    return x % TWO_PI


def wrap_angle_pi(x: float) -> float:
    """Wrap to [-pi, pi)."""
    return (x + math.pi) % TWO_PI - math.pi


@dataclass(frozen=True)
class ArmGene:
    """One arm-motor unit.

    ``psi_a`` is the arm azimuth in the body xy-plane and ``theta_a`` the
    elevation out of it.  ``theta_m`` tilts the motor axis away from body +z,
    toward the azimuth ``psi_m``; (psi_m, theta_m) = (anything, 0) leaves the
    motor facing straight up.  ``dir`` is the spin-direction bit.
    """

    l: float        # arm length, m, in [L_MIN, L_MAX]
    psi_a: float    # rad, [0, 2*pi)
    theta_a: float  # rad, [-pi, pi]
    psi_m: float    # rad, [0, 2*pi)
    theta_m: float  # rad, [-pi, pi]
    dir: int        # 0 or 1

    def as_tuple(self) -> tuple:
        return (self.l, self.psi_a, self.theta_a, self.psi_m, self.theta_m, float(self.dir))


@dataclass(frozen=True)
class Genotype:
    """An ordered sequence of exactly six arm-motor units."""

    arms: tuple[ArmGene, ...]

    def __post_init__(self):
        if len(self.arms) != N_ARMS:
            raise ValueError(f"expected {N_ARMS} arms, got {len(self.arms)}")

    def as_array(self) -> np.ndarray:
        """Genes as a (6, 6) float array, columns ordered as PARAM_NAMES."""
        return np.array([a.as_tuple() for a in self.arms], dtype=float)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Genotype":
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (N_ARMS, N_PARAMS):
            raise ValueError(f"expected shape {(N_ARMS, N_PARAMS)}, got {arr.shape}")
        arms = tuple(
            ArmGene(
                l=float(r[IDX_L]),
                psi_a=float(r[IDX_PSI_A]),
                theta_a=float(r[IDX_THETA_A]),
                psi_m=float(r[IDX_PSI_M]),
                theta_m=float(r[IDX_THETA_M]),
                dir=int(round(r[IDX_DIR])),
            )
            for r in arr
        )
        return cls(arms=arms)

    def validate(self) -> None:
        """Raise ValueError if any gene is outside its domain."""
        for i, a in enumerate(self.arms):
            if not (L_MIN <= a.l <= L_MAX):
                raise ValueError(f"arm {i}: l={a.l} outside [{L_MIN}, {L_MAX}]")
            if not (0.0 <= a.psi_a < TWO_PI):
                raise ValueError(f"arm {i}: psi_a={a.psi_a} outside [0, 2pi)")
            if not (-math.pi <= a.theta_a <= math.pi):
                raise ValueError(f"arm {i}: theta_a={a.theta_a} outside [-pi, pi]")
            if not (0.0 <= a.psi_m < TWO_PI):
                raise ValueError(f"arm {i}: psi_m={a.psi_m} outside [0, 2pi)")
            if not (-math.pi <= a.theta_m <= math.pi):
                raise ValueError(f"arm {i}: theta_m={a.theta_m} outside [-pi, pi]")
            if a.dir not in (0, 1):
                raise ValueError(f"arm {i}: dir={a.dir} not in {{0, 1}}")


@dataclass(frozen=True)
class Phenotype:
    """Decoded physical body.

    ``B_F`` maps squared normalized propeller speeds to specific force
    (m/s^2) in the body frame; ``B_M`` maps them to specific moment
    (rad/s^2).  Both are 3x6 with one column per motor.
    """

    motor_positions: np.ndarray  # (6, 3) m, body frame
    motor_axes: np.ndarray       # (6, 3) unit thrust directions, body frame
    spin_dirs: np.ndarray        # (6,) +1 or -1
    total_mass: float            # kg
    inertia: np.ndarray          # (3, 3) kg*m^2
    B_F: np.ndarray              # (3, 6)
    B_M: np.ndarray              # (3, 6)


def arm_positions(g: Genotype) -> np.ndarray:
    """Motor positions (6, 3): l * (cos(theta_a)cos(psi_a), cos(theta_a)sin(psi_a), sin(theta_a))."""
    arr = g.as_array()
    l = arr[:, IDX_L]
    psi = arr[:, IDX_PSI_A]
    theta = arr[:, IDX_THETA_A]
    ct = np.cos(theta)
    return np.stack([l * ct * np.cos(psi), l * ct * np.sin(psi), l * np.sin(theta)], axis=1)


def motor_axes(g: Genotype) -> np.ndarray:
    """Unit thrust axes (6, 3): theta_m tilts from +z toward azimuth psi_m."""
    arr = g.as_array()
    psi = arr[:, IDX_PSI_M]
    theta = arr[:, IDX_THETA_M]
    st = np.sin(theta)
    return np.stack([st * np.cos(psi), st * np.sin(psi), np.cos(theta)], axis=1)


def decode(g: Genotype, phys: PhysicalConstants | None = None) -> Phenotype:
    """Decode a genotype into its physical realization.

    Pure and deterministic: identical genotypes give bit-identical
    phenotypes.  Mass properties come from point masses (hub at the origin,
    one motor at each arm tip).
    """
    phys = phys or PhysicalConstants()
    pos = arm_positions(g)
    axes = motor_axes(g)
    dirs = np.array([a.dir for a in g.arms], dtype=int)
    spin = np.where(dirs == 1, 1.0, -1.0)

    m_total = phys.total_mass
    # Point-mass inertia; the hub sits at the origin and contributes nothing.
    inertia = np.zeros((3, 3))
    for r in pos:
        inertia += phys.motor_mass * (np.dot(r, r) * np.eye(3) - np.outer(r, r))

    thrust = phys.k_f * axes                                   # (6, 3) N at full speed
    torque = np.cross(pos, thrust) + spin[:, None] * phys.k_m * axes
    B_F = thrust.T / m_total
    B_M = np.linalg.solve(inertia, torque.T)
    return Phenotype(
        motor_positions=pos,
        motor_axes=axes,
        spin_dirs=spin,
        total_mass=m_total,
        inertia=inertia,
        B_F=B_F,
        B_M=B_M,
    )


def baseline_hexacopter(l: float = 0.2) -> Genotype:
    """The conventional flat hexacopter: evenly spaced arms, motors facing up,
    alternating spin directions."""
    arms = tuple(
        ArmGene(l=l, psi_a=i * math.pi / 3.0, theta_a=0.0, psi_m=0.0, theta_m=0.0, dir=i % 2)
        for i in range(N_ARMS)
    )
    return Genotype(arms=arms)


# ---------------------------------------------------------------------------
# Mutation


@dataclass(frozen=True)
class MutationConfig:
    """Per-parameter mutation probabilities and Gaussian scales.

    ``param_probs`` is a distribution over (l, psi_a, theta_a, psi_m,
    theta_m, dir); ``sigmas`` covers the five continuous parameters in the
    same order.  The spin bit flips instead of receiving noise.
    """

    param_probs: tuple[float, ...] = (0.19, 0.19, 0.19, 0.19, 0.19, 0.05)
    sigmas: tuple[float, ...] = (0.1, 0.2, 0.2, 0.2, 0.2)

    def __post_init__(self):
        if len(self.param_probs) != N_PARAMS:
            raise ValueError("param_probs must have 6 entries")
        if len(self.sigmas) != N_PARAMS - 1:
            raise ValueError("sigmas must have 5 entries (continuous parameters)")
        if abs(sum(self.param_probs) - 1.0) > 1e-12:
            raise ValueError("param_probs must sum to 1")
        if any(p < 0 for p in self.param_probs) or any(s <= 0 for s in self.sigmas):
            raise ValueError("probabilities must be >= 0 and sigmas > 0")

    def to_dict(self) -> dict:
        return {"param_probs": list(self.param_probs), "sigmas": list(self.sigmas)}

    @classmethod
    def from_dict(cls, d: dict) -> "MutationConfig":
        return cls(
            param_probs=tuple(d.get("param_probs", cls.param_probs)),
            sigmas=tuple(d.get("sigmas", cls.sigmas)),
        )


def choose_mutation_target(cfg: MutationConfig, rng: np.random.Generator) -> tuple[int, int]:
    """Draw (arm index, parameter index): arm uniform, parameter ~ param_probs."""
    arm = int(rng.integers(N_ARMS))
    param = int(rng.choice(N_PARAMS, p=np.asarray(cfg.param_probs)))
    return arm, param


def apply_mutation(
    g: Genotype,
    cfg: MutationConfig,
    rng: np.random.Generator,
    target: tuple[int, int] | None = None,
) -> Genotype:
    """Change exactly one gene slot; no repair.

    Continuous genes get Gaussian noise then are clipped (length) or wrapped
    (angles) back into their domain; the spin bit flips.  ``target``
    overrides the random (arm, parameter) draw, mainly for tests.
    """
    if target is None:
        target = choose_mutation_target(cfg, rng)
    i, j = target
    arr = g.as_array()
    if j == IDX_DIR:
        arr[i, j] = 1.0 - arr[i, j]
    else:
        x = arr[i, j] + rng.normal(0.0, cfg.sigmas[j])
        if j == IDX_L:
            arr[i, j] = min(max(x, L_MIN), L_MAX)
        elif j in (IDX_PSI_A, IDX_PSI_M):
            arr[i, j] = wrap_angle_2pi(x)
        else:
            arr[i, j] = wrap_angle_pi(x)
    return Genotype.from_array(arr)


def mutate(
    g: Genotype,
    cfg: MutationConfig,
    rng: np.random.Generator,
    phys: PhysicalConstants | None = None,
) -> Genotype:
    """One-gene mutation followed by the rotor-separation repair.

    Raises RepairFailed when the mutated body cannot be separated; callers
    resample the mutation in that case.
    """
    phys = phys or PhysicalConstants()
    return repair(apply_mutation(g, cfg, rng), phys)


# ---------------------------------------------------------------------------
# Repair


def _overlap_pairs(pos: np.ndarray, phys: PhysicalConstants) -> list[tuple[int, int]]:
    """Motor index pairs whose keep-out boxes intersect."""
    pairs = []
    n = pos.shape[0]
    for i in range(n):
        for j in range(i + 1, n):
            d = np.abs(pos[i] - pos[j])
            if d[0] < phys.rotor_sep_xy and d[1] < phys.rotor_sep_xy and d[2] < phys.rotor_sep_z:
                pairs.append((i, j))
    return pairs


def _split_direction(i: int, j: int) -> np.ndarray:
    """Deterministic, pair-dependent direction for coincident motors."""
    idx = i * N_ARMS + j
    azimuth = idx * 2.399963229728653  # golden angle, spreads pairs apart
    z = 0.5 * ((idx % 3) - 1)
    d = np.array([math.cos(azimuth), math.sin(azimuth), z])
    return d / np.linalg.norm(d)


def _clamp_radius(p: np.ndarray) -> np.ndarray:
    """Project a position into the representable shell L_MIN <= |p| <= L_MAX."""
    r = float(np.linalg.norm(p))
    if r < 1e-12:
        return np.array([L_MIN, 0.0, 0.0])
    if r > L_MAX:
        return p * (L_MAX / r)
    if r < L_MIN:
        return p * (L_MIN / r)
    return p


def _repel(pos: np.ndarray, phys: PhysicalConstants) -> np.ndarray:
    """Push overlapping motors apart along their center line until clear.

    Positions are kept inside the representable arm-length shell after every
    sweep so the later gene re-encoding does not have to clip (which would
    reintroduce contact).
    """
    pos = pos.copy()
    for _ in range(phys.repair_max_iter):
        pairs = _overlap_pairs(pos, phys)
        if not pairs:
            return pos
        for i, j in pairs:
            d = pos[j] - pos[i]
            norm = np.linalg.norm(d)
            d = _split_direction(i, j) if norm < 1e-12 else d / norm
            pos[i] = _clamp_radius(pos[i] - phys.repair_step * d)
            pos[j] = _clamp_radius(pos[j] + phys.repair_step * d)
    raise RepairFailed(f"overlaps remain after {phys.repair_max_iter} repulsion sweeps")


def _reencode_positions(g: Genotype, pos: np.ndarray) -> Genotype:
    """Write Cartesian motor positions back into (l, psi_a, theta_a) genes.

    Arm length clips to its bounds, which may move a motor slightly; callers
    re-check overlaps afterwards.  Motor-orientation genes are untouched.
    """
    arr = g.as_array()
    for i, p in enumerate(pos):
        norm = float(np.linalg.norm(p))
        if norm < 1e-12:
            arr[i, IDX_L] = L_MIN
            arr[i, IDX_PSI_A] = 0.0
            arr[i, IDX_THETA_A] = 0.0
            continue
        arr[i, IDX_L] = min(max(norm, L_MIN), L_MAX)
        arr[i, IDX_PSI_A] = wrap_angle_2pi(math.atan2(p[1], p[0]))
        arr[i, IDX_THETA_A] = math.asin(min(max(p[2] / norm, -1.0), 1.0))
    return Genotype.from_array(arr)


def repair(g: Genotype, phys: PhysicalConstants | None = None) -> Genotype:
    """Enforce minimum rotor separation.

    Overlap-free genotypes are returned unchanged, making repair idempotent.
    Otherwise motors are iteratively displaced apart and re-encoded into
    genes; because length clipping can reintroduce contact, the
    displace/re-encode cycle runs up to three times before giving up.
    """
    phys = phys or PhysicalConstants()
    for _ in range(3):
        pos = arm_positions(g)
        if not _overlap_pairs(pos, phys):
            return g
        pos = _repel(pos, phys)
        g = _reencode_positions(g, pos)
    if _overlap_pairs(arm_positions(g), phys):
        raise RepairFailed("length clipping kept reintroducing rotor overlaps")
    return g


def random_genotype(
    rng: np.random.Generator, phys: PhysicalConstants | None = None
) -> Genotype:
    """Uniform random genotype over the parameter domains, repaired."""
    phys = phys or PhysicalConstants()
    for _ in range(100):
        arr = np.empty((N_ARMS, N_PARAMS))
        arr[:, IDX_L] = rng.uniform(L_MIN, L_MAX, N_ARMS)
        arr[:, IDX_PSI_A] = rng.uniform(0.0, TWO_PI, N_ARMS)
        arr[:, IDX_THETA_A] = rng.uniform(-math.pi, math.pi, N_ARMS)
        arr[:, IDX_PSI_M] = rng.uniform(0.0, TWO_PI, N_ARMS)
        arr[:, IDX_THETA_M] = rng.uniform(-math.pi, math.pi, N_ARMS)
        arr[:, IDX_DIR] = rng.integers(0, 2, N_ARMS)
        try:
            return repair(Genotype.from_array(arr), phys)
        except RepairFailed:
            continue
    raise RepairFailed("could not produce a separable random genotype in 100 attempts")


# ---------------------------------------------------------------------------
# Serialization


def genotype_to_dict(g: Genotype) -> dict:
    return {
        "schema": GENOTYPE_SCHEMA,
        "arms": [
            {
                "l": a.l,
                "psi_a": a.psi_a,
                "theta_a": a.theta_a,
                "psi_m": a.psi_m,
                "theta_m": a.theta_m,
                "dir": a.dir,
            }
            for a in g.arms
        ],
    }


def genotype_from_dict(d: dict) -> Genotype:
    schema = d.get("schema")
    if schema != GENOTYPE_SCHEMA:
        raise ValueError(f"unsupported genotype schema: {schema!r}")
    arms = tuple(
        ArmGene(
            l=float(a["l"]),
            psi_a=float(a["psi_a"]),
            theta_a=float(a["theta_a"]),
            psi_m=float(a["psi_m"]),
            theta_m=float(a["theta_m"]),
            dir=int(a["dir"]),
        )
        for a in d["arms"]
    )
    g = Genotype(arms=arms)
    g.validate()
    return g


def save_genotype(path: str | Path, g: Genotype) -> None:
    Path(path).write_text(json.dumps(genotype_to_dict(g), indent=2) + "\n")


def load_genotype(path: str | Path) -> Genotype:
    return genotype_from_dict(json.loads(Path(path).read_text()))
