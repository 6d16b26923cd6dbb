"""Analysis mathematics: learning-curve descriptors, genotype distances,
novelty/diversity, and body-symmetry scores."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy.optimize import linear_sum_assignment

from .morphology import (
    Genotype,
    IDX_DIR,
    IDX_L,
    IDX_PSI_A,
    IDX_PSI_M,
    IDX_THETA_A,
    IDX_THETA_M,
    L_MAX,
    L_MIN,
    TWO_PI,
)

DEFAULT_SMOOTHING_WINDOW = 1000
DEFAULT_CONVERGENCE_TOL = 0.10


# ---------------------------------------------------------------------------
# Learning-dynamics descriptors


@dataclass(frozen=True)
class LearningDescriptors:
    """Summary of one learning curve.

    ``t_b`` is the index of the largest one-step improvement of the smoothed
    rewards (end of the quick-wins phase); ``t_c`` the earliest index after
    which the curve stays within a relative band of its final value.  Speed
    is r_max / (t_c - t_b) and is NaN with ``degenerate`` set when the
    mid-phase has no positive duration.  Volatility is the mean absolute
    one-step change.
    """

    t_b: int
    t_c: int
    speed: float
    r_max: float
    volatility: float
    degenerate: bool

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LearningDescriptors":
        return cls(
            t_b=int(d["t_b"]),
            t_c=int(d["t_c"]),
            speed=float(d["speed"]),
            r_max=float(d["r_max"]),
            volatility=float(d["volatility"]),
            degenerate=bool(d["degenerate"]),
        )


def smooth_median(rewards: np.ndarray, window: int = DEFAULT_SMOOTHING_WINDOW) -> np.ndarray:
    """Centered sliding-window median; the window truncates at the edges so
    the output has the same length and index meaning as the input."""
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or r.size == 0:
        raise ValueError("rewards must be a nonempty 1-D sequence")
    if window < 1:
        raise ValueError("window must be >= 1")
    n = r.size
    left = (window - 1) // 2
    right = window // 2
    out = np.empty(n)
    for t in range(n):
        out[t] = np.median(r[max(0, t - left):min(n, t + right + 1)])
    return out


def burn_in(smoothed: np.ndarray) -> int:
    """Index of the maximum one-step increase (first index on ties)."""
    sm = np.asarray(smoothed, dtype=float)
    if sm.size < 2:
        raise ValueError("need at least 2 points")
    return int(np.argmax(np.diff(sm)))


def convergence(smoothed: np.ndarray, rel_tol: float = DEFAULT_CONVERGENCE_TOL,
                abs_fallback: float = 0.1) -> int:
    """Earliest index after which the curve stays within rel_tol of its final
    value (an absolute band of ``abs_fallback`` when the final value is 0)."""
    sm = np.asarray(smoothed, dtype=float)
    final = sm[-1]
    band = rel_tol * abs(final) if final != 0.0 else abs_fallback
    outside = np.abs(sm - final) > band
    if not outside.any():
        return 0
    return int(np.max(np.nonzero(outside)[0])) + 1


def descriptors(
    rewards: np.ndarray,
    window: int = DEFAULT_SMOOTHING_WINDOW,
    rel_tol: float = DEFAULT_CONVERGENCE_TOL,
) -> LearningDescriptors:
    """All learning-curve descriptors of an episodic reward sequence."""
    sm = smooth_median(rewards, window)
    if sm.size < 2:
        raise ValueError("need at least 2 episodes")
    t_b = burn_in(sm)
    t_c = convergence(sm, rel_tol)
    r_max = float(np.max(sm))
    volatility = float(np.mean(np.abs(np.diff(sm))))
    degenerate = t_c <= t_b
    speed = float("nan") if degenerate else r_max / (t_c - t_b)
    return LearningDescriptors(
        t_b=t_b, t_c=t_c, speed=speed, r_max=r_max, volatility=volatility, degenerate=degenerate
    )


# ---------------------------------------------------------------------------
# Assignment distance, novelty, diversity


def hungarian(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost assignment of an n x n matrix.

    Returns the permutation pi with row i matched to column pi[i]; the total
    cost sum(cost[i, pi[i]]) is minimal.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError("cost must be a square matrix")
    if not np.isfinite(cost).all():
        raise ValueError("cost entries must be finite")
    _, cols = linear_sum_assignment(cost)
    return cols


def normalized_arm_parameters(g: Genotype) -> np.ndarray:
    """Arm parameters min-max scaled to [0, 1] by their domains; the spin bit
    is used as-is.  Angles scale linearly, without circular wraparound."""
    arr = g.as_array()
    out = np.empty_like(arr)
    out[:, IDX_L] = (arr[:, IDX_L] - L_MIN) / (L_MAX - L_MIN)
    out[:, IDX_PSI_A] = arr[:, IDX_PSI_A] / TWO_PI
    out[:, IDX_THETA_A] = (arr[:, IDX_THETA_A] + math.pi) / TWO_PI
    out[:, IDX_PSI_M] = arr[:, IDX_PSI_M] / TWO_PI
    out[:, IDX_THETA_M] = (arr[:, IDX_THETA_M] + math.pi) / TWO_PI
    out[:, IDX_DIR] = arr[:, IDX_DIR]
    return out


def edit_distance(a: Genotype, b: Genotype) -> float:
    """Minimum-cost bijective matching of normalized arm vectors.

    Symmetric, zero on identical bodies, and invariant to the order arms are
    listed in.
    """
    pa = normalized_arm_parameters(a)
    pb = normalized_arm_parameters(b)
    cost = np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=2)
    perm = hungarian(cost)
    return float(cost[np.arange(cost.shape[0]), perm].sum())


def pairwise_edit_distances(population: list[Genotype]) -> np.ndarray:
    n = len(population)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = edit_distance(population[i], population[j])
    return d


def novelty(a: Genotype, population: list[Genotype]) -> float:
    """Normalized mean edit distance of ``a`` to every member of the
    population (its own zero self-distance included when present)."""
    if len(population) < 2:
        raise ValueError("population must have at least 2 members")
    d = pairwise_edit_distances(population)
    d_max = float(d.max())
    if d_max == 0.0:
        return 0.0
    dists = np.array([edit_distance(a, e) for e in population])
    return float(np.mean(dists / d_max))


def diversity(population: list[Genotype]) -> float:
    """Mean novelty of the population; 0 when all members coincide."""
    if len(population) < 2:
        raise ValueError("population must have at least 2 members")
    d = pairwise_edit_distances(population)
    d_max = float(d.max())
    if d_max == 0.0:
        return 0.0
    return float(np.mean(d / d_max))


# ---------------------------------------------------------------------------
# Body symmetry


def central_symmetry(points: np.ndarray) -> float:
    """Mean distance from each point reflected through the origin to its
    nearest neighbor in the original set; 0 means perfect point symmetry."""
    p = np.asarray(points, dtype=float)
    reflected = -p
    d = np.linalg.norm(reflected[:, None, :] - p[None, :, :], axis=2)
    return float(np.mean(np.min(d, axis=1)))


def bilateral_symmetry(points: np.ndarray) -> float:
    """Same as central_symmetry but reflecting across the yz-plane
    (x -> -x); 0 means perfect left/right symmetry."""
    p = np.asarray(points, dtype=float)
    reflected = p * np.array([-1.0, 1.0, 1.0])
    d = np.linalg.norm(reflected[:, None, :] - p[None, :, :], axis=2)
    return float(np.mean(np.min(d, axis=1)))
