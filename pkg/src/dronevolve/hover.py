"""Static hover feasibility test.

Certifies that a body admits a control input u (squared normalized propeller
speeds) producing a specific force of gravity magnitude with zero net moment,
inside the actuator box.  The decision problem is

    min u.u  s.t.  ||B_F u||_2 = g,  B_M u = 0,  lo <= u <= hi.

The force-magnitude constraint is nonconvex, so the search decomposes over
candidate force directions: a bounded least-squares subproblem per direction
on an icosphere grid, two local refinement passes around the best direction,
then an SLSQP polish of the full program and an exact min-norm touch-up.
Feasibility is certified by direct substitution of the returned u, never by
solver status alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy.optimize import lsq_linear, minimize

from .constants import GRAVITY
from .morphology import Phenotype

DEFAULT_TOL = 1e-6


@dataclass(frozen=True)
class HoverResult:
    """Outcome of the hover test.  ``cost`` is exactly u_hat.u_hat."""

    feasible: bool
    u_hat: np.ndarray
    cost: float
    force_residual: float   # | ||B_F u|| - g |
    moment_residual: float  # max |B_M u|
    solver_warning: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["u_hat"] = [float(x) for x in self.u_hat]
        return d


def icosphere_directions(subdivisions: int = 2) -> np.ndarray:
    """Unit vectors at the vertices of a subdivided icosahedron.

    0, 1, 2 subdivisions give 12, 42, 162 directions.
    """
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    for _ in range(subdivisions):
        midpoint_cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoint_cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                midpoint_cache[key] = len(verts) - 1
            return midpoint_cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return np.array(verts)


def hover_residuals(ph: Phenotype, u: np.ndarray, g: float = GRAVITY) -> tuple[float, float]:
    """(force residual, moment residual) of a candidate control input."""
    u = np.asarray(u, dtype=float)
    force_res = abs(float(np.linalg.norm(ph.B_F @ u)) - g)
    moment_res = float(np.max(np.abs(ph.B_M @ u)))
    return force_res, moment_res


def verify_hover_solution(
    ph: Phenotype,
    u: np.ndarray,
    g: float = GRAVITY,
    bounds: tuple = (0.0, 1.0),
    tol: float = DEFAULT_TOL,
) -> bool:
    """Substitution check, independent of the solver path."""
    u = np.asarray(u, dtype=float)
    lo, hi = _expand_bounds(bounds, u.size)
    if np.any(u < lo - tol) or np.any(u > hi + tol):
        return False
    force_res, moment_res = hover_residuals(ph, u, g)
    return force_res <= tol and moment_res <= tol


def _expand_bounds(bounds: tuple, n: int) -> tuple[np.ndarray, np.ndarray]:
    lo = np.broadcast_to(np.asarray(bounds[0], dtype=float), (n,)).copy()
    hi = np.broadcast_to(np.asarray(bounds[1], dtype=float), (n,)).copy()
    if np.any(lo < 0) or np.any(hi < lo):
        raise ValueError("control bounds must satisfy 0 <= lo <= hi")
    return lo, hi


def _direction_subproblem(A, d, g, lo, hi, free):
    """Bounded least squares toward force g*d with zero moment.

    Motors with lo == hi are pinned at their bound and eliminated.  Returns
    (residual, u, cost).
    """
    b = np.concatenate([g * np.asarray(d, dtype=float), np.zeros(3)])
    u = lo.copy()
    if free.any():
        b_red = b - A[:, ~free] @ lo[~free]
        res = lsq_linear(A[:, free], b_red, bounds=(lo[free], hi[free]), method="bvls")
        u[free] = res.x
    return float(np.linalg.norm(A @ u - b)), u, float(u @ u)


def _local_directions(d: np.ndarray, radius: float, n: int = 8) -> np.ndarray:
    """Ring of unit vectors at angular distance ``radius`` around d, plus d."""
    d = d / np.linalg.norm(d)
    helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(d, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    angles = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
    ring = (
        math.cos(radius) * d[None, :]
        + math.sin(radius) * (np.cos(angles)[:, None] * e1 + np.sin(angles)[:, None] * e2)
    )
    return np.vstack([d[None, :], ring])


def _slsqp_polish(ph, x0, g, lo, hi, free, maxiter):
    """Minimize u.u over the full nonconvex program, free motors only."""
    B_F_free = ph.B_F[:, free]
    B_M_free = ph.B_M[:, free]
    f_pin = ph.B_F[:, ~free] @ lo[~free]
    m_pin = ph.B_M[:, ~free] @ lo[~free]

    def force_eq(w):
        f = B_F_free @ w + f_pin
        return float(f @ f) - g * g

    def force_jac(w):
        return 2.0 * B_F_free.T @ (B_F_free @ w + f_pin)

    res = minimize(
        lambda w: float(w @ w),
        x0[free],
        jac=lambda w: 2.0 * w,
        method="SLSQP",
        bounds=list(zip(lo[free], hi[free])),
        constraints=[
            {"type": "eq", "fun": force_eq, "jac": force_jac},
            {
                "type": "eq",
                "fun": lambda w: B_M_free @ w + m_pin,
                "jac": lambda w: B_M_free,
            },
        ],
        options={"maxiter": maxiter, "ftol": 1e-14},
    )
    u = lo.copy()
    u[free] = np.clip(res.x, lo[free], hi[free])
    hit_cap = not res.success and "Iteration limit" in str(res.message)
    return u, hit_cap


def _min_norm_polish(ph, u, g, lo, hi, free, tol):
    """Fixed-point refinement: exact min-norm solution for the current force
    direction, accepted only if it stays in bounds and passes substitution."""
    A = np.vstack([ph.B_F, ph.B_M])[:, free]
    offset = np.concatenate([ph.B_F[:, ~free] @ lo[~free], ph.B_M[:, ~free] @ lo[~free]])
    best = None
    for _ in range(3):
        f = ph.B_F @ u
        norm_f = np.linalg.norm(f)
        if norm_f < 1e-12:
            break
        d = f / norm_f
        b = np.concatenate([g * d, np.zeros(3)]) - offset
        w, *_ = np.linalg.lstsq(A, b, rcond=None)
        cand = lo.copy()
        cand[free] = w
        if np.any(cand < lo) or np.any(cand > hi):
            break
        if not verify_hover_solution(ph, cand, g, (lo, hi), tol):
            break
        if best is None or cand @ cand < best @ best:
            best = cand
        u = cand
    return best


def check_static_hover(
    ph: Phenotype,
    bounds: tuple = (0.0, 1.0),
    tol: float = DEFAULT_TOL,
    g: float = GRAVITY,
    refine_passes: int = 2,
    maxiter: int = 200,
) -> HoverResult:
    """Solve the static hover program and certify the result by substitution.

    ``bounds`` may be scalars or per-motor arrays with 0 <= lo <= hi (equal
    bounds pin a motor).  When the polish step exhausts its iteration cap
    without producing a verified point the body is reported infeasible with
    ``solver_warning`` set.
    """
    n = ph.B_F.shape[1]
    lo, hi = _expand_bounds(bounds, n)
    free = (hi - lo) > 1e-15
    A = np.vstack([ph.B_F, ph.B_M])

    # Sweep the direction grid.
    candidates = []
    for d in icosphere_directions(2):
        r, u, c = _direction_subproblem(A, d, g, lo, hi, free)
        candidates.append((r, c, u, d))
    candidates.sort(key=lambda c: (c[0], c[1]))

    # Local grid refinement around the best direction.
    best_res, best_cost, best_u, best_d = candidates[0]
    radius = 0.25
    for _ in range(refine_passes):
        for d in _local_directions(best_d, radius):
            r, u, c = _direction_subproblem(A, d, g, lo, hi, free)
            if (r, c) < (best_res, best_cost):
                best_res, best_cost, best_u, best_d = r, c, u, d
        radius /= 3.0

    # Polish the full nonconvex program from the best seeds.
    seeds = [best_u] + [c[2] for c in candidates[:3]]
    best_sol = None
    warning = False
    if free.any():
        for x0 in seeds:
            u, hit_cap = _slsqp_polish(ph, x0, g, lo, hi, free, maxiter)
            warning = warning or hit_cap
            if verify_hover_solution(ph, u, g, (lo, hi), tol):
                refined = _min_norm_polish(ph, u, g, lo, hi, free, tol)
                if refined is not None and refined @ refined < u @ u:
                    u = refined
                if best_sol is None or u @ u < best_sol @ best_sol:
                    best_sol = u
    elif verify_hover_solution(ph, lo, g, (lo, hi), tol):
        best_sol = lo.copy()

    if best_sol is not None:
        force_res, moment_res = hover_residuals(ph, best_sol, g)
        return HoverResult(
            feasible=True,
            u_hat=best_sol,
            cost=float(best_sol @ best_sol),
            force_residual=force_res,
            moment_residual=moment_res,
            solver_warning=False,
        )

    force_res, moment_res = hover_residuals(ph, best_u, g)
    return HoverResult(
        feasible=False,
        u_hat=best_u,
        cost=float(best_u @ best_u),
        force_residual=force_res,
        moment_residual=moment_res,
        solver_warning=warning,
    )
