import math

import numpy as np
import pytest

from dronevolve.hover import (
    check_static_hover,
    hover_residuals,
    icosphere_directions,
    verify_hover_solution,
)
from dronevolve.morphology import Genotype, baseline_hexacopter, decode

from conftest import random_genotypes


def horizontal_axes_genotype():
    """All six thrust axes in the body xy-plane, pointing radially outward."""
    arr = baseline_hexacopter(l=0.25).as_array()
    arr[:, 3] = arr[:, 1]          # psi_m = psi_a
    arr[:, 4] = math.pi / 2.0      # theta_m: tilt fully to horizontal
    return Genotype.from_array(arr)


class TestIcosphere:
    def test_vertex_counts(self):
        assert icosphere_directions(0).shape == (12, 3)
        assert icosphere_directions(1).shape == (42, 3)
        assert icosphere_directions(2).shape == (162, 3)

    def test_unit_norm(self):
        d = icosphere_directions(2)
        np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0, atol=1e-12)


class TestBaseline:
    def test_feasible_with_symmetric_solution(self, baseline_ph, phys):
        res = check_static_hover(baseline_ph, g=phys.g)
        assert res.feasible
        analytic = phys.total_mass * phys.g / (6.0 * phys.k_f)
        np.testing.assert_allclose(res.u_hat, analytic, atol=1e-6)
        assert res.u_hat.max() - res.u_hat.min() < 1e-6
        assert res.cost == pytest.approx(float(res.u_hat @ res.u_hat), abs=0.0)

    def test_reported_solution_verifies_by_substitution(self, baseline_ph, phys):
        res = check_static_hover(baseline_ph, g=phys.g)
        assert verify_hover_solution(baseline_ph, res.u_hat, phys.g, (0.0, 1.0), 1e-6)


class TestInfeasible:
    def test_all_horizontal_axes(self, phys):
        ph = decode(horizontal_axes_genotype(), phys)
        res = check_static_hover(ph, g=phys.g)
        assert not res.feasible

    def test_bound_violation(self, baseline_ph, phys):
        # only motor 0 can spin (others pinned at zero); it alone would need
        # u = m*g/k_f = 3 > 1
        hi = np.zeros(6)
        hi[0] = 1.0
        res = check_static_hover(baseline_ph, bounds=(np.zeros(6), hi), g=phys.g)
        assert not res.feasible

    def test_invalid_bounds_rejected(self, baseline_ph):
        with pytest.raises(ValueError):
            check_static_hover(baseline_ph, bounds=(-0.5, 1.0))
        with pytest.raises(ValueError):
            check_static_hover(baseline_ph, bounds=(1.0, 0.5))


class TestProperties:
    def test_feasible_solutions_always_verify(self, phys):
        for g in random_genotypes(15, seed=21):
            ph = decode(g, phys)
            res = check_static_hover(ph, g=phys.g)
            if res.feasible:
                assert verify_hover_solution(ph, res.u_hat, phys.g, (0.0, 1.0), 1e-6)
                force_res, moment_res = hover_residuals(ph, res.u_hat, phys.g)
                assert force_res <= 1e-6 and moment_res <= 1e-6

    def test_homogeneity_by_substitution(self, baseline_ph, phys):
        # if u is feasible for (g, bounds) then c*u is feasible for (c*g, c*bounds)
        res = check_static_hover(baseline_ph, g=phys.g)
        assert res.feasible
        for c in (0.5, 1.7):
            assert verify_hover_solution(
                baseline_ph, c * res.u_hat, c * phys.g, (0.0, c), tol=c * 1e-6
            )

    def test_cost_is_exact_dot_product(self, phys):
        for g in random_genotypes(5, seed=33):
            ph = decode(g, phys)
            res = check_static_hover(ph, g=phys.g)
            assert res.cost == float(res.u_hat @ res.u_hat)
