import json
import math

import numpy as np
import pytest

from dronevolve.constants import PhysicalConstants
from dronevolve.morphology import (
    Genotype,
    IDX_DIR,
    IDX_L,
    IDX_PSI_A,
    L_MAX,
    L_MIN,
    MutationConfig,
    N_ARMS,
    RepairFailed,
    apply_mutation,
    arm_positions,
    baseline_hexacopter,
    choose_mutation_target,
    decode,
    genotype_from_dict,
    genotype_to_dict,
    load_genotype,
    mutate,
    random_genotype,
    repair,
    save_genotype,
    _overlap_pairs,
)

from conftest import random_genotypes


class TestDecode:
    def test_baseline_symmetry(self, baseline, phys):
        ph = decode(baseline, phys)
        # all thrust axes up: every force column is (0, 0, k_f/m)
        expected = np.array([0.0, 0.0, phys.k_f / phys.total_mass])
        for col in ph.B_F.T:
            np.testing.assert_allclose(col, expected, atol=1e-12)
        # symmetric layout: roll/pitch moment columns cancel in the sum
        total_moment = ph.B_M.sum(axis=1)
        assert abs(total_moment[0]) < 1e-12
        assert abs(total_moment[1]) < 1e-12

    def test_shapes(self, rng, phys):
        ph = decode(random_genotype(rng, phys), phys)
        assert ph.B_F.shape == (3, 6)
        assert ph.B_M.shape == (3, 6)
        assert ph.motor_positions.shape == (6, 3)
        assert ph.motor_axes.shape == (6, 3)

    def test_single_arm_moment(self, phys):
        # hand cross-product oracle: r = (0.3, 0, 0), f = k_f * z
        # r x f = (0, -0.3 * k_f, 0)
        arr = baseline_hexacopter().as_array()
        arr[0, IDX_L] = 0.3
        arr[0, IDX_PSI_A] = 0.0
        g = Genotype.from_array(arr)
        ph = decode(g, phys)
        torque = ph.inertia @ ph.B_M[:, 0] - ph.spin_dirs[0] * phys.k_m * ph.motor_axes[0]
        np.testing.assert_allclose(torque, [0.0, -0.3 * phys.k_f, 0.0], atol=1e-12)

    def test_axis_norms_and_bf_column_norms(self, phys):
        for g in random_genotypes(20, seed=7):
            ph = decode(g, phys)
            np.testing.assert_allclose(np.linalg.norm(ph.motor_axes, axis=1), 1.0, atol=1e-12)
            np.testing.assert_allclose(
                np.linalg.norm(ph.B_F, axis=0), phys.k_f / phys.total_mass, atol=1e-12
            )

    def test_deterministic(self, rng, phys):
        g = random_genotype(rng, phys)
        a, b = decode(g, phys), decode(g, phys)
        assert np.array_equal(a.B_F, b.B_F)
        assert np.array_equal(a.B_M, b.B_M)
        assert np.array_equal(a.inertia, b.inertia)

    def test_inertia_spd(self, phys):
        for g in random_genotypes(20, seed=3):
            ph = decode(g, phys)
            np.testing.assert_allclose(ph.inertia, ph.inertia.T, atol=1e-15)
            assert np.all(np.linalg.eigvalsh(ph.inertia) > 0)


class TestMutation:
    def test_dir_flip_only_changes_one_gene(self, baseline, rng):
        mutated = apply_mutation(baseline, MutationConfig(), rng, target=(2, IDX_DIR))
        before, after = baseline.as_array(), mutated.as_array()
        assert after[2, IDX_DIR] == 1.0 - before[2, IDX_DIR]
        after[2, IDX_DIR] = before[2, IDX_DIR]
        assert np.array_equal(before, after)

    def test_length_clips_at_upper_bound(self, rng):
        arr = baseline_hexacopter(l=0.39).as_array()
        g = Genotype.from_array(arr)

        class BigNoise:
            def normal(self, mean, sigma):
                return 1.0

            def integers(self, *a, **k):  # pragma: no cover - not used with target
                raise AssertionError

        mutated = apply_mutation(g, MutationConfig(), BigNoise(), target=(0, IDX_L))
        assert mutated.arms[0].l == L_MAX

    def test_changes_at_most_one_gene_pre_repair(self, rng):
        cfg = MutationConfig()
        for g in random_genotypes(30, seed=11):
            mutated = apply_mutation(g, cfg, rng)
            diff = g.as_array() != mutated.as_array()
            assert diff.sum() <= 1  # noise can round-trip to the same value

    def test_mutate_output_valid_and_separated(self, rng, phys):
        cfg = MutationConfig()
        for g in random_genotypes(20, seed=5):
            m = mutate(g, cfg, rng, phys)
            m.validate()
            assert _overlap_pairs(arm_positions(m), phys) == []

    def test_choice_distribution_smoke(self):
        rng = np.random.default_rng(0)
        cfg = MutationConfig()
        counts = np.zeros(6)
        n = 20_000
        for _ in range(n):
            _, j = choose_mutation_target(cfg, rng)
            counts[j] += 1
        np.testing.assert_allclose(counts / n, cfg.param_probs, atol=0.02)

    def test_param_probs_must_sum_to_one(self):
        with pytest.raises(ValueError):
            MutationConfig(param_probs=(0.2, 0.2, 0.2, 0.2, 0.2, 0.2))


class TestRepair:
    def test_no_overlap_is_fixed_point(self, rng, phys):
        g = random_genotype(rng, phys)  # already repaired
        assert repair(g, phys) is g

    def test_coincident_motors_are_separated(self, phys):
        arr = baseline_hexacopter(l=0.3).as_array()
        arr[:, IDX_PSI_A] = 0.0  # all six motors at the same point
        arr[:, 2] = 0.0
        g = Genotype.from_array(arr)
        repaired = repair(g, phys)
        pos = arm_positions(repaired)
        assert _overlap_pairs(pos, phys) == []
        for i in range(N_ARMS):
            for j in range(i + 1, N_ARMS):
                d = np.abs(pos[i] - pos[j])
                assert d[0] >= phys.rotor_sep_xy or d[1] >= phys.rotor_sep_xy or d[2] >= phys.rotor_sep_z

    def test_idempotent(self, phys):
        rng = np.random.default_rng(17)
        for _ in range(50):
            g = random_genotype(rng, phys)
            again = repair(g, phys)
            assert np.array_equal(g.as_array(), again.as_array())

    def test_preserves_motor_orientation_genes(self, phys):
        arr = baseline_hexacopter(l=0.2).as_array()  # overlapping hexagon
        g = Genotype.from_array(arr)
        repaired = repair(g, phys)
        np.testing.assert_array_equal(repaired.as_array()[:, 3:], arr[:, 3:])
        assert _overlap_pairs(arm_positions(repaired), phys) == []


class TestRandomGenotype:
    def test_within_bounds(self, phys):
        rng = np.random.default_rng(2)
        for _ in range(200):
            random_genotype(rng, phys).validate()

    def test_uniform_length_mean(self):
        # before repair: l ~ U[0.09, 0.4], mean 0.245
        rng = np.random.default_rng(42)
        ls = rng.uniform(L_MIN, L_MAX, 1000)
        assert abs(ls.mean() - 0.245) < 0.01

    def test_always_separated(self, phys):
        rng = np.random.default_rng(9)
        for _ in range(100):
            g = random_genotype(rng, phys)
            assert _overlap_pairs(arm_positions(g), phys) == []


class TestSerialization:
    def test_round_trip_exact(self, rng, phys, tmp_path):
        g = random_genotype(rng, phys)
        path = tmp_path / "geno.json"
        save_genotype(path, g)
        loaded = load_genotype(path)
        assert np.array_equal(g.as_array(), loaded.as_array())

    def test_schema_tag_required(self, baseline):
        d = genotype_to_dict(baseline)
        d["schema"] = "something-else"
        with pytest.raises(ValueError):
            genotype_from_dict(d)

    def test_dict_contains_named_fields(self, baseline):
        d = genotype_to_dict(baseline)
        assert len(d["arms"]) == 6
        assert set(d["arms"][0]) == {"l", "psi_a", "theta_a", "psi_m", "theta_m", "dir"}
