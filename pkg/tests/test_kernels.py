import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csflock.core import GridSpec, ParticleEnsemble, Torus
from csflock.kernels import (InteractionKernel, KernelSplit, WeightField, check_flocking_condition,
                             empirical_density, eval_kernel, exact_weight, smoothed_moment,
                             split_kernel, von_mises_delta, weight_at, write_kernel_csv)

T1 = Torus(1, 40.0)
G1 = GridSpec(T1, 256)


class TestEvalKernel:
    def test_zero_displacement(self):
        assert eval_kernel(InteractionKernel(50, 0.5), 0.0) == 50.0

    def test_unit_distance(self):
        np.testing.assert_allclose(eval_kernel(InteractionKernel(50, 0.5), [1.0]), 50 / np.sqrt(2),
                                   rtol=1e-14)

    def test_unit_distance_2d(self):
        np.testing.assert_allclose(eval_kernel(InteractionKernel(50, 0.5), [0.6, 0.8]), 50 / np.sqrt(2),
                                   rtol=1e-14)

    @given(st.floats(-100, 100))
    def test_constant_kernel(self, x):
        assert eval_kernel(InteractionKernel(7.0, 0.0), x) == 7.0

    @given(st.floats(0, 19.9), st.floats(0.1, 2.0))
    def test_even_and_decreasing(self, x, r):
        k = InteractionKernel(3.0, r)
        assert eval_kernel(k, x) == eval_kernel(k, -x)
        assert eval_kernel(k, x + 0.1) < eval_kernel(k, x)

    def test_chord_metric_needs_torus(self):
        k = InteractionKernel(1.0, 1.0, metric="chord")
        with pytest.raises(ValueError):
            eval_kernel(k, 1.0)
        near = eval_kernel(k, 1e-3, T1)
        np.testing.assert_allclose(near, 1 / (1 + 1e-6), rtol=1e-9)

    def test_rejects_negative_parameters(self):
        with pytest.raises(ValueError):
            InteractionKernel(-1.0, 0.5)
        with pytest.raises(ValueError):
            InteractionKernel(1.0, 0.5, metric="euclid")

    def test_table_uses_minimal_image(self):
        k = InteractionKernel(50, 0.5)
        tab = k.table(G1)
        x = G1.axis()
        dist = np.minimum(x, G1.L - x)
        np.testing.assert_allclose(tab, 50 / np.sqrt(1 + dist ** 2), rtol=1e-14)
        np.testing.assert_allclose(tab[1:], tab[1:][::-1], rtol=1e-14)


class TestSplit:
    def test_constant(self):
        s = split_kernel(InteractionKernel.constant(50.0), G1)
        assert s.c_a == 50.0 and s.theta == 0.0
        np.testing.assert_array_equal(s.g, 0.0)

    def test_two_pi_torus(self):
        g = GridSpec(Torus(1, 2 * np.pi), 256)
        k = InteractionKernel(50, 0.5)
        s = split_kernel(k, g)
        a_far = eval_kernel(k, np.pi)
        np.testing.assert_allclose(s.c_a, a_far, rtol=1e-14)
        np.testing.assert_allclose(s.theta, 50 - a_far, rtol=1e-13)
        np.testing.assert_allclose(s.reconstruct(), k.table(g), rtol=1e-14)
        assert np.abs(s.g).max() == pytest.approx(1.0)

    def test_from_split_recovers_constants(self):
        k = InteractionKernel.from_split(25.0, 5.0, 0.5, T1)
        s = split_kernel(k, G1)
        np.testing.assert_allclose([s.c_a, s.theta], [25.0, 5.0], rtol=1e-12)

    def test_rejects_nonpositive_table(self):
        with pytest.raises(ValueError):
            split_kernel(np.zeros(G1.shape), G1)


class TestFlockingCondition:
    def test_constant_kernel_infinite_margin(self):
        s = KernelSplit(50.0, 0.0, np.zeros(G1.shape))
        rho = np.full(G1.shape, 1 / G1.L)
        res = check_flocking_condition(s, rho, rho, 1.0, G1)
        assert res.holds and res.margin == np.inf

    def test_uniform_two_pi(self):
        g = GridSpec(Torus(1, 2 * np.pi), 128)
        rho = np.full(g.shape, 1 / g.L)
        s = split_kernel(InteractionKernel(50, 0.5), g)
        res = check_flocking_condition(s, rho, rho, 1.0, g)
        np.testing.assert_allclose(res.K, 2 / np.sqrt(2 * np.pi), rtol=1e-12)

    def test_flocked_formula(self):
        x = G1.axis()
        rho = 1e-3 * (1 + 0.3 * np.cos(2 * np.pi * x / G1.L))
        vbar = 1.7
        s = split_kernel(InteractionKernel(50, 0.5), G1)
        res = check_flocking_condition(s, rho, vbar * rho, vbar, G1)
        n2 = np.sum(rho ** 2) * G1.h
        expected = np.sqrt(2 * (vbar ** 2 * n2 + vbar ** 2 * n2) / vbar ** 2)
        np.testing.assert_allclose(res.K, expected, rtol=1e-12)

    def test_zero_vbar_rejected(self):
        s = split_kernel(InteractionKernel(50, 0.5), G1)
        rho = np.full(G1.shape, 1 / G1.L)
        with pytest.raises(ValueError):
            check_flocking_condition(s, rho, rho, 0.0, G1)


class TestVonMises:
    def test_unit_mass(self):
        for eps in (0.3, 1.0, 5.0):
            f = von_mises_delta(eps, G1.axis() - 7.0, G1)
            np.testing.assert_allclose(np.sum(f) * G1.h, 1.0, rtol=1e-12)

    @given(st.floats(0.05, 19.0), st.floats(0.2, 10.0))
    def test_even(self, x, eps):
        np.testing.assert_allclose(von_mises_delta(eps, x, G1), von_mises_delta(eps, -x, G1),
                                   rtol=1e-12)

    def test_wide_limit_is_uniform(self):
        f = von_mises_delta(1e4, G1.axis(), G1)
        np.testing.assert_allclose(f, 1 / G1.L, rtol=1e-6)

    def test_rejects_nonpositive_width(self):
        with pytest.raises(ValueError):
            von_mises_delta(0.0, 0.0, G1)


class TestEmpiricalDensity:
    def test_single_particle(self):
        ens = ParticleEnsemble(T1, [12.5], [0.7])
        pair = empirical_density(ens, 1.0, G1)
        np.testing.assert_allclose(pair.mass(), 1.0, rtol=1e-13)
        np.testing.assert_allclose(pair.rho, von_mises_delta(1.0, G1.axis() - 12.5, G1), rtol=1e-10)
        np.testing.assert_allclose(pair.momentum(), [0.7], rtol=1e-13)

    @given(st.floats(-5, 5))
    @settings(max_examples=20)
    def test_common_velocity(self, c):
        rng = np.random.default_rng(3)
        ens = ParticleEnsemble(T1, rng.uniform(0, 40, 50), np.full(50, c))
        pair = empirical_density(ens, 0.8, G1)
        np.testing.assert_allclose(pair.j[0], c * pair.rho, atol=1e-15)

    def test_antipodal_large_eps_uniform(self):
        ens = ParticleEnsemble(T1, [0.0, 20.0], [0.0, 0.0])
        pair = empirical_density(ens, 20.0, G1)
        assert np.max(np.abs(pair.rho * G1.L - 1)) < 0.01

    def test_two_dimensional_mass(self):
        t2 = Torus(2, 40.0)
        g = GridSpec(t2, 64)
        rng = np.random.default_rng(0)
        ens = ParticleEnsemble(t2, rng.uniform(0, 40, (30, 2)), rng.normal(size=(30, 2)))
        pair = empirical_density(ens, 1.5, g)
        np.testing.assert_allclose(pair.mass(), 1.0, rtol=1e-12)
        np.testing.assert_allclose(pair.momentum(), ens.velocities.mean(axis=0), atol=1e-13)

    def test_smoothed_moment_matches_j(self):
        rng = np.random.default_rng(1)
        ens = ParticleEnsemble(T1, rng.uniform(0, 40, 40), rng.normal(size=40))
        pair = empirical_density(ens, 1.0, G1)
        np.testing.assert_allclose(smoothed_moment(ens, ens.velocities[:, 0], 1.0, G1), pair.j[0],
                                   atol=1e-15)

    def test_torus_mismatch(self):
        ens = ParticleEnsemble(Torus(1, 10.0), [1.0], [0.0])
        with pytest.raises(ValueError):
            empirical_density(ens, 1.0, G1)


class TestWeight:
    def test_aligned_velocities_give_one(self):
        rng = np.random.default_rng(2)
        ens = ParticleEnsemble(T1, rng.uniform(0, 40, 100), np.full(100, 1.3))
        w = exact_weight(ens, 1.0, 1.3, G1)
        np.testing.assert_allclose(w, 1.0, rtol=1e-12)

    def test_plus_minus_velocities(self):
        ens = ParticleEnsemble(T1, [10.0, 10.0], [0.9, -0.9])
        w = exact_weight(ens, 1.0, 0.9, G1)
        covered = empirical_density(ens, 1.0, G1).rho >= 1e-6 / G1.L
        assert covered.sum() > 10
        np.testing.assert_allclose(w[covered], 1.0, rtol=1e-12)

    def test_two_particle_hand_value(self):
        vbar = 1.5
        ens = ParticleEnsemble(T1, [10.0, 10.0], [0.0, 2 * vbar])
        w = exact_weight(ens, 1.0, vbar, G1, w_max=10.0)
        covered = empirical_density(ens, 1.0, G1).rho >= 1e-6 / G1.L
        np.testing.assert_allclose(w[covered], 2.0, rtol=1e-12)

    def test_clamped(self):
        ens = ParticleEnsemble(T1, [10.0, 10.0], [0.0, 200.0])
        w = exact_weight(ens, 1.0, 100.0, G1, w_min=0.5, w_max=1.5)
        assert w.min() >= 0.5 and w.max() <= 1.5

    def test_time_dependence(self):
        w0 = np.linspace(0.5, 3.0, G1.M)
        wf = WeightField(w0, rate=4.0)
        np.testing.assert_allclose(weight_at(wf, 0.0), w0)
        np.testing.assert_allclose(weight_at(wf, 50.0), 1.0, atol=1e-12)
        np.testing.assert_allclose(weight_at(wf, np.log(2) / 4.0), (1 + w0) / 2, rtol=1e-14)

    def test_modes(self):
        w0 = np.full(G1.M, 2.0)
        assert weight_at(None, 1.0) == 1.0
        assert weight_at(WeightField(w0, 1.0, mode="none"), 1.0) == 1.0
        np.testing.assert_array_equal(weight_at(WeightField(w0, 1.0, mode="exact-frozen"), 3.0), w0)
        assert WeightField(w0, 1.0).sup() == 2.0
        with pytest.raises(ValueError):
            WeightField(w0, 1.0, mode="bogus")


def test_write_kernel_csv(tmp_path):
    g = GridSpec(T1, 8)
    path = write_kernel_csv(tmp_path / "k.csv", InteractionKernel(50, 0.5), g)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["x", "a"]
    assert len(rows) == 9
    assert float(rows[1][1]) == 50.0
