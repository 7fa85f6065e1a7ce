import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csflock.core import ConfigError, ParticleEnsemble, ScenarioConfig, Torus, derive_rng
from csflock.kernels import InteractionKernel
from csflock.particles import (ParticleTrajectory, cs_rhs, flocking_bound, flocking_rate_fit,
                               max_pairwise_distance, sample_ensemble, simulate_particles, step_cs,
                               step_cs_stochastic, substeps, velocity_spread)

T1 = Torus(1, 40.0)
CS = InteractionKernel(50, 0.5)


def random_ensemble(n=20, seed=0, torus=T1):
    rng = np.random.default_rng(seed)
    return ParticleEnsemble(torus, rng.uniform(0, torus.L, (n, torus.d)), rng.normal(size=(n, torus.d)))


class TestRhs:
    def test_single_particle(self):
        np.testing.assert_array_equal(cs_rhs(ParticleEnsemble(T1, [3.0], [2.0]), CS), 0.0)

    def test_aligned_state_is_steady(self):
        ens = ParticleEnsemble(T1, np.linspace(0, 30, 10), np.full(10, 1.2))
        np.testing.assert_allclose(cs_rhs(ens, CS), 0.0, atol=1e-13)

    def test_two_particles_constant_kernel(self):
        ens = ParticleEnsemble(T1, [1.0, 9.0], [0.5, 2.5])
        acc = cs_rhs(ens, InteractionKernel.constant(4.0))
        np.testing.assert_allclose(acc[:, 0], [4.0 / 2 * 2.0, -4.0 / 2 * 2.0])

    def test_constant_kernel_fast_path_matches_pair_sum(self):
        ens = random_ensemble(15)
        k = InteractionKernel.constant(3.0)
        v = ens.velocities
        ref = 3.0 * (v.sum(axis=0) - len(v) * v) / len(v)
        np.testing.assert_allclose(cs_rhs(ens, k), ref, rtol=1e-13, atol=1e-14)

    @given(st.integers(0, 1000))
    @settings(max_examples=20, deadline=None)
    def test_momentum_neutral(self, seed):
        acc = cs_rhs(random_ensemble(25, seed), CS)
        assert abs(acc.sum()) < 1e-10

    def test_matches_explicit_double_loop(self):
        ens = random_ensemble(8, seed=4, torus=Torus(2, 40.0))
        x, v = ens.positions, ens.velocities
        ref = np.zeros_like(v)
        for i in range(8):
            for j in range(8):
                dx = np.abs(x[i] - x[j])
                dx = np.minimum(dx, 40.0 - dx)
                ref[i] += 50 / np.sqrt(1 + dx @ dx) * (v[j] - v[i])
        np.testing.assert_allclose(cs_rhs(ens, CS), ref / 8, rtol=1e-12)


class TestStep:
    def test_free_streaming(self):
        out = step_cs(ParticleEnsemble(T1, [39.5], [2.0]), CS, 0.5)
        np.testing.assert_allclose(out.positions[0, 0], 0.5)
        np.testing.assert_allclose(out.velocities[0, 0], 2.0)

    def test_two_particle_exponential(self):
        c = 6.0
        ens = ParticleEnsemble(T1, [0.0, 5.0], [1.0, -1.0])
        traj = simulate_particles(ens, InteractionKernel.constant(c), 1e-3, [0.0, 1.0])
        gap = np.abs(np.diff(traj.snapshots[-1].velocities[:, 0]))[0]
        np.testing.assert_allclose(gap, 2.0 * np.exp(-c), rtol=1e-6)

    def test_mirror_symmetry(self):
        rng = np.random.default_rng(1)
        y = rng.uniform(-10, 10, 6)
        v = rng.normal(size=6)
        ens = ParticleEnsemble(T1, np.r_[y, -y] + 20, np.r_[v, -v])
        out = simulate_particles(ens, CS, 1e-2, [0.0, 0.5]).snapshots[-1]
        xs = out.positions[:, 0] - 20
        np.testing.assert_allclose(xs[:6], -xs[6:], atol=1e-12)
        np.testing.assert_allclose(out.velocities[:6], -out.velocities[6:], atol=1e-12)

    def test_mean_velocity_conserved(self):
        ens = random_ensemble(40, seed=2)
        out = simulate_particles(ens, CS, 1e-2, [0.0, 1.0]).snapshots[-1]
        np.testing.assert_allclose(out.mean_velocity(), ens.mean_velocity(), atol=1e-12)

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            step_cs(random_ensemble(), CS, 0.0)

    def test_substeps(self):
        assert substeps(1.0, 0.3) == (4, 0.25)
        n, h = substeps(0.1, 0.01)
        assert n == 10 and h == pytest.approx(0.01)


class TestStochastic:
    def test_sigma_zero_is_euler(self):
        ens = random_ensemble(10)
        out = step_cs_stochastic(ens, CS, 0.0, 0.01, 0.3)
        np.testing.assert_allclose(out.velocities, ens.velocities + 0.01 * cs_rhs(ens, CS))
        np.testing.assert_allclose(out.positions, (ens.positions + 0.01 * ens.velocities) % 40.0)

    @given(st.floats(-0.5, 0.5))
    @settings(max_examples=20, deadline=None)
    def test_mean_preserved(self, dB):
        ens = random_ensemble(12, seed=7)
        out = step_cs_stochastic(ens, CS, 0.8, 0.01, dB)
        np.testing.assert_allclose(out.mean_velocity(), ens.mean_velocity(), atol=1e-13)

    def test_flocked_state_ignores_noise(self):
        ens = ParticleEnsemble(T1, np.linspace(0, 30, 5), np.full(5, 0.7))
        rng = np.random.default_rng(0)
        a = simulate_particles(ens, CS, 0.01, [0.0, 0.3], sigma=1.0, rng=rng).snapshots[-1]
        b = simulate_particles(ens, CS, 0.01, [0.0, 0.3], sigma=1.0,
                               increments=np.zeros(30)).snapshots[-1]
        np.testing.assert_allclose(a.positions, b.positions, atol=1e-12)
        np.testing.assert_allclose(a.velocities, 0.7, atol=1e-12)

    def test_requires_noise_source(self):
        with pytest.raises(ValueError):
            simulate_particles(random_ensemble(), CS, 0.01, [0.0, 0.1], sigma=0.5)

    def test_one_dimensional_only(self):
        with pytest.raises(ValueError):
            step_cs_stochastic(random_ensemble(torus=Torus(2, 40.0)), CS, 0.5, 0.01, 0.1)


class TestDiagnostics:
    def test_spread_examples(self):
        assert velocity_spread(ParticleEnsemble(T1, [0.0, 1.0], [3.0, 3.0])) == 0.0
        np.testing.assert_allclose(velocity_spread(ParticleEnsemble(T1, [0.0, 1.0], [0.0, 2.0])),
                                   np.sqrt(2))

    @given(st.floats(-100, 100))
    def test_spread_shift_invariant(self, c):
        ens = random_ensemble(10, seed=3)
        shifted = ens.replace(velocities=ens.velocities + c)
        np.testing.assert_allclose(velocity_spread(shifted), velocity_spread(ens), rtol=1e-9,
                                   atol=1e-9)

    def test_max_pairwise_distance(self):
        ens = ParticleEnsemble(T1, [1.0, 39.0, 10.0], [0.0, 0.0, 0.0])
        np.testing.assert_allclose(max_pairwise_distance(ens), 11.0)

    def test_rate_fit_two_particles(self):
        c = 3.0
        ens = ParticleEnsemble(T1, [0.0, 5.0], [1.0, -1.0])
        traj = simulate_particles(ens, InteractionKernel.constant(c), 1e-3, np.linspace(0, 2, 21))
        fit = flocking_rate_fit(traj)
        assert not fit.degenerate
        np.testing.assert_allclose(fit.exponent, -c, rtol=0.02)

    def test_rate_fit_degenerate(self):
        ens = ParticleEnsemble(T1, [0.0, 5.0], [1.0, 1.0])
        fit = flocking_rate_fit(simulate_particles(ens, CS, 1e-2, np.linspace(0, 1, 11)))
        assert fit.degenerate and np.isnan(fit.exponent)

    def test_rate_fit_respects_bound(self):
        cfg = ScenarioConfig(N=30, x_low=-5, x_high=5, v_low=-1, v_high=1)
        ens = sample_ensemble(cfg, derive_rng(0, 1))
        traj = simulate_particles(ens, CS, 1e-3, np.linspace(0, 0.4, 21))
        bound = flocking_bound(traj, CS)
        fit = flocking_rate_fit(traj)
        assert fit.exponent <= -bound["a_min"]
        np.testing.assert_allclose(bound["a_min"], 50 / np.sqrt(1 + bound["d_max"] ** 2), rtol=1e-12)


class TestSampling:
    def test_deterministic(self):
        cfg = ScenarioConfig(N=50)
        a = sample_ensemble(cfg, derive_rng(5, 0))
        b = sample_ensemble(cfg, derive_rng(5, 0))
        np.testing.assert_array_equal(a.positions, b.positions)
        np.testing.assert_array_equal(a.velocities, b.velocities)

    def test_box_is_shifted(self):
        cfg = ScenarioConfig(N=500, x_low=-2, x_high=2, v_low=1, v_high=2)
        ens = sample_ensemble(cfg, derive_rng(0))
        assert ens.positions.min() >= 18 and ens.positions.max() <= 22
        assert ens.velocities.min() >= 1 and ens.velocities.max() <= 2

    def test_von_mises_concentrates(self):
        wide = sample_ensemble(ScenarioConfig(N=4000, position_law="von_mises", von_mises_k=0.0),
                               derive_rng(0))
        tight = sample_ensemble(ScenarioConfig(N=4000, position_law="von_mises", von_mises_k=5.0),
                                derive_rng(0))
        assert np.std(tight.positions) < 0.5 * np.std(wide.positions)
        np.testing.assert_allclose(np.median(tight.positions), 20.0, atol=0.5)

    def test_unknown_law_rejected(self):
        with pytest.raises(ConfigError):
            ScenarioConfig(position_law="gaussian")


def test_trajectory_csv(tmp_path):
    ens = ParticleEnsemble(T1, [1.0, 2.0], [0.5, -0.5])
    traj = simulate_particles(ens, CS, 0.1, [0.0, 0.2])
    rows = list(csv.reader(traj.write_csv(tmp_path / "p.csv").open()))
    assert rows[0] == ["t", "particle_id", "x_1", "v_1"]
    assert len(rows) == 5


def test_trajectory_validates_times():
    ens = ParticleEnsemble(T1, [1.0], [0.0])
    with pytest.raises(ValueError):
        ParticleTrajectory([0.0, 0.0], [ens, ens])
