import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from csflock.core import CFLError, FieldPair, GridSpec, Torus
from csflock.kernels import InteractionKernel, WeightField
from csflock.fields1d import (FieldTrajectory, flocking_gap, make_state_1d, max_dt_1d, max_dt_spde,
                              rhs_1d, rhs_1d_weighted, simulate_pde_1d, simulate_spde_1d,
                              step_pde_1d, step_spde_1d)
from csflock.spectral import SpectralPlan, spectral_gradient

G = GridSpec(Torus(1, 40.0), 128)
X = G.axis()
K = 2 * np.pi / G.L
TABLE = InteractionKernel(50, 0.5).table(G)


def bump(amp=0.4, shift=0.0):
    return (1 + amp * np.cos(K * (X - shift))) / G.L


def random_pair(seed):
    rng = np.random.default_rng(seed)
    rho = np.full(G.M, 1 / G.L)
    j = np.full(G.M, rng.uniform(0.5, 2) / G.L)
    for m in range(1, 5):
        rho += 0.2 / G.L / m ** 2 * np.cos(m * K * X + rng.uniform(0, 6.3))
        j += rng.normal() / G.L / m ** 2 * np.cos(m * K * X + rng.uniform(0, 6.3))
    return FieldPair(G, rho, j)


class TestRhs:
    def test_homogeneous_steady_state(self):
        rho = np.full(G.M, 1 / G.L)
        st_ = make_state_1d(FieldPair(G, rho, 1.3 * rho), TABLE)
        drho, dj = rhs_1d(st_)
        np.testing.assert_allclose(drho, 0.0, atol=1e-16)
        np.testing.assert_allclose(dj, 0.0, atol=1e-15)

    def test_flocked_data_is_transport(self):
        vbar = 1.3
        rho = bump()
        st_ = make_state_1d(FieldPair(G, rho, vbar * rho), TABLE)
        drho, dj = rhs_1d(st_)
        rho_x = spectral_gradient(SpectralPlan(G), rho)[0]
        np.testing.assert_allclose(drho, -vbar * rho_x, atol=1e-15)
        np.testing.assert_allclose(dj, -vbar ** 2 * rho_x, atol=1e-14)

    @given(st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_integrals_vanish(self, seed):
        drho, dj = rhs_1d(make_state_1d(random_pair(seed), TABLE))
        assert abs(G.integrate(drho)) < 1e-14
        assert abs(G.integrate(dj)) < 1e-12

    def test_unit_weight_matches_unweighted(self):
        pair = random_pair(3)
        w = WeightField(np.ones(G.M), rate=25.0)
        a = rhs_1d(make_state_1d(pair, TABLE))
        b = rhs_1d_weighted(make_state_1d(pair, TABLE, weight=w))
        np.testing.assert_allclose(b[1], a[1], atol=1e-15)

    def test_weighted_kinetic_term(self):
        alpha, vbar = 0.3, 1.1
        rho = np.full(G.M, 1 / G.L)
        w0 = 1 + alpha * np.sin(K * X)
        st_ = make_state_1d(FieldPair(G, rho, vbar * rho), TABLE,
                            weight=WeightField(w0, 1.0, mode="exact-frozen"))
        _, dj = rhs_1d_weighted(st_)
        np.testing.assert_allclose(dj, -vbar ** 2 * rho * alpha * K * np.cos(K * X), atol=1e-15)
        assert abs(G.integrate(dj)) < 1e-15


class TestStep:
    def test_flocked_transport(self):
        vbar, T = 1.3, 1.0
        rho = bump()
        st_ = make_state_1d(FieldPair(G, rho, vbar * rho), TABLE)
        traj = simulate_pde_1d(st_, [0.0, T])
        np.testing.assert_allclose(traj.rho[-1], bump(shift=vbar * T), atol=1e-10)
        np.testing.assert_allclose(traj.j[-1, 0], vbar * bump(shift=vbar * T), atol=1e-10)

    def test_zero_vbar_rejected(self):
        rho = np.full(G.M, 1 / G.L)
        st_ = make_state_1d(FieldPair(G, rho, 0 * rho), TABLE)
        with pytest.raises(ValueError):
            step_pde_1d(st_, 0.01)

    def test_cfl_violation_raises_before_stepping(self):
        st_ = make_state_1d(random_pair(0), TABLE)
        with pytest.raises(CFLError):
            step_pde_1d(st_, 2 * max_dt_1d(st_))

    def test_cfl_rule(self):
        st_ = make_state_1d(random_pair(0), TABLE)
        np.testing.assert_allclose(max_dt_1d(st_), 0.4 * G.h / (abs(st_.vbar) + 1))
        w = WeightField(np.full(G.M, 4.0), 1.0)
        np.testing.assert_allclose(max_dt_1d(make_state_1d(random_pair(0), TABLE, weight=w)),
                                   0.4 * G.h / (2 * abs(st_.vbar) + 1))

    def test_masses_conserved(self):
        pair = random_pair(4)
        st_ = make_state_1d(pair, TABLE)
        out = st_
        for _ in range(20):
            out = step_pde_1d(out, max_dt_1d(st_))
        np.testing.assert_allclose(out.pair.mass(), pair.mass(), rtol=1e-13)
        np.testing.assert_allclose(out.pair.momentum(), pair.momentum(), rtol=1e-12)

    def test_fourth_order_self_convergence(self):
        st_ = make_state_1d(random_pair(8), TABLE)
        T = 0.2

        def run(n):
            s = st_
            for _ in range(n):
                s = step_pde_1d(s, T / n)
            return s.rho

        ref = run(64 * 8)
        e1 = np.max(np.abs(run(8) - ref))
        e2 = np.max(np.abs(run(16) - ref))
        assert 12 < e1 / e2 < 20


class TestSpde:
    def test_sigma_zero_is_euler(self):
        st_ = make_state_1d(random_pair(1), TABLE)
        dt = 0.5 * max_dt_spde(st_)
        out = step_spde_1d(st_, 0.0, dt, 0.7)
        drho, dj = rhs_1d(st_)
        np.testing.assert_allclose(out.rho, st_.rho + dt * drho)
        np.testing.assert_allclose(out.j, st_.j + dt * dj)

    @given(st.floats(-0.3, 0.3))
    @settings(max_examples=20, deadline=None)
    def test_pathwise_conservation(self, dB):
        pair = random_pair(2)
        st_ = make_state_1d(pair, TABLE)
        out = step_spde_1d(st_, 0.5, max_dt_spde(st_), dB)
        np.testing.assert_allclose(out.pair.mass(), pair.mass(), rtol=1e-13)
        np.testing.assert_allclose(out.pair.momentum(), pair.momentum(), rtol=1e-12)

    def test_flocked_state_is_deterministic(self):
        rho = bump()
        st_ = make_state_1d(FieldPair(G, rho, 1.3 * rho), TABLE)
        times = [0.0, 0.3]
        a = simulate_spde_1d(st_, 0.9, times, rng=np.random.default_rng(0))
        b = simulate_spde_1d(st_, 0.9, times, increments=np.zeros(a.meta["increments_used"]))
        np.testing.assert_allclose(a.rho, b.rho, atol=1e-15)
        np.testing.assert_allclose(a.j, b.j, atol=1e-15)

    def test_dt_cap(self):
        st_ = make_state_1d(random_pair(0), TABLE)
        assert max_dt_spde(st_) <= 1 / (10 * TABLE.min())


class TestGap:
    def test_flocked_is_zero(self):
        rho = bump()
        assert flocking_gap(make_state_1d(FieldPair(G, rho, 2.0 * rho), TABLE)) == pytest.approx(0.0, abs=1e-16)

    def test_constant_kernel_decay(self):
        c = 5.0
        st_ = make_state_1d(random_pair(6), np.full(G.M, c))
        traj = simulate_pde_1d(st_, np.linspace(0, 0.5, 6))
        gaps = traj.gaps()
        assert np.all(gaps <= gaps[0] * np.exp(-c * traj.times) * (1 + 1e-3))


def test_trajectory_csv_and_validation(tmp_path):
    st_ = make_state_1d(random_pair(0), TABLE)
    traj = simulate_pde_1d(st_, [0.0, 0.05])
    rows = list(csv.reader(traj.write_csv(tmp_path / "f.csv").open()))
    assert rows[0] == ["t", "x", "rho", "j"]
    assert len(rows) == 1 + 2 * G.M
    with pytest.raises(ValueError):
        FieldTrajectory(G, [0.0], np.zeros((2, G.M)), np.zeros((2, 1, G.M)), 1.0)
    assert traj.drift()["mass"] < 1e-13
