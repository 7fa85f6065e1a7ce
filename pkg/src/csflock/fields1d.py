"""Method-of-lines solvers for the one-dimensional reduced model, its weighted
variant and the reduced SPDE with shared multiplicative noise."""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import CFLError, FieldPair, GridSpec, NumericalError
from .kernels import WeightField, weight_at
from .spectral import KernelTransform, SpectralPlan

DEFAULT_CFL = 0.4


def rk4(f: Callable, y: tuple, t: float, dt: float) -> tuple:
    """Classical RK4 for a tuple of arrays ``y' = f(t, y)``."""
    k1 = f(t, y)
    k2 = f(t + dt / 2, tuple(a + dt / 2 * b for a, b in zip(y, k1)))
    k3 = f(t + dt / 2, tuple(a + dt / 2 * b for a, b in zip(y, k2)))
    k4 = f(t + dt, tuple(a + dt * b for a, b in zip(y, k3)))
    return tuple(a + dt / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
                 for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4))


@dataclass(frozen=True)
class Solver1DState:
    """Reduced-model state: fields, clock, conserved mean and cached operators."""

    pair: FieldPair
    t: float
    vbar: float
    kernel: KernelTransform
    plan: SpectralPlan
    weight: WeightField | None = None

    def __post_init__(self):
        if self.pair.grid.d != 1:
            raise ValueError("Solver1DState is one-dimensional")
        object.__setattr__(self, "vbar", float(np.ravel(self.vbar)[0]))

    @property
    def rho(self) -> np.ndarray:
        return self.pair.rho

    @property
    def j(self) -> np.ndarray:
        return self.pair.j[0]

    @property
    def grid(self) -> GridSpec:
        return self.pair.grid

    def with_fields(self, rho, j, t: float) -> "Solver1DState":
        return dataclasses.replace(self, pair=FieldPair(self.grid, rho, j), t=t)


def make_state_1d(pair: FieldPair, kernel_table, vbar=None, weight: WeightField | None = None,
                  dealias: bool = False, t: float = 0.0) -> Solver1DState:
    """Build a state; ``vbar`` defaults to the momentum integral of ``pair``."""
    plan = SpectralPlan(pair.grid, dealias=dealias)
    kt = kernel_table if isinstance(kernel_table, KernelTransform) else plan.transform_kernel(kernel_table)
    vb = pair.momentum()[0] / pair.mass() if vbar is None else vbar
    return Solver1DState(pair, t, vb, kt, plan, weight)


def _alignment(plan: SpectralPlan, kernel: KernelTransform, rho, j, R=None, J=None):
    # rho (a*j) - j (a*rho); R, J are transforms when already available
    R = plan.forward(rho) if R is None else R
    J = plan.forward(j) if J is None else J
    return plan.filter(rho * plan.convolve_hat(kernel, J) - j * plan.convolve_hat(kernel, R))


def _rhs(state: Solver1DState, rho, j, w) -> tuple[np.ndarray, np.ndarray]:
    plan = state.plan
    R, J = plan.forward(rho), plan.forward(j)
    drho = -plan.derivative_hat(J, 0)
    if np.ndim(w) == 0 and w == 1.0:
        kinetic = -state.vbar ** 2 * plan.derivative_hat(R, 0)
    else:
        kinetic = -state.vbar ** 2 * plan.derivative_hat(plan.forward(plan.filter(w * rho)), 0)
    dj = _alignment(plan, state.kernel, rho, j, R, J) + kinetic
    return drho, dj


def rhs_1d(state: Solver1DState) -> tuple[np.ndarray, np.ndarray]:
    """``rho_t = -j_x``, ``j_t = rho (a*j) - j (a*rho) - vbar^2 rho_x``."""
    return _rhs(state, state.rho, state.j, 1.0)


def rhs_1d_weighted(state: Solver1DState) -> tuple[np.ndarray, np.ndarray]:
    """As :func:`rhs_1d` with kinetic term ``-vbar^2 (w(., t) rho)_x``."""
    return _rhs(state, state.rho, state.j, weight_at(state.weight, state.t))


def wave_speed(state: Solver1DState) -> float:
    """Characteristic speed ``|vbar| sqrt(sup w)`` of the linear part."""
    sup = 1.0 if state.weight is None else state.weight.sup()
    return abs(state.vbar) * np.sqrt(sup)


def max_dt_1d(state: Solver1DState, cfl: float = DEFAULT_CFL) -> float:
    return cfl * state.grid.h / (wave_speed(state) + 1.0)


def _check_cfl(dt: float, limit: float) -> None:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if dt > limit * (1 + 1e-12):
        raise CFLError(f"dt = {dt:.6g} exceeds the stability limit {limit:.6g}")


def step_pde_1d(state: Solver1DState, dt: float, cfl: float = DEFAULT_CFL) -> Solver1DState:
    """One RK4 step of the (weighted, if a weight is attached) reduced model.

    Raises :class:`~csflock.core.CFLError` before stepping if
    ``dt > cfl h / (|vbar| sqrt(sup w) + 1)``, and ``ValueError`` for ``vbar = 0``.
    """
    if state.vbar == 0:
        raise ValueError("zero mean velocity is excluded; apply a Galilean shift")
    _check_cfl(dt, max_dt_1d(state, cfl))

    def f(t, y):
        return _rhs(state, y[0], y[1], weight_at(state.weight, t))

    rho, j = rk4(f, (state.rho, state.j), state.t, dt)
    return state.with_fields(rho, j, state.t + dt)


def max_dt_spde(state: Solver1DState, cfl: float = DEFAULT_CFL) -> float:
    """CFL bound additionally capped at ``1 / (10 C_a)``."""
    return min(max_dt_1d(state, cfl), 1.0 / (10.0 * state.kernel.c_a))


def step_spde_1d(state: Solver1DState, sigma: float, dt: float, dB: float,
                 cfl: float = DEFAULT_CFL) -> Solver1DState:
    """Euler-Maruyama step; the noise ``sigma (j - vbar rho) dB`` enters ``j`` only."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if state.vbar == 0:
        raise ValueError("zero mean velocity is excluded; apply a Galilean shift")
    _check_cfl(dt, max_dt_spde(state, cfl))
    drho, dj = _rhs(state, state.rho, state.j, weight_at(state.weight, state.t))
    noise = sigma * (state.j - state.vbar * state.rho) * dB
    return state.with_fields(state.rho + dt * drho, state.j + dt * dj + noise, state.t + dt)


def flocking_gap(state) -> float:
    """``||j - vbar rho||_{L^2}`` (summed over momentum components)."""
    pair = state.pair
    vbar = np.atleast_1d(np.asarray(state.vbar, float))
    diff = pair.j - vbar.reshape((-1,) + (1,) * pair.grid.d) * pair.rho
    return float(np.sqrt(np.sum(diff * diff) * pair.grid.cell_volume))


@dataclass
class FieldTrajectory:
    """Sampled field history: ``rho`` has shape ``(T,) + grid.shape`` and
    ``j`` has shape ``(T, d) + grid.shape``."""

    grid: GridSpec
    times: np.ndarray
    rho: np.ndarray
    j: np.ndarray
    vbar: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        self.rho = np.asarray(self.rho, float)
        self.j = np.asarray(self.j, float)
        self.vbar = np.atleast_1d(np.asarray(self.vbar, float))
        T = len(self.times)
        if self.rho.shape != (T,) + self.grid.shape or self.j.shape != (T, self.grid.d) + self.grid.shape:
            raise ValueError("trajectory arrays do not match grid and sample times")

    def pair(self, k: int) -> FieldPair:
        return FieldPair(self.grid, self.rho[k], self.j[k])

    def masses(self) -> np.ndarray:
        return self.rho.reshape(len(self.times), -1).sum(axis=1) * self.grid.cell_volume

    def momenta(self) -> np.ndarray:
        return self.j.reshape(len(self.times), self.grid.d, -1).sum(axis=2) * self.grid.cell_volume

    def gaps(self) -> np.ndarray:
        v = self.vbar.reshape((1, -1) + (1,) * self.grid.d)
        diff = self.j - v * self.rho[:, None]
        sq = (diff * diff).reshape(len(self.times), -1).sum(axis=1)
        return np.sqrt(sq * self.grid.cell_volume)

    def drift(self) -> dict:
        """Relative conservation drift of mass and momentum against sample 0."""
        m, p = self.masses(), self.momenta()
        scale = np.maximum(np.abs(p[0]), 1e-300)
        return {
            "mass": float(np.max(np.abs(m - m[0])) / abs(m[0])),
            "momentum": float(np.max(np.abs(p - p[0]) / scale)),
        }

    def write_csv(self, path, names: Sequence[str] | None = None) -> Path:
        """Snapshot table: ``t``, node coordinate(s), ``rho`` and momentum columns."""
        path = Path(path)
        d = self.grid.d
        coords = ["x"] if d == 1 else [f"x_{k + 1}" for k in range(d)]
        if names is None:
            names = ["j"] if d == 1 else [f"j_{k + 1}" for k in range(d)]
        nodes = self.grid.nodes().reshape(d, -1)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + coords + ["rho"] + list(names))
            for k, t in enumerate(self.times):
                rho = self.rho[k].ravel()
                js = self.j[k].reshape(d, -1)
                for n in range(rho.size):
                    w.writerow([repr(float(t))] + [repr(float(c)) for c in nodes[:, n]]
                               + [repr(float(rho[n]))] + [repr(float(c)) for c in js[:, n]])
        return path


def integrate_fields(state, step: Callable, sample_times: Sequence[float], dt_max: float,
                     min_rho_flag: bool = True) -> FieldTrajectory:
    """Advance ``state`` with ``step(state, dt)`` through the sample times.

    Each interval is split into equal steps no longer than ``dt_max``.  Sample
    times below the state's clock are rejected.  The returned metadata counts
    negative-density events (``min rho < 0`` at a sample).
    """
    times = np.asarray(sample_times, float)
    if times[0] < state.t - 1e-12:
        raise ValueError("sample times start before the state's clock")
    rhos, js = [], []
    negative = 0
    for target in times:
        gap = target - state.t
        if gap > 1e-12:
            n = max(1, int(np.ceil(gap / dt_max - 1e-9)))
            h = gap / n
            for _ in range(n):
                state = step(state, h)
            state = dataclasses.replace(state, t=float(target))
        if not (np.all(np.isfinite(state.pair.rho)) and np.all(np.isfinite(state.pair.j))):
            raise NumericalError(f"non-finite field values at t = {state.t:.6g}")
        rhos.append(state.pair.rho.copy())
        js.append(state.pair.j.copy())
        if min_rho_flag and state.pair.rho.min() < 0:
            negative += 1
    traj = FieldTrajectory(state.pair.grid, times, np.array(rhos), np.array(js), state.vbar)
    traj.meta["negative_density_samples"] = negative
    traj.meta["final_state"] = state
    return traj


def simulate_pde_1d(state: Solver1DState, sample_times: Sequence[float],
                    cfl: float = DEFAULT_CFL, dt: float | None = None) -> FieldTrajectory:
    """Deterministic run; ``dt`` defaults to the CFL limit."""
    dt_max = max_dt_1d(state, cfl) if dt is None else dt
    return integrate_fields(state, lambda s, h: step_pde_1d(s, h, cfl), sample_times, dt_max)


def simulate_spde_1d(state: Solver1DState, sigma: float, sample_times: Sequence[float],
                     rng: np.random.Generator | None = None, increments: np.ndarray | None = None,
                     cfl: float = DEFAULT_CFL, dt: float | None = None) -> FieldTrajectory:
    """Stochastic run; increments come from ``rng`` or an explicit sequence."""
    if rng is None and increments is None:
        raise ValueError("need an rng or an increment sequence")
    dt_max = max_dt_spde(state, cfl) if dt is None else dt
    counter = [0]

    def step(s, h):
        if increments is not None:
            dB = float(increments[counter[0]])
        else:
            dB = float(rng.normal(0.0, np.sqrt(h)))
        counter[0] += 1
        return step_spde_1d(s, sigma, h, dB, cfl)

    traj = integrate_fields(state, step, sample_times, dt_max)
    traj.meta["increments_used"] = counter[0]
    return traj
