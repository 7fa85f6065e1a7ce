"""Mono-kinetic hydrodynamic model used as a comparison baseline.

Evolved variables are ``rho`` and the momentum ``m = rho u``; the velocity is
reconstructed as ``m / max(rho, rho_floor)`` inside the flux only.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import CFLError, FieldPair, GridSpec, VacuumError
from .fields1d import DEFAULT_CFL, FieldTrajectory, rk4
from .spectral import KernelTransform, SpectralPlan


@dataclass(frozen=True)
class HydroState:
    pair: FieldPair
    t: float
    vbar: np.ndarray
    kernel: KernelTransform
    plan: SpectralPlan
    rho_floor: float

    def __post_init__(self):
        object.__setattr__(self, "vbar", np.atleast_1d(np.asarray(self.vbar, float)))

    @property
    def grid(self) -> GridSpec:
        return self.pair.grid

    @property
    def rho(self) -> np.ndarray:
        return self.pair.rho

    @property
    def m(self) -> np.ndarray:
        return self.pair.j

    def velocity(self) -> np.ndarray:
        return self.m / np.maximum(self.rho, self.rho_floor)

    def with_fields(self, rho, m, t: float) -> "HydroState":
        return dataclasses.replace(self, pair=FieldPair(self.grid, rho, m), t=t)


def make_hydro_state(pair: FieldPair, kernel_table, rho_floor: float | None = None,
                     dealias: bool = False, t: float = 0.0) -> HydroState:
    """``pair.j`` is read as the momentum ``rho u``."""
    g = pair.grid
    plan = SpectralPlan(g, dealias=dealias)
    kt = kernel_table if isinstance(kernel_table, KernelTransform) else plan.transform_kernel(kernel_table)
    floor = 1e-8 / g.L ** g.d if rho_floor is None else rho_floor
    return HydroState(pair, t, pair.momentum() / pair.mass(), kt, plan, floor)


def _check_vacuum(rho: np.ndarray, floor: float) -> None:
    bad = rho < floor
    if np.any(bad):
        node = tuple(int(i) for i in np.argwhere(bad)[0])
        raise VacuumError(f"density {rho[node]:.3g} below floor {floor:.3g} at node {node}")


def _rhs(state: HydroState, rho, m):
    _check_vacuum(rho, state.rho_floor)
    plan = state.plan
    d = plan.d
    R = plan.forward(rho)
    a_rho = plan.convolve_hat(state.kernel, R)
    inv = 1.0 / np.maximum(rho, state.rho_floor)
    div_m = sum(plan.derivative_hat(plan.forward(m[k]), k) for k in range(d))
    dm = np.empty_like(m)
    for i in range(d):
        align = rho * plan.convolve_hat(state.kernel, plan.forward(m[i])) - m[i] * a_rho
        flux_div = sum(plan.derivative_hat(plan.forward(plan.filter(m[k] * m[i] * inv)), k)
                       for k in range(d))
        dm[i] = plan.filter(align) - flux_div
    return -div_m, dm


def rhs_hydro(state: HydroState) -> tuple[np.ndarray, np.ndarray]:
    """``rho_t = -div(rho u)``, ``(rho u_i)_t = rho (a*(rho u_i)) - rho u_i (a*rho) - div(rho u u_i)``.

    Raises :class:`~csflock.core.VacuumError` naming the first node where
    ``rho`` falls below the floor.
    """
    return _rhs(state, state.rho, state.m)


def max_dt_hydro(state: HydroState, cfl: float = DEFAULT_CFL) -> float:
    """``cfl h / (max|u| + |vbar| + 1)``; the ``+1`` mirrors the reduced solvers."""
    u = state.velocity()
    speed = float(np.sqrt(np.sum(u * u, axis=0)).max()) + float(np.linalg.norm(state.vbar))
    return cfl * state.grid.h / (speed + 1.0)


def step_hydro(state: HydroState, dt: float, cfl: float = DEFAULT_CFL) -> HydroState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    _check_vacuum(state.rho, state.rho_floor)
    limit = max_dt_hydro(state, cfl)
    if dt > limit * (1 + 1e-12):
        raise CFLError(f"dt = {dt:.6g} exceeds the stability limit {limit:.6g}")
    rho, m = rk4(lambda t, y: _rhs(state, *y), (state.rho, state.m), state.t, dt)
    return state.with_fields(rho, m, state.t + dt)


def simulate_hydro(state: HydroState, sample_times: Sequence[float], cfl: float = DEFAULT_CFL,
                   dt: float | None = None) -> FieldTrajectory:
    """Run through the sample times.

    Without an explicit ``dt`` the step is re-evaluated from the CFL rule at
    the start of every sample interval, then the interval is split evenly.
    """
    times = np.asarray(sample_times, float)
    if times[0] < state.t - 1e-12:
        raise ValueError("sample times start before the state's clock")
    rhos, ms = [], []
    for target in times:
        gap = target - state.t
        if gap > 1e-12:
            limit = max_dt_hydro(state, cfl) if dt is None else dt
            # margin for velocity growth within the interval
            limit *= 0.9 if dt is None else 1.0
            n = max(1, int(np.ceil(gap / limit - 1e-9)))
            for _ in range(n):
                state = step_hydro(state, gap / n, cfl)
            state = dataclasses.replace(state, t=float(target))
        rhos.append(state.rho.copy())
        ms.append(state.m.copy())
    traj = FieldTrajectory(state.grid, times, np.array(rhos), np.array(ms), state.vbar)
    traj.meta["final_state"] = state
    return traj


def model_discrepancy(hydro_traj: FieldTrajectory, reduced_traj: FieldTrajectory) -> np.ndarray:
    """``||(rho_h - rho_r, (rho u)_h - j_r)||_{L^2}`` at the shared sample times."""
    if hydro_traj.grid != reduced_traj.grid:
        raise ValueError("trajectories live on different grids")
    if hydro_traj.times.shape != reduced_traj.times.shape or \
            not np.allclose(hydro_traj.times, reduced_traj.times, rtol=0, atol=1e-12):
        raise ValueError("trajectories have different sample times")
    T = len(hydro_traj.times)
    dr = (hydro_traj.rho - reduced_traj.rho).reshape(T, -1)
    dj = (hydro_traj.j - reduced_traj.j).reshape(T, -1)
    sq = np.sum(dr * dr, axis=1) + np.sum(dj * dj, axis=1)
    return np.sqrt(sq * hydro_traj.grid.cell_volume)


def write_hydro_csv(path, traj: FieldTrajectory):
    d = traj.grid.d
    return traj.write_csv(path, names=[f"ru_{k + 1}" for k in range(d)])
