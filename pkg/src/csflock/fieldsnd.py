"""Reduced model in d > 1 with cell-activated diffusive regularisation.

Cells are the grid nodes' control volumes.  Each cell carries a unit-mass
tensor hat bump ``e_c`` and a smooth cutoff ``phi`` of its local gradient
norm; the regularisation adds ``sum_c phi_c div(e_c grad f)`` to every
evolved field, discretised in flux form so it integrates to zero.
"""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import CFLError, FieldPair, GridSpec
from .fields1d import DEFAULT_CFL, FieldTrajectory, integrate_fields, rk4
from .spectral import KernelTransform, SpectralPlan


@dataclass(frozen=True)
class RegularizationConfig:
    """Cutoff threshold ``V``, diffusion ceiling ``W`` and hat radius in cells."""

    V: float
    W: float = 1.0
    radius: int = 1

    def __post_init__(self):
        if self.V < 0 or self.W < 0:
            raise ValueError("V and W must be non-negative")
        if int(self.radius) != self.radius or self.radius < 1:
            raise ValueError("hat radius must be a positive integer")


@dataclass(frozen=True)
class SolverNDState:
    pair: FieldPair
    t: float
    vbar: np.ndarray
    kernel: KernelTransform
    plan: SpectralPlan
    reg: RegularizationConfig | None = None

    def __post_init__(self):
        vb = np.atleast_1d(np.asarray(self.vbar, float))
        if vb.shape != (self.pair.grid.d,):
            raise ValueError(f"vbar must have {self.pair.grid.d} components")
        object.__setattr__(self, "vbar", vb)

    @property
    def grid(self) -> GridSpec:
        return self.pair.grid

    @property
    def rho(self) -> np.ndarray:
        return self.pair.rho

    @property
    def j(self) -> np.ndarray:
        return self.pair.j

    def with_fields(self, rho, j, t: float) -> "SolverNDState":
        return dataclasses.replace(self, pair=FieldPair(self.grid, rho, j), t=t)


def make_state_nd(pair: FieldPair, kernel_table, vbar=None, reg: RegularizationConfig | None = None,
                  dealias: bool = False, t: float = 0.0) -> SolverNDState:
    plan = SpectralPlan(pair.grid, dealias=dealias)
    kt = kernel_table if isinstance(kernel_table, KernelTransform) else plan.transform_kernel(kernel_table)
    vb = pair.momentum() / pair.mass() if vbar is None else vbar
    return SolverNDState(pair, t, vb, kt, plan, reg)


def _transport_rhs(state: SolverNDState, rho, j):
    plan = state.plan
    R = plan.forward(rho)
    J = plan.forward(j)
    div_j = sum(plan.derivative_hat(J[m], m) for m in range(plan.d))
    a_rho = plan.convolve_hat(state.kernel, R)
    dj = np.empty_like(j)
    for m in range(plan.d):
        align = rho * plan.convolve_hat(state.kernel, J[m]) - j[m] * a_rho
        dj[m] = plan.filter(align) - state.vbar[m] * div_j
    return -div_j, dj


def rhs_nd(state: SolverNDState) -> tuple[np.ndarray, np.ndarray]:
    """``rho_t = -div j``, ``j_m,t = rho (a*j_m) - j_m (a*rho) - vbar_m div j``.

    The regularisation is not included; see :func:`regularization_term`.
    """
    if state.grid.d < 2:
        raise ValueError("rhs_nd needs d >= 2")
    return _transport_rhs(state, state.rho, state.j)


def _cell_norms(plan: SpectralPlan, vbar: np.ndarray, rho, j) -> np.ndarray:
    grad_rho = plan.gradient_hat(plan.forward(rho))
    sq = float(vbar @ vbar) * np.sum(grad_rho ** 2, axis=0)
    for m in range(plan.d):
        sq = sq + np.sum(plan.gradient_hat(plan.forward(j[m])) ** 2, axis=0)
    return np.sqrt(sq * plan.grid.cell_volume)


def cell_gradient_norm(state: SolverNDState, cell=None):
    """``(|vbar|^2 |grad rho|^2 h^d + sum_m |grad j_m|^2 h^d)^(1/2)`` per cell.

    A cell is a single grid node.  Returns the value at ``cell`` (an index
    tuple) or the whole field when ``cell`` is None.
    """
    norms = _cell_norms(state.plan, state.vbar, state.rho, state.j)
    return norms if cell is None else float(norms[tuple(cell)])


def cutoff_phi(y, V: float, W: float, h: float, d: int):
    """0 below ``V h^d``, ``W`` from ``(V+1) h^d`` on, C^1 smoothstep between."""
    y = np.asarray(y, float)
    hd = h ** d
    u = np.clip((y - V * hd) / hd, 0.0, 1.0)
    out = W * u * u * (3.0 - 2.0 * u)
    return float(out) if out.ndim == 0 else out


def hat_stencil(radius: int, h: float) -> np.ndarray:
    """1D piecewise-linear hat on ``2 radius + 1`` nodes with unit discrete mass."""
    w = radius + 1.0 - np.abs(np.arange(-radius, radius + 1))
    return w / (w.sum() * h)


def envelope(phi: np.ndarray, radius: int, h: float) -> np.ndarray:
    """``E = sum_c phi_c e_c`` evaluated at every node (periodic)."""
    st = hat_stencil(radius, h)
    E = phi
    for ax in range(phi.ndim):
        acc = np.zeros_like(E)
        for off, wgt in zip(range(-radius, radius + 1), st):
            acc += wgt * np.roll(E, off, axis=ax)
        E = acc
    return E


def flux_divergence(E: np.ndarray, f: np.ndarray, h: float) -> np.ndarray:
    """Centred flux form of ``div(E grad f)``; sums to zero over the grid."""
    out = np.zeros_like(f)
    for ax in range(f.ndim):
        E_half = 0.5 * (E + np.roll(E, -1, axis=ax))
        flux = E_half * (np.roll(f, -1, axis=ax) - f) / h
        out += (flux - np.roll(flux, 1, axis=ax)) / h
    return out


def activation(state: SolverNDState, rho=None, j=None) -> np.ndarray:
    """Cutoff value ``phi`` for every cell."""
    reg = state.reg
    if reg is None:
        return np.zeros(state.grid.shape)
    rho = state.rho if rho is None else rho
    j = state.j if j is None else j
    norms = _cell_norms(state.plan, state.vbar, rho, j)
    return cutoff_phi(norms, reg.V, reg.W, state.grid.h, state.grid.d)


def regularization_term(state: SolverNDState, reg: RegularizationConfig | None, f,
                        phi: np.ndarray | None = None) -> np.ndarray:
    """``sum_c phi_c div(e_c grad f)`` with activations from ``state``."""
    f = np.asarray(f, float)
    if reg is None or reg.W == 0:
        return np.zeros_like(f)
    if phi is None:
        phi = activation(dataclasses.replace(state, reg=reg))
    if not np.any(phi):
        return np.zeros_like(f)
    E = envelope(phi, reg.radius, state.grid.h)
    return flux_divergence(E, f, state.grid.h)


def _full_rhs(state: SolverNDState, rho, j):
    drho, dj = _transport_rhs(state, rho, j)
    reg = state.reg
    if reg is not None and reg.W > 0:
        phi = activation(state, rho, j)
        if np.any(phi):
            E = envelope(phi, reg.radius, state.grid.h)
            h = state.grid.h
            drho = drho + flux_divergence(E, rho, h)
            dj = dj + np.stack([flux_divergence(E, jm, h) for jm in j])
    return drho, dj


def max_dt_nd(state: SolverNDState, cfl: float = DEFAULT_CFL) -> float:
    """Advective limit, combined with ``h^2 / (2 d W h^-d)`` when diffusion is on.

    ``W h^-d`` bounds the envelope ``E`` since the hats sum to ``h^-d``.
    """
    g = state.grid
    speed = float(np.linalg.norm(state.vbar))
    dt = cfl * g.h / (speed + 1.0)
    if state.reg is not None and state.reg.W > 0:
        dt = min(dt, g.h ** 2 / (2 * g.d * state.reg.W * g.h ** (-g.d)))
    return dt


def step_pde_nd(state: SolverNDState, reg: RegularizationConfig | None = None, dt: float = None,
                cfl: float = DEFAULT_CFL) -> SolverNDState:
    """One RK4 step of the regularised model; ``reg`` overrides ``state.reg``."""
    if reg is not None:
        state = dataclasses.replace(state, reg=reg)
    if dt is None or not dt > 0:
        raise ValueError("dt must be positive")
    limit = max_dt_nd(state, cfl)
    if dt > limit * (1 + 1e-12):
        raise CFLError(f"dt = {dt:.6g} exceeds the stability limit {limit:.6g}")
    rho, j = rk4(lambda t, y: _full_rhs(state, *y), (state.rho, state.j), state.t, dt)
    return state.with_fields(rho, j, state.t + dt)


def default_regularization(pair: FieldPair, vbar, W: float = 1.0, radius: int = 1) -> RegularizationConfig:
    """``V`` such that ``V h^d`` is twice the largest initial cell norm."""
    plan = SpectralPlan(pair.grid)
    norms = _cell_norms(plan, np.atleast_1d(np.asarray(vbar, float)), pair.rho, pair.j)
    V = 2.0 * float(norms.max()) / pair.grid.cell_volume
    return RegularizationConfig(V=V, W=W, radius=radius)


def simulate_pde_nd(state: SolverNDState, sample_times: Sequence[float], cfl: float = DEFAULT_CFL,
                    dt: float | None = None, track_activation: bool = False) -> FieldTrajectory:
    dt_max = max_dt_nd(state, cfl) if dt is None else dt
    peaks = []

    def step(s, h):
        out = step_pde_nd(s, None, h, cfl)
        if track_activation:
            peaks.append(float(activation(out).max()))
        return out

    traj = integrate_fields(state, step, sample_times, dt_max)
    if track_activation:
        traj.meta["max_activation"] = max(peaks, default=0.0)
    return traj


def write_activation_csv(path, state: SolverNDState) -> Path:
    """Columns ``cell_1..cell_d`` (node indices) and ``phi``."""
    path = Path(path)
    phi = activation(state)
    idx = np.indices(phi.shape).reshape(phi.ndim, -1)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"cell_{k + 1}" for k in range(phi.ndim)] + ["phi"])
        for row in zip(*idx, phi.ravel()):
            w.writerow([int(c) for c in row[:-1]] + [repr(float(row[-1]))])
    return path
