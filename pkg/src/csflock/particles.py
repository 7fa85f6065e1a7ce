"""Deterministic and stochastic Cucker-Smale particle dynamics on the torus."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .core import ConfigError, ParticleEnsemble, ScenarioConfig, Torus, user_to_torus
from .kernels import InteractionKernel

# pairwise blocks are limited to about this many matrix entries
_BLOCK_ENTRIES = 1 << 22


def _pair_rates(kernel: InteractionKernel, xa: np.ndarray, xb: np.ndarray, L: float) -> np.ndarray:
    if kernel.metric != "geodesic":
        r2 = np.zeros((xa.shape[0], xb.shape[0]))
        for k in range(xa.shape[1]):
            dist = kernel.axis_distance(xa[:, k, None] - xb[None, :, k], L)
            r2 += dist * dist
        return kernel.from_dist_sq(r2)
    # in-place minimal-image distances; temporaries dominate the cost at small N
    r2 = None
    for k in range(xa.shape[1]):
        a = np.subtract(xa[:, k, None], xb[None, :, k])
        np.abs(a, out=a)
        if a.max() >= L:
            np.mod(a, L, out=a)
        np.minimum(a, L - a, out=a)
        np.multiply(a, a, out=a)
        if r2 is None:
            r2 = a
        else:
            r2 += a
    if kernel.r == 0:
        r2.fill(kernel.base + kernel.lam)
        return r2
    r2 += 1.0
    if kernel.r == 0.5:
        np.sqrt(r2, out=r2)
        np.divide(kernel.lam, r2, out=r2)
    elif kernel.r == 1:
        np.divide(kernel.lam, r2, out=r2)
    else:
        np.power(r2, -kernel.r, out=r2)
        r2 *= kernel.lam
    if kernel.base:
        r2 += kernel.base
    return r2


def cs_rhs(ensemble: ParticleEnsemble, kernel: InteractionKernel) -> np.ndarray:
    """Alignment acceleration ``N^-1 sum_j a(x_i - x_j) (v_j - v_i)``.

    The rate matrix is symmetric bit for bit (distances depend on ``|x_i - x_j|``
    only), so the accelerations sum to zero up to summation round-off.
    """
    return _accel(ensemble.positions, ensemble.velocities, kernel, ensemble.torus.L)


def _accel(x: np.ndarray, v: np.ndarray, kernel: InteractionKernel, L: float) -> np.ndarray:
    N = x.shape[0]
    if N == 1:
        return np.zeros_like(v)
    if kernel.r == 0:
        # constant rate: no pair matrix needed
        return (kernel.base + kernel.lam) * (v.mean(axis=0) - v)
    out = np.empty_like(v)
    rows = max(1, _BLOCK_ENTRIES // N)
    for s in range(0, N, rows):
        A = _pair_rates(kernel, x[s:s + rows], x, L)
        out[s:s + rows] = A @ v - A.sum(axis=1)[:, None] * v[s:s + rows]
    return out / N


def step_cs(ensemble: ParticleEnsemble, kernel: InteractionKernel, dt: float) -> ParticleEnsemble:
    """One classical RK4 step of ``x' = v, v' = cs_rhs``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    L = ensemble.torus.L
    x0, v0 = ensemble.positions, ensemble.velocities
    # stages are evaluated on unwrapped positions; the kernel only sees differences
    k1x, k1v = v0, _accel(x0, v0, kernel, L)
    x, v = x0 + 0.5 * dt * k1x, v0 + 0.5 * dt * k1v
    k2x, k2v = v, _accel(x, v, kernel, L)
    x, v = x0 + 0.5 * dt * k2x, v0 + 0.5 * dt * k2v
    k3x, k3v = v, _accel(x, v, kernel, L)
    x, v = x0 + dt * k3x, v0 + dt * k3v
    k4x, k4v = v, _accel(x, v, kernel, L)
    x_new = x0 + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
    v_new = v0 + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return ParticleEnsemble(ensemble.torus, x_new, v_new)


def step_cs_stochastic(ensemble: ParticleEnsemble, kernel: InteractionKernel, sigma: float,
                       dt: float, dB: float, vbar: float | None = None) -> ParticleEnsemble:
    """Euler-Maruyama step with one Brownian increment shared by all particles.

    ``v_i += drift_i dt + sigma (v_i - vbar) dB`` and ``x_i += v_i dt`` using the
    pre-step velocity.  ``vbar`` is the conserved initial mean; it defaults to
    the current mean.  Only the one-dimensional system is supported.
    """
    if ensemble.d != 1:
        raise ValueError("the stochastic particle system is one-dimensional")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if not dt > 0:
        raise ValueError("dt must be positive")
    x, v = ensemble.positions, ensemble.velocities
    vb = v.mean(axis=0) if vbar is None else np.reshape(np.asarray(vbar, float), (1,))
    drift = _accel(x, v, kernel, ensemble.torus.L)
    v_new = v + drift * dt + sigma * (v - vb) * dB
    return ParticleEnsemble(ensemble.torus, x + v * dt, v_new)


def velocity_spread(ensemble: ParticleEnsemble) -> float:
    """``(sum_i |v_i - vbar|^2)^(1/2)``."""
    v = ensemble.velocities
    return float(np.sqrt(np.sum((v - v.mean(axis=0)) ** 2)))


def max_pairwise_distance(ensemble: ParticleEnsemble) -> float:
    """Largest geodesic distance between any two particles."""
    x, L, N = ensemble.positions, ensemble.torus.L, ensemble.N
    rows = max(1, _BLOCK_ENTRIES // N)
    best = 0.0
    for s in range(0, N, rows):
        r2 = np.zeros((min(rows, N - s), N))
        for k in range(ensemble.d):
            a = np.abs(x[s:s + rows, k, None] - x[None, :, k])
            a = np.minimum(a, L - a)
            r2 += a * a
        best = max(best, float(r2.max()))
    return float(np.sqrt(best))


@dataclass
class ParticleTrajectory:
    times: np.ndarray
    snapshots: list[ParticleEnsemble]
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        if len(self.times) != len(self.snapshots):
            raise ValueError("one snapshot per sample time required")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("sample times must be strictly increasing")
        shapes = {s.positions.shape for s in self.snapshots}
        if len(shapes) > 1:
            raise ValueError("N and d must be constant along a trajectory")

    def spreads(self) -> np.ndarray:
        return np.array([velocity_spread(s) for s in self.snapshots])

    def mean_velocities(self) -> np.ndarray:
        return np.array([s.velocities.mean(axis=0) for s in self.snapshots])

    def write_csv(self, path) -> Path:
        """Columns ``t, particle_id, x_1..x_d, v_1..v_d``."""
        path = Path(path)
        d = self.snapshots[0].d
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "particle_id"] + [f"x_{k + 1}" for k in range(d)]
                       + [f"v_{k + 1}" for k in range(d)])
            for t, snap in zip(self.times, self.snapshots):
                for i in range(snap.N):
                    w.writerow([repr(float(t)), i]
                               + [repr(float(c)) for c in snap.positions[i]]
                               + [repr(float(c)) for c in snap.velocities[i]])
        return path


def substeps(interval: float, dt: float) -> tuple[int, float]:
    """Number of equal steps no longer than ``dt`` (up to rounding) covering ``interval``."""
    n = max(1, int(np.ceil(interval / dt - 1e-9)))
    return n, interval / n


def simulate_particles(ensemble: ParticleEnsemble, kernel: InteractionKernel, dt: float,
                       sample_times: Sequence[float], sigma: float = 0.0,
                       rng: np.random.Generator | None = None,
                       increments: np.ndarray | None = None,
                       seed: int | None = None) -> ParticleTrajectory:
    """Integrate to each sample time and record snapshots.

    Deterministic runs use RK4.  With ``sigma > 0`` the Euler-Maruyama scheme
    is used; Brownian increments are drawn from ``rng`` unless an explicit
    sequence ``increments`` (one per step) is supplied for coupled runs.
    """
    times = np.asarray(sample_times, float)
    if times[0] < 0:
        raise ValueError("sample times must be non-negative")
    vbar = ensemble.velocities.mean(axis=0)
    stochastic = sigma > 0
    if stochastic and rng is None and increments is None:
        raise ValueError("stochastic runs need an rng or an increment sequence")
    state, t, used = ensemble, 0.0, 0
    snaps = []
    for target in times:
        if target > t:
            n, h = substeps(target - t, dt)
            for _ in range(n):
                if stochastic:
                    if increments is not None:
                        dB = float(increments[used])
                    else:
                        dB = float(rng.normal(0.0, np.sqrt(h)))
                    used += 1
                    state = step_cs_stochastic(state, kernel, sigma, h, dB, vbar)
                else:
                    state = step_cs(state, kernel, h)
            t = float(target)
        snaps.append(state)
    return ParticleTrajectory(times, snaps, seed)


class RateFit(NamedTuple):
    exponent: float
    degenerate: bool
    n_points: int


def flocking_rate_fit(trajectory: ParticleTrajectory, floor: float = 1e-12) -> RateFit:
    """Least-squares slope of ``log spread`` against ``t`` over the latter half.

    Samples whose spread has fallen below ``floor`` are dropped; fewer than two
    usable points (e.g. already-flocked data) give a degenerate fit with a NaN
    exponent.
    """
    t = trajectory.times
    s = trajectory.spreads()
    half = len(t) // 2
    t, s = t[half:], s[half:]
    keep = s > floor
    # truncate at the first underflow so the window stays contiguous
    if not keep.all():
        cut = int(np.argmin(keep))
        t, s = t[:cut], s[:cut]
    if len(t) < 2:
        return RateFit(float("nan"), True, len(t))
    slope = np.polyfit(t, np.log(s), 1)[0]
    return RateFit(float(slope), False, len(t))


def _von_mises_positions(n: int, kappa: float, L: float, rng: np.random.Generator,
                         table_size: int = 1 << 14) -> np.ndarray:
    """Inverse-CDF draw from the density proportional to ``exp(kappa cos(2 pi y / L))``
    on ``[-L/2, L/2)`` (user coordinates centred on the mode)."""
    if kappa == 0:
        return rng.uniform(-L / 2, L / 2, n)
    edges = np.linspace(-L / 2, L / 2, table_size + 1)
    mid = 0.5 * (edges[1:] + edges[:-1])
    dens = np.exp(kappa * (np.cos(2 * np.pi * mid / L) - 1.0))
    cdf = np.concatenate([[0.0], np.cumsum(dens)])
    cdf /= cdf[-1]
    return np.interp(rng.uniform(0.0, 1.0, n), cdf, edges)


def sample_ensemble(config: ScenarioConfig, rng: np.random.Generator,
                    torus: Torus | None = None) -> ParticleEnsemble:
    """Draw positions and velocities according to the config's initial law."""
    torus = config.torus if torus is None else torus
    N, d = config.N, torus.d
    if config.position_law == "uniform":
        y = rng.uniform(config.x_low, config.x_high, (N, d))
    elif config.position_law == "von_mises":
        y = np.stack([_von_mises_positions(N, config.von_mises_k, torus.L, rng)
                      for _ in range(d)], axis=1)
    else:  # pragma: no cover - rejected by config validation
        raise ConfigError(f"unknown position law {config.position_law}")
    v = rng.uniform(config.v_low, config.v_high, (N, d))
    return ParticleEnsemble(torus, user_to_torus(y, torus), v)


def flocking_bound(trajectory: ParticleTrajectory, kernel: InteractionKernel) -> dict:
    """Spread bound ``N^(1/2) R_v exp(-a(d_max) t)`` along a trajectory.

    ``d_max`` (the position-spread level of the bound) is the largest pairwise
    geodesic distance observed over the stored snapshots; ``R_v`` is the
    largest initial speed.  Both are empirical proxies.
    """
    first = trajectory.snapshots[0]
    d_max = max(max_pairwise_distance(s) for s in trajectory.snapshots)
    # the smallest pair rate seen; equals a(d_max) for the geodesic metric
    a_min = min(float(_pair_rates(kernel, s.positions, s.positions, s.torus.L).min())
                for s in trajectory.snapshots)
    R_v = float(np.max(np.linalg.norm(first.velocities, axis=1)))
    t = trajectory.times - trajectory.times[0]
    decay = np.exp(-a_min * t)
    return {
        "d_max": d_max,
        "a_min": a_min,
        "R_v": R_v,
        "spread": trajectory.spreads(),
        "bound_initial": velocity_spread(first) * decay,
        "bound": np.sqrt(first.N) * R_v * decay,
    }


__all__ = [
    "cs_rhs", "step_cs", "step_cs_stochastic", "velocity_spread", "max_pairwise_distance",
    "ParticleTrajectory", "simulate_particles", "RateFit", "flocking_rate_fit",
    "sample_ensemble", "flocking_bound", "substeps",
]
