"""Communication rate, its constant/oscillating split, the von Mises mollifier,
smoothed empirical densities and the kinetic-term weight."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .core import WEIGHT_MODES, FieldPair, GridSpec, ParticleEnsemble, Torus


@dataclass(frozen=True)
class InteractionKernel:
    """``a(x) = base + lam / (1 + |x|^2)^r`` with ``|x|`` a torus distance.

    ``metric="geodesic"`` uses the minimal-image distance (default).  It has a
    derivative kink at the antipode; ``metric="chord"`` replaces each axis
    offset ``dx`` by ``(L/pi) sin(pi |dx| / L)``, which agrees to second order
    near the origin and is smooth on the whole torus.

    ``base`` is zero for the classical Cucker-Smale rate; it is only non-zero
    for kernels built from an explicit split via :meth:`from_split`.
    """

    lam: float
    r: float
    base: float = 0.0
    metric: str = "geodesic"

    def __post_init__(self):
        if self.lam < 0 or self.r < 0:
            raise ValueError("lam and r must be non-negative")
        if self.metric not in ("geodesic", "chord"):
            raise ValueError(f"unknown metric {self.metric!r}")

    @classmethod
    def constant(cls, value: float) -> "InteractionKernel":
        return cls(lam=value, r=0.0)

    @classmethod
    def from_split(cls, c_a: float, theta: float, r: float, torus: Torus) -> "InteractionKernel":
        """Kernel equal to ``c_a + theta * g`` with ``g`` the rescaled
        ``(1+|x|^2)^{-r}`` profile running from 0 (antipode) to 1 (origin)."""
        if theta == 0 or r == 0:
            return cls.constant(c_a)
        s_min = (1.0 + torus.d * (torus.L / 2) ** 2) ** (-r)
        lam = theta / (1.0 - s_min)
        return cls(lam=lam, r=r, base=c_a - lam * s_min)

    def axis_distance(self, dx, L: float) -> np.ndarray:
        """Per-axis distance for raw coordinate differences ``dx``."""
        a = np.abs(np.asarray(dx, dtype=float))
        if self.metric == "chord":
            return (L / np.pi) * np.abs(np.sin(np.pi * a / L))
        if a.size and a.max() >= L:
            a = np.mod(a, L)
        return np.minimum(a, L - a)

    def from_dist_sq(self, r2):
        r2 = np.asarray(r2, dtype=float)
        if self.r == 0:
            return np.full(r2.shape, self.base + self.lam)
        if self.r == 0.5:
            return self.base + self.lam / np.sqrt(1.0 + r2)
        if self.r == 1:
            return self.base + self.lam / (1.0 + r2)
        return self.base + self.lam * (1.0 + r2) ** (-self.r)

    def table(self, grid: GridSpec) -> np.ndarray:
        """Kernel sampled at every grid node, measured from the origin."""
        dist = self.axis_distance(grid.axis(), grid.L)
        r2 = np.zeros(grid.shape)
        for k in range(grid.d):
            shape = [1] * grid.d
            shape[k] = grid.M
            r2 = r2 + (dist ** 2).reshape(shape)
        return self.from_dist_sq(r2)


def eval_kernel(kernel: InteractionKernel, displacement, torus: Torus | None = None):
    """Communication rate for minimal-image displacement vector(s) (last axis).

    The chord metric needs ``torus`` to know the circumference.
    """
    disp = np.asarray(displacement, dtype=float)
    if kernel.metric == "chord":
        if torus is None:
            raise ValueError("chord metric needs the torus")
        disp = kernel.axis_distance(disp, torus.L)
    r2 = disp ** 2 if disp.ndim == 0 else np.sum(disp ** 2, axis=-1)
    out = kernel.from_dist_sq(r2)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class KernelSplit:
    c_a: float
    theta: float
    g: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.c_a + self.theta * self.g


def split_kernel(kernel: InteractionKernel | np.ndarray, grid: GridSpec) -> KernelSplit:
    """Split the grid table into ``C_a + theta * g`` with ``max|g| = 1``."""
    a = kernel.table(grid) if isinstance(kernel, InteractionKernel) else np.asarray(kernel, float)
    if np.any(a <= 0):
        raise ValueError("kernel must be strictly positive on the grid")
    c_a = float(a.min())
    theta = float(a.max() - c_a)
    g = (a - c_a) / theta if theta > 0 else np.zeros_like(a)
    return KernelSplit(c_a, theta, g)


class FlockingCondition(NamedTuple):
    holds: bool
    K: float
    bound: float
    margin: float


def check_flocking_condition(split: KernelSplit, rho0, j0, vbar: float,
                             grid: GridSpec) -> FlockingCondition:
    """Smallness test ``K < C_a / (4 theta ||g||)`` for the 1D reduced model.

    ``K^2 = 2 (vbar^2 |rho0|^2 + |j0|^2) / vbar^2 + 18 |j0 - vbar rho0|^2 / vbar^2``
    with all norms L^2 on the grid.
    """
    vbar = float(np.ravel(vbar)[0]) if np.ndim(vbar) else float(vbar)
    if vbar == 0:
        raise ValueError("flocking condition undefined for zero mean velocity")
    rho0 = np.asarray(rho0, float)
    j0 = np.asarray(j0, float).reshape(rho0.shape)
    l2 = lambda f: float(np.sqrt(np.sum(f * f) * grid.cell_volume))  # noqa: E731
    v2 = vbar * vbar
    K = np.sqrt(2 * (v2 * l2(rho0) ** 2 + l2(j0) ** 2) / v2
                + 2 * 3 ** 2 * l2(j0 - vbar * rho0) ** 2 / v2)
    osc = split.theta * l2(split.g)
    if osc == 0:
        return FlockingCondition(True, float(K), np.inf, np.inf)
    bound = split.c_a / (4 * osc)
    return FlockingCondition(bool(K < bound), float(K), float(bound), float(bound - K))


def _vm_exponent(x, eps: float, L: float):
    # sin^2(pi x / L) / (eps_t^2 / 2) with eps_t = 2 pi eps / L
    return np.sin(np.pi * np.asarray(x, float) / L) ** 2 * (L * L / (2 * np.pi ** 2 * eps * eps))


def von_mises_delta(eps: float, x, grid: GridSpec) -> np.ndarray:
    """Periodic von Mises mollifier of width ``eps`` evaluated at ``x``.

    ``x`` has shape ``(..., d)`` (or is scalar/1D for d = 1).  The constant is
    the grid quadrature of the unnormalised bump centred on a node, so the
    discrete integral of the node samples is exactly one.
    """
    if not eps > 0:
        raise ValueError(f"mollifier width must be positive, got {eps}")
    L, d = grid.L, grid.d
    x = np.asarray(x, float)
    if d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    z = np.sum(np.exp(-_vm_exponent(grid.axis(), eps, L))) * grid.h
    return np.prod(np.exp(-_vm_exponent(x, eps, L)) / z, axis=-1)


def _bump_matrix(eps: float, centers, grid: GridSpec) -> np.ndarray:
    """Rows are mollifier samples on one grid axis, one per center, each with
    discrete mass exactly one."""
    diff = grid.axis()[None, :] - np.asarray(centers, float)[:, None]
    e = _vm_exponent(diff, eps, grid.L)
    e -= e.min(axis=1, keepdims=True)
    b = np.exp(-e)
    return b / (b.sum(axis=1, keepdims=True) * grid.h)


_EINSUM_AXES = "abcdefgh"


def _smooth_sum(bumps: list[np.ndarray], coef: np.ndarray) -> np.ndarray:
    """``sum_i coef_i prod_k bumps[k][i, x_k]`` as a tensor over the grid."""
    d = len(bumps)
    if d == 1:
        return coef @ bumps[0]
    if d == 2:
        return (bumps[0] * coef[:, None]).T @ bumps[1]
    subs = ",".join("n" + _EINSUM_AXES[k] for k in range(d))
    return np.einsum("n," + subs + "->" + _EINSUM_AXES[:d], coef, *bumps, optimize=True)


def empirical_density(ensemble: ParticleEnsemble, eps: float, grid: GridSpec) -> FieldPair:
    """Mollified empirical density and momentum density on the grid."""
    if not eps > 0:
        raise ValueError(f"mollifier width must be positive, got {eps}")
    if ensemble.torus != grid.torus:
        raise ValueError("ensemble and grid live on different tori")
    N = ensemble.N
    bumps = [_bump_matrix(eps, ensemble.positions[:, k], grid) for k in range(grid.d)]
    rho = _smooth_sum(bumps, np.full(N, 1.0 / N))
    j = np.stack([_smooth_sum(bumps, ensemble.velocities[:, m] / N) for m in range(grid.d)])
    return FieldPair(grid, rho, j)


def smoothed_moment(ensemble: ParticleEnsemble, coef, eps: float, grid: GridSpec) -> np.ndarray:
    """``N^-1 sum_i coef_i delta_eps(x - x_i)`` for arbitrary per-particle weights."""
    bumps = [_bump_matrix(eps, ensemble.positions[:, k], grid) for k in range(grid.d)]
    return _smooth_sum(bumps, np.asarray(coef, float) / ensemble.N)


@dataclass(frozen=True)
class WeightField:
    """Space-time weight on the kinetic term of the 1D model.

    ``rate`` is the relaxation rate of the exponential mode (the constant part
    ``C_a`` of the kernel, ``lam / 2`` by default in the harness).
    """

    w0: np.ndarray
    rate: float
    mode: str = "exponential"
    w_min: float = 0.1
    w_max: float = 10.0

    def __post_init__(self):
        if self.mode not in WEIGHT_MODES:
            raise ValueError(f"unknown weight mode {self.mode!r}")
        if not 0 < self.w_min <= self.w_max:
            raise ValueError("need 0 < w_min <= w_max")
        object.__setattr__(self, "w0", np.clip(np.asarray(self.w0, float), self.w_min, self.w_max))

    def sup(self) -> float:
        """Upper bound of the weight over all times."""
        if self.mode == "none":
            return 1.0
        return float(max(1.0, self.w0.max())) if self.mode == "exponential" else float(self.w0.max())


def exact_weight(ensemble: ParticleEnsemble, eps: float, vbar, grid: GridSpec,
                 rho_min: float | None = None, w_min: float = 0.1,
                 w_max: float = 10.0) -> np.ndarray:
    """Initial weight matching the smoothed second velocity moment.

    ``w0 = (N^-1 sum v_i^2 delta_eps(x - x_i)) / (vbar^2 max(rho_eps, rho_min))``,
    clamped to ``[w_min, w_max]``.
    """
    vbar = float(np.ravel(vbar)[0])
    if vbar == 0:
        raise ValueError("weight undefined for zero mean velocity")
    if grid.d != 1:
        raise ValueError("the weighted model is one-dimensional")
    if rho_min is None:
        rho_min = 1e-6 / grid.L
    bumps = [_bump_matrix(eps, ensemble.positions[:, 0], grid)]
    N = ensemble.N
    rho = _smooth_sum(bumps, np.full(N, 1.0 / N))
    second = _smooth_sum(bumps, ensemble.velocities[:, 0] ** 2 / N)
    w0 = second / (vbar * vbar * np.maximum(rho, rho_min))
    return np.clip(w0, w_min, w_max)


def weight_at(weight: WeightField | None, t: float) -> np.ndarray | float:
    """Weight field at time ``t``; the scalar 1.0 stands for 'no weight'."""
    if weight is None or weight.mode == "none":
        return 1.0
    if weight.mode == "exact-frozen":
        return weight.w0
    decay = np.exp(-weight.rate * t)
    return 1.0 - decay + decay * weight.w0


def write_kernel_csv(path, kernel: InteractionKernel, grid: GridSpec) -> Path:
    """Dump the kernel table: node coordinate column(s) then the kernel value."""
    path = Path(path)
    table = kernel.table(grid)
    nodes = grid.nodes().reshape(grid.d, -1)
    cols = [f"x_{k + 1}" for k in range(grid.d)] if grid.d > 1 else ["x"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols + ["a"])
        for row in zip(*nodes, table.ravel()):
            w.writerow([repr(float(v)) for v in row])
    return path
