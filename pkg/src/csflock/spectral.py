"""Periodic Fourier machinery shared by all field solvers.

Coefficient normalisation used for norms: ``f_hat = FFT(f) * L^{d/2} / M^d``,
so that ``sum |f_hat|^2`` equals the grid L^2 norm squared (Parseval).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .core import GridSpec


@dataclass(frozen=True)
class KernelTransform:
    """A kernel table together with its cached, quadrature-scaled transform."""

    table: np.ndarray
    hat: np.ndarray

    @property
    def c_a(self) -> float:
        return float(self.table.min())


class SpectralPlan:
    """Transform workspace for one grid.

    Real transforms (``rfftn``) over the trailing ``d`` axes, so fields may
    carry leading batch axes (e.g. the ``d`` components of ``j``).
    """

    def __init__(self, grid: GridSpec, dealias: bool = False):
        self.grid = grid
        self.d = grid.d
        self.M = grid.M
        self.axes = tuple(range(-grid.d, 0))
        self.dealias = dealias
        M, h = grid.M, grid.h
        full = 2 * np.pi * np.fft.fftfreq(M, d=h)
        half = 2 * np.pi * np.fft.rfftfreq(M, d=h)
        self.xi = []
        self.deriv_xi = []
        for k in range(grid.d):
            base = half if k == grid.d - 1 else full
            shape = [1] * grid.d
            shape[k] = base.size
            self.xi.append(base.reshape(shape))
            dx = base.copy()
            if M % 2 == 0:
                dx[M // 2] = 0.0  # Nyquist index is M/2 on both layouts
            self.deriv_xi.append(dx.reshape(shape))
        # full-layout |xi|^2 for norms
        mesh = np.meshgrid(*([full] * grid.d), indexing="ij")
        self.xi2_full = sum(m * m for m in mesh)
        if dealias:
            cut = M / 3.0
            idx_full = np.abs(np.fft.fftfreq(M, d=1.0 / M))
            idx_half = np.fft.rfftfreq(M, d=1.0 / M)
            mask = np.ones(1)
            for k in range(grid.d):
                base = idx_half if k == grid.d - 1 else idx_full
                shape = [1] * grid.d
                shape[k] = base.size
                mask = mask * (base <= cut).reshape(shape)
            self._mask = mask
        else:
            self._mask = None

    # transforms ---------------------------------------------------------
    def forward(self, f: np.ndarray) -> np.ndarray:
        return np.fft.rfftn(f, axes=self.axes)

    def inverse(self, F: np.ndarray) -> np.ndarray:
        return np.fft.irfftn(F, s=self.grid.shape, axes=self.axes)

    def coefficients(self, f: np.ndarray) -> np.ndarray:
        """Full-layout Parseval-normalised coefficients ``f_hat(xi)``."""
        g = self.grid
        return np.fft.fftn(f, axes=self.axes) * (g.L ** (g.d / 2) / g.M ** g.d)

    def filter(self, f: np.ndarray) -> np.ndarray:
        """2/3-rule truncation when dealiasing is on, identity otherwise."""
        if self._mask is None:
            return f
        return self.inverse(self.forward(f) * self._mask)

    # kernels and convolutions ------------------------------------------
    def transform_kernel(self, table: np.ndarray) -> KernelTransform:
        table = np.asarray(table, float)
        if table.shape != self.grid.shape:
            raise ValueError(f"kernel table shape {table.shape} does not match grid {self.grid.shape}")
        return KernelTransform(table, self.forward(table) * self.grid.cell_volume)

    def convolve_hat(self, a: KernelTransform, F: np.ndarray) -> np.ndarray:
        return self.inverse(a.hat * F)

    def gradient_hat(self, F: np.ndarray) -> np.ndarray:
        return np.stack([self.inverse(1j * k * F) for k in self.deriv_xi])

    def derivative_hat(self, F: np.ndarray, axis: int) -> np.ndarray:
        return self.inverse(1j * self.deriv_xi[axis] * F)


def _check_grid(plan: SpectralPlan, f: np.ndarray) -> None:
    if f.shape[-plan.d:] != plan.grid.shape:
        raise ValueError(f"field shape {f.shape} does not match grid {plan.grid.shape}")


def convolve(plan: SpectralPlan, a, f) -> np.ndarray:
    """Periodic convolution ``(a * f)(x) = int a(x - y) f(y) dy`` on the grid.

    ``a`` is a kernel table or a cached :class:`KernelTransform`.
    """
    f = np.asarray(f, float)
    _check_grid(plan, f)
    if not isinstance(a, KernelTransform):
        a = np.asarray(a, float)
        _check_grid(plan, a)
        a = plan.transform_kernel(a)
    return plan.convolve_hat(a, plan.forward(f))


def spectral_gradient(plan: SpectralPlan, f) -> np.ndarray:
    """Gradient, shape ``(d,) + f.shape``; the Nyquist mode is dropped."""
    f = np.asarray(f, float)
    _check_grid(plan, f)
    return plan.gradient_hat(plan.forward(f))


def spectral_divergence(plan: SpectralPlan, j) -> np.ndarray:
    j = np.asarray(j, float)
    F = plan.forward(j)
    return sum(plan.derivative_hat(F[m], m) for m in range(plan.d))


def norm_L2(plan: SpectralPlan, f) -> float:
    f = np.asarray(f, float)
    return float(np.sqrt(np.sum(f * f) * plan.grid.cell_volume))


def norm_Hm2(plan: SpectralPlan, f) -> float:
    """Dual Sobolev norm via Fourier weights ``(1 + |xi|^2)^-2``."""
    f = np.asarray(f, float)
    _check_grid(plan, f)
    c = plan.coefficients(f)
    return float(np.sqrt(np.sum(np.abs(c) ** 2 / (1.0 + plan.xi2_full) ** 2)))


def norm_pair_Hm2(plan: SpectralPlan, u, v, vbar) -> float:
    """``(vbar^2 |u|^2 + |v|^2)^(1/2)`` in the H^-2 norm (1D pairs)."""
    if plan.d != 1:
        raise ValueError("the H^-2 pair norm is defined for d = 1")
    vbar = float(np.ravel(vbar)[0]) if np.ndim(vbar) else float(vbar)
    v = np.asarray(v, float).reshape(plan.grid.shape)
    return float(np.sqrt(vbar ** 2 * norm_Hm2(plan, u) ** 2 + norm_Hm2(plan, v) ** 2))


class FourierCheck(NamedTuple):
    constant: float
    xi: float
    order: int


def kernel_fourier_check(plan: SpectralPlan, kernel) -> FourierCheck:
    """Empirical constant ``max_{xi, r<=2} |(a^(r))^(xi)| (1 + xi^2)``.

    ``kernel`` is an :class:`~csflock.kernels.InteractionKernel` or a table.
    Derivatives are spectral, so the Nyquist coefficient only enters at r = 0.
    """
    if plan.d != 1:
        raise ValueError("kernel Fourier check is one-dimensional")
    table = kernel.table(plan.grid) if hasattr(kernel, "table") else np.asarray(kernel, float)
    xi = 2 * np.pi * np.fft.fftfreq(plan.M, d=plan.grid.h)
    dxi = xi.copy()
    if plan.M % 2 == 0:
        dxi[plan.M // 2] = 0.0
    a_hat = plan.coefficients(table)
    best = FourierCheck(-np.inf, 0.0, 0)
    for order in range(3):
        vals = np.abs((1j * dxi) ** order * a_hat) * (1.0 + xi * xi) if order else \
            np.abs(a_hat) * (1.0 + xi * xi)
        k = int(np.argmax(vals))
        if vals[k] > best.constant:
            best = FourierCheck(float(vals[k]), float(xi[k]), order)
    return best


def write_coefficients_csv(path, plan: SpectralPlan, f) -> Path:
    """Coefficient magnitudes for spectral-tail monitoring."""
    path = Path(path)
    c = np.abs(plan.coefficients(np.asarray(f, float)))
    idx = np.stack(np.meshgrid(*([np.fft.fftfreq(plan.M, d=1.0 / plan.M)] * plan.d),
                               indexing="ij")).reshape(plan.d, -1)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"k_{k + 1}" for k in range(plan.d)] + ["abs_coef"])
        for row in zip(*idx, c.ravel()):
            w.writerow([int(v) for v in row[:-1]] + [repr(float(row[-1]))])
    return path
