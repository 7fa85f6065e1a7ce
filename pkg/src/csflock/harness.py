"""Experiment orchestration: particle/PDE comparisons, closing residuals,
ensemble statistics, benchmarks and parameter sweeps.

Seeding rule: realization ``r`` of sweep point ``i`` draws from
``derive_rng(seed, i, r)``; stochastic PDE ensembles in :func:`run_stats`
use ``derive_rng(seed, i, r, 1)`` and the particle ensembles
``derive_rng(seed, i, r, 0)`` so the two are independent.
"""
from __future__ import annotations

import csv
import json
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .core import (ConfigError, FieldPair, GridSpec, ParticleEnsemble, ScenarioConfig, derive_rng,
                   user_to_torus)
from .fields1d import (FieldTrajectory, make_state_1d, max_dt_1d, max_dt_spde,
                       simulate_pde_1d, simulate_spde_1d, step_pde_1d)
from .fieldsnd import (RegularizationConfig, default_regularization, make_state_nd, max_dt_nd,
                       simulate_pde_nd, step_pde_nd)
from .kernels import InteractionKernel, WeightField, empirical_density, exact_weight, smoothed_moment
from .particles import (flocking_rate_fit, sample_ensemble, simulate_particles, step_cs,
                        substeps)
from .spectral import SpectralPlan, norm_Hm2, norm_L2, norm_pair_Hm2

SWEEP_AXES = ("velocity_spread", "epsilon", "von_mises_k", "sigma", "N")


class GalileanWarning(UserWarning):
    """Mean velocity has a vanishing component."""


# ---------------------------------------------------------------- helpers
def kernel_from_config(config: ScenarioConfig) -> InteractionKernel:
    if config.split_c_a is not None:
        return InteractionKernel.from_split(config.split_c_a, config.split_theta, config.r, config.torus)
    return InteractionKernel(config.lam, config.r)


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None if np.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


def write_json(path, data: dict) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True))
    return path


def write_rows(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """CSV with one header row; floats written with full precision."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


def parallel_map(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Order-preserving map; ``threads > 1`` uses worker processes."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def galilean_check(ensemble: ParticleEnsemble, shift: float = 0.0) -> tuple[ParticleEnsemble, np.ndarray]:
    """Warn on a vanishing mean-velocity component and optionally shift.

    Returns the (possibly shifted) ensemble and the shift vector ``c`` applied
    to every velocity.
    """
    vbar = ensemble.velocities.mean(axis=0)
    scale = max(1.0, float(np.abs(ensemble.velocities).max()))
    c = np.zeros(ensemble.d)
    if np.any(np.abs(vbar) < 1e-12 * scale):
        msg = "mean velocity has a zero component; reduced-model closures degenerate"
        if shift:
            c[:] = shift
            msg += f"; running in a frame shifted by {shift}"
        warnings.warn(msg, GalileanWarning, stacklevel=2)
    if np.any(c):
        ensemble = ensemble.replace(velocities=ensemble.velocities + c)
    return ensemble, c


def translate_fields(plan: SpectralPlan, f: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """``f(x + shift)`` by a Fourier phase (exact for band-limited fields)."""
    F = plan.forward(f)
    phase = sum(k * s for k, s in zip(plan.xi, shift))
    return plan.inverse(F * np.exp(1j * phase))


def unshift(plan: SpectralPlan, rho, j, c: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Map fields from a frame moving with velocity ``c`` back to the lab frame."""
    if not np.any(c):
        return rho, j
    rho_l = translate_fields(plan, rho, c * t)
    j_l = np.stack([translate_fields(plan, j[m], c * t) - c[m] * rho_l for m in range(len(c))])
    return rho_l, j_l


# ----------------------------------------------------------- diagnostics
def closing_residual(ensemble: ParticleEnsemble, eps: float, grid: GridSpec, norm: str = "L2") -> float:
    """``|| N^-1 sum_i (v_i^2 - vbar^2) delta_eps'(x - x_i) ||`` in L^2 or H^-2."""
    if grid.d != 1:
        raise ValueError("the closing residual is one-dimensional")
    v = ensemble.velocities[:, 0]
    coef = v * v - v.mean() ** 2
    plan = SpectralPlan(grid)
    f = smoothed_moment(ensemble, coef, eps, grid)
    df = plan.derivative_hat(plan.forward(f), 0)
    if norm == "L2":
        return norm_L2(plan, df)
    if norm in ("Hm2", "H-2"):
        return norm_Hm2(plan, df)
    raise ValueError(f"unknown norm {norm!r}")


def l2_pair_error(grid: GridSpec, rho_a, j_a, rho_b, j_b) -> float:
    """``(||rho_a - rho_b||^2 + sum_m ||j_a,m - j_b,m||^2)^(1/2)``."""
    dr = np.asarray(rho_a) - np.asarray(rho_b)
    dj = np.asarray(j_a) - np.asarray(j_b)
    return float(np.sqrt((np.sum(dr * dr) + np.sum(dj * dj)) * grid.cell_volume))


# --------------------------------------------------------------- reports
@dataclass
class ErrorReport:
    """Particle-vs-PDE errors on a common sample-time axis, averaged over realizations."""

    times: np.ndarray
    l2: np.ndarray
    hm2: np.ndarray | None
    closing: np.ndarray | None
    drift: dict
    exponents: dict
    config: dict
    realizations: int = 1
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        for name in ("l2", "hm2", "closing"):
            series = getattr(self, name)
            if series is None:
                continue
            series = np.asarray(series, float)
            if series.shape != self.times.shape:
                raise ValueError(f"{name} series does not match the sample times")
            if np.any(series < 0):
                raise ValueError(f"{name} series must be non-negative")
            setattr(self, name, series)

    def rows(self) -> list[list]:
        out = []
        for k, t in enumerate(self.times):
            out.append([float(t), float(self.l2[k]),
                        float(self.hm2[k]) if self.hm2 is not None else "",
                        float(self.closing[k]) if self.closing is not None else ""])
        return out

    def write(self, out_dir, stem: str = "compare") -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = write_rows(out / f"{stem}.csv", ["t", "l2_error", "hm2_error", "closing_residual"],
                              self.rows())
        meta = {"config": self.config, "drift": self.drift, "exponents": self.exponents,
                "realizations": self.realizations, **self.extra}
        return csv_path, write_json(out / f"{stem}.json", meta)


@dataclass
class BenchRecord:
    N: int
    particle_step: float
    pde_step: float
    repetitions: int


# ----------------------------------------------------------- comparisons
def pde_state_from_config(config: ScenarioConfig, pair: FieldPair, kernel: InteractionKernel, ensemble,
                          mode: str):
    """Reduced-model state from smoothed initial fields (weighted in 1D if ``mode`` asks)."""
    table = kernel.table(config.grid)
    if config.d == 1:
        weight = None
        if mode != "none":
            w0 = exact_weight(ensemble, config.epsilon, pair.momentum(), config.grid,
                              config.effective_rho_min(), config.w_min, config.w_max)
            weight = WeightField(w0, config.effective_weight_rate(), mode, config.w_min, config.w_max)
        return make_state_1d(pair, table, weight=weight, dealias=config.dealias)
    vbar = pair.momentum() / pair.mass()
    if config.reg_V is None:
        reg = default_regularization(pair, vbar, config.reg_W, config.reg_radius)
    else:
        reg = RegularizationConfig(config.reg_V, config.reg_W, config.reg_radius)
    return make_state_nd(pair, table, reg=reg, dealias=config.dealias)


def increment_sequence(times: Sequence[float], dt: float, rng: np.random.Generator) -> np.ndarray:
    """Brownian increments for the step pattern used by both stochastic solvers."""
    times = np.asarray(times, float)
    incs, t = [], 0.0
    for target in times:
        if target > t + 1e-12:
            n, h = substeps(target - t, dt)
            incs.append(rng.normal(0.0, np.sqrt(h), n))
            t = float(target)
    return np.concatenate(incs) if incs else np.zeros(0)


def _compare_one(args) -> dict:
    config, point, r, modes = args
    rng = derive_rng(config.seed, point, r)
    grid, times = config.grid, config.sample_times()
    kernel = kernel_from_config(config)
    ens = sample_ensemble(config, rng)
    ens, c = galilean_check(ens, config.galilean_shift)
    pair0 = empirical_density(ens, config.epsilon, grid)
    plan = SpectralPlan(grid)
    stochastic = config.sigma > 0
    pde = {}
    for mode in modes:
        state = pde_state_from_config(config, pair0, kernel, ens, mode)
        if stochastic:
            if config.d != 1:
                raise ConfigError("stochastic comparisons are one-dimensional")
            dt = min(config.dt, max_dt_spde(state, config.cfl))
            incs = increment_sequence(times, dt, rng)
            traj = simulate_spde_1d(state, config.sigma, times, increments=incs, cfl=config.cfl, dt=dt)
        elif config.d == 1:
            traj = simulate_pde_1d(state, times, config.cfl)
        else:
            traj = simulate_pde_nd(state, times, config.cfl)
        pde[mode] = traj
    if stochastic:
        ptraj = simulate_particles(ens, kernel, dt, times, config.sigma, increments=incs)
    else:
        ptraj = simulate_particles(ens, kernel, config.dt, times)

    T = len(times)
    out = {mode: {"l2": np.zeros(T), "hm2": np.zeros(T) if config.d == 1 else None} for mode in modes}
    closing = np.zeros(T) if config.d == 1 else None
    vbar_lab = (ens.velocities.mean(axis=0) - c)
    for k, (t, snap) in enumerate(zip(times, ptraj.snapshots)):
        lab = snap
        if np.any(c):
            lab = ParticleEnsemble(snap.torus, snap.positions - c * t, snap.velocities - c)
        pp = empirical_density(lab, config.epsilon, grid)
        if closing is not None:
            closing[k] = closing_residual(lab, config.epsilon, grid, "L2")
        for mode in modes:
            rho, j = unshift(plan, pde[mode].rho[k], pde[mode].j[k], c, t)
            out[mode]["l2"][k] = l2_pair_error(grid, rho, j, pp.rho, pp.j)
            if config.d == 1:
                out[mode]["hm2"][k] = norm_pair_Hm2(plan, rho - pp.rho, j[0] - pp.j[0], vbar_lab[0])
    fit = flocking_rate_fit(ptraj)
    res = {"closing": closing, "particle_rate": fit.exponent,
           "particle_drift": float(np.max(np.abs(ptraj.mean_velocities() - ptraj.mean_velocities()[0]))),
           "shift": c}
    for mode in modes:
        gaps = pde[mode].gaps()
        good = gaps > 1e-14
        half = T // 2
        tt, gg = times[half:][good[half:]], gaps[half:][good[half:]]
        rate = float(np.polyfit(tt, np.log(gg), 1)[0]) if len(tt) >= 2 else float("nan")
        res[mode] = {**out[mode], "drift": pde[mode].drift(), "gap_rate": rate,
                     "negative_density_samples": pde[mode].meta.get("negative_density_samples", 0)}
    return res


def compare_modes(config: ScenarioConfig, modes: Sequence[str] = ("none",), point: int = 0,
                  threads: int = 1) -> dict[str, ErrorReport]:
    """Run particles once per realization and compare against each PDE weight mode."""
    if config.d not in (1, 2):
        raise ConfigError("comparisons support d = 1 or 2")
    for mode in modes:
        if mode != "none" and config.d != 1:
            raise ConfigError("weighted comparisons are one-dimensional")
    args = [(config, point, r, tuple(modes)) for r in range(config.realizations)]
    results = parallel_map(_compare_one, args, threads)
    times = config.sample_times()
    R = len(results)
    closing = None if config.d != 1 else np.mean([res["closing"] for res in results], axis=0)
    reports = {}
    for mode in modes:
        l2 = np.mean([res[mode]["l2"] for res in results], axis=0)
        hm2 = None if config.d != 1 else np.mean([res[mode]["hm2"] for res in results], axis=0)
        drift = {
            "pde_mass": max(res[mode]["drift"]["mass"] for res in results),
            "pde_momentum": max(res[mode]["drift"]["momentum"] for res in results),
            "particle_mean_velocity": max(res["particle_drift"] for res in results),
        }
        exps = {"pde_gap": _nanmean([res[mode]["gap_rate"] for res in results]),
                "particle_spread": _nanmean([res["particle_rate"] for res in results])}
        extra = {"weight_mode": mode,
                 "negative_density_samples": sum(res[mode]["negative_density_samples"] for res in results),
                 "galilean_shift_applied": any(np.any(res["shift"]) for res in results)}
        cfg = config.to_dict()
        cfg["weight_mode"] = mode
        reports[mode] = ErrorReport(times, l2, hm2, closing, drift, exps, cfg, R, extra)
    return reports


def _nanmean(values) -> float:
    values = np.asarray(values, float)
    finite = values[np.isfinite(values)]
    return float(finite.mean()) if finite.size else float("nan")


def run_compare(config: ScenarioConfig, point: int = 0, threads: int = 1) -> ErrorReport:
    """Particle vs reduced-PDE errors for the config's weight mode."""
    return compare_modes(config, (config.weight_mode,), point, threads)[config.weight_mode]


# ------------------------------------------------------------ statistics
def ensemble_stats(realizations: Sequence) -> dict[str, np.ndarray]:
    """Pointwise mean and unbiased variance of ``rho`` and ``j``.

    Each realization is a :class:`FieldPair` or a ``(rho, j)`` tuple.
    """
    if len(realizations) < 2:
        raise ValueError("need at least two realizations")
    rhos, js = [], []
    for item in realizations:
        rho, j = (item.rho, item.j) if isinstance(item, FieldPair) else item
        rhos.append(np.asarray(rho, float))
        js.append(np.asarray(j, float))
    if len({r.shape for r in rhos}) != 1 or len({j.shape for j in js}) != 1:
        raise ValueError("realizations have mismatched shapes")
    rhos, js = np.stack(rhos), np.stack(js)
    return {"rho_mean": rhos.mean(axis=0), "rho_var": rhos.var(axis=0, ddof=1),
            "j_mean": js.mean(axis=0), "j_var": js.var(axis=0, ddof=1), "count": len(realizations)}


def lattice_ensemble(config: ScenarioConfig) -> ParticleEnsemble:
    """Deterministic 1D start: evenly spaced positions over ``[x_low, x_high)`` and
    velocities ``v_c + s sin(2 pi y / L)`` with ``v_c``, ``s`` the centre and
    half-width of the velocity box."""
    torus = config.torus
    y = config.x_low + (np.arange(config.N) + 0.5) * (config.x_high - config.x_low) / config.N
    vc = 0.5 * (config.v_low + config.v_high)
    s = 0.5 * (config.v_high - config.v_low)
    v = vc + s * np.sin(2 * np.pi * y / torus.L)
    v = v - v.mean() + vc
    return ParticleEnsemble(torus, user_to_torus(y[:, None], torus), v[:, None])


def _stats_particle(args):
    config, ens, kernel, times, dt, r = args
    rng = derive_rng(config.seed, 0, r, 0)
    traj = simulate_particles(ens, kernel, dt, times, config.sigma, rng=rng)
    pair = empirical_density(traj.snapshots[-1], config.epsilon, config.grid)
    return pair.rho, pair.j[0]


def _stats_spde(args):
    config, state, times, dt, r = args
    rng = derive_rng(config.seed, 0, r, 1)
    traj = simulate_spde_1d(state, config.sigma, times, rng=rng, cfl=config.cfl, dt=dt)
    return traj.rho[-1], traj.j[-1, 0]


def run_stats(config: ScenarioConfig, ensemble: ParticleEnsemble | None = None,
              threads: int = 1) -> dict:
    """Stochastic particles vs reduced SPDE: final-time mean/variance fields.

    Both ensembles start from the same deterministic state (``lattice_ensemble``
    unless given) and use the same step; their noise streams are independent,
    so the Monte Carlo standard error of the mean difference is
    ``sqrt(var_p / R + var_s / R)``.
    """
    if config.d != 1:
        raise ConfigError("the stochastic models are one-dimensional")
    if config.realizations < 2:
        raise ConfigError("statistics need at least two realizations")
    ens = lattice_ensemble(config) if ensemble is None else ensemble
    kernel = kernel_from_config(config)
    grid = config.grid
    pair0 = empirical_density(ens, config.epsilon, grid)
    state = make_state_1d(pair0, kernel.table(grid))
    dt = min(config.dt, max_dt_spde(state, config.cfl))
    times = np.array([0.0, config.t_end])
    R = config.realizations
    part = parallel_map(_stats_particle, [(config, ens, kernel, times, dt, r) for r in range(R)], threads)
    spde = parallel_map(_stats_spde, [(config, state, times, dt, r) for r in range(R)], threads)
    sp, ss = ensemble_stats(part), ensemble_stats(spde)
    out = {"particles": sp, "spde": ss, "dt": dt, "t": config.t_end, "realizations": R}
    for name in ("rho", "j"):
        diff = sp[f"{name}_mean"] - ss[f"{name}_mean"]
        se = np.sqrt(sp[f"{name}_var"] / R + ss[f"{name}_var"] / R)
        z = np.abs(diff) / np.maximum(se, 1e-300)
        out[f"{name}_z"] = z
        out[f"{name}_fraction_within_3se"] = float(np.mean(z <= 3.0))
    return out


# ------------------------------------------------------------- benchmark
def _median_time(fn: Callable[[], Any], reps: int) -> float:
    fn()  # warm-up
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return float(np.median(samples))


def run_benchmark(N_list: Sequence[int], config: ScenarioConfig, repetitions: int = 10,
                  pde_repetitions: int | None = None) -> tuple[list[BenchRecord], float | None]:
    """Median wall time of one particle step and one PDE step.

    The PDE step cost is measured once (it does not depend on ``N``) with
    ``pde_repetitions`` repeats (default ``max(repetitions, 1000)``) and
    reported against every ``N``.  Returns the records and the interpolated
    crossover ``N`` (None if the curves do not cross inside the sweep).
    """
    if repetitions < 10:
        raise ValueError("need at least 10 repetitions")
    rng = derive_rng(config.seed, 0)
    grid = config.grid
    kernel = kernel_from_config(config)
    dummy = sample_ensemble(config.replace(N=max(64, config.N if config.N <= 4096 else 4096)), rng)
    pair = empirical_density(dummy, config.epsilon, grid)
    if config.d == 1:
        state = make_state_1d(pair, kernel.table(grid))
        dt = max_dt_1d(state, config.cfl)
        pde_fn = lambda: step_pde_1d(state, dt, config.cfl)  # noqa: E731
    else:
        state = make_state_nd(pair, kernel.table(grid))
        dt = max_dt_nd(state, config.cfl)
        pde_fn = lambda: step_pde_nd(state, None, dt, config.cfl)  # noqa: E731
    pde_reps = max(repetitions, 1000) if pde_repetitions is None else pde_repetitions
    records = []
    for N in N_list:
        ens = sample_ensemble(config.replace(N=int(N)), rng)
        t_part = _median_time(lambda: step_cs(ens, kernel, config.dt), repetitions)
        t_pde = _median_time(pde_fn, pde_reps)
        records.append(BenchRecord(int(N), t_part, t_pde, repetitions))
    return records, crossover(records)


def crossover(records: Sequence[BenchRecord]) -> float | None:
    """First ``N`` where the particle step becomes slower than the PDE step
    (log-log interpolation between sweep points)."""
    for a, b in zip(records, records[1:]):
        da = np.log(a.particle_step) - np.log(a.pde_step)
        db = np.log(b.particle_step) - np.log(b.pde_step)
        if da <= 0 < db:
            s = -da / (db - da)
            return float(np.exp(np.log(a.N) + s * (np.log(b.N) - np.log(a.N))))
    return None


def loglog_slope(N, times) -> float:
    return float(np.polyfit(np.log(np.asarray(N, float)), np.log(np.asarray(times, float)), 1)[0])


def benchmark_slopes(records: Sequence[BenchRecord]) -> dict:
    """PDE slope over the whole sweep; particle slope over its upper half,
    where the quadratic pair cost dominates fixed per-call overhead."""
    N = [r.N for r in records]
    half = max(0, min(len(records) // 2, len(records) - 2))
    return {"pde": loglog_slope(N, [r.pde_step for r in records]),
            "particles": loglog_slope(N[half:], [r.particle_step for r in records[half:]])}


# ----------------------------------------------------------------- sweep
def _with_axis(config: ScenarioConfig, axis: str, value: float) -> ScenarioConfig:
    if axis == "velocity_spread":
        vc = 0.5 * (config.v_low + config.v_high)
        return config.replace(v_low=vc - value, v_high=vc + value)
    if axis == "N":
        return config.replace(N=int(value))
    if axis == "von_mises_k":
        return config.replace(von_mises_k=float(value), position_law="von_mises")
    return config.replace(**{axis: float(value)})


def sweep(config: ScenarioConfig, axis: str, values: Sequence[float],
          modes: Sequence[str] | None = None, threads: int = 1) -> list[dict]:
    """One :func:`compare_modes` run per value; point ``i`` seeds from ``(seed, i, r)``.

    ``velocity_spread`` is the half-width of the velocity box about its
    centre.  Returns tidy rows (one per value, mode and sample time).
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")
    modes = (config.weight_mode,) if modes is None else tuple(modes)
    rows = []
    for i, value in enumerate(values):
        cfg = _with_axis(config, axis, value)
        reports = compare_modes(cfg, modes, point=i, threads=threads)
        for mode, rep in reports.items():
            for k, t in enumerate(rep.times):
                rows.append({
                    "axis": axis, "value": float(value), "point": i, "weight_mode": mode,
                    "t": float(t), "l2_error": float(rep.l2[k]),
                    "hm2_error": float(rep.hm2[k]) if rep.hm2 is not None else float("nan"),
                    "closing_residual": float(rep.closing[k]) if rep.closing is not None else float("nan"),
                })
    return rows


SWEEP_COLUMNS = ("axis", "value", "point", "weight_mode", "t", "l2_error", "hm2_error", "closing_residual")


def write_sweep_csv(path, rows: Sequence[dict]) -> Path:
    return write_rows(path, SWEEP_COLUMNS, ([row[c] for c in SWEEP_COLUMNS] for row in rows))


def closing_sweep(config: ScenarioConfig, eps_values: Sequence[float], realizations: int | None = None,
                  point: int = 0) -> np.ndarray:
    """Mean squared L^2 closing residual at ``t = 0`` for each ``eps``.

    Realization ``r`` draws from ``derive_rng(seed, point, r)``; the same
    ensembles are reused across ``eps``.
    """
    R = config.realizations if realizations is None else realizations
    grid = config.grid
    out = np.zeros(len(eps_values))
    for r in range(R):
        ens = sample_ensemble(config, derive_rng(config.seed, point, r))
        for k, eps in enumerate(eps_values):
            out[k] += closing_residual(ens, eps, grid, "L2") ** 2
    return out / R
