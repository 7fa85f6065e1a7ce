"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure
(stability or vacuum), 4 I/O error.
"""
from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from .core import ConfigError, NumericalError, ScenarioConfig, derive_rng
from .fields1d import make_state_1d, max_dt_spde, simulate_pde_1d, simulate_spde_1d
from .fieldsnd import (RegularizationConfig, default_regularization, make_state_nd, simulate_pde_nd,
                       write_activation_csv)
from .harness import (benchmark_slopes, compare_modes, kernel_from_config, run_benchmark, run_compare,
                      run_stats, sweep, write_json, write_rows, write_sweep_csv, SWEEP_AXES,
                      galilean_check, pde_state_from_config)
from .hydro import make_hydro_state, simulate_hydro, write_hydro_csv
from .kernels import empirical_density
from .particles import flocking_bound, flocking_rate_fit, sample_ensemble, simulate_particles

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


def _load_config(args) -> ScenarioConfig:
    cfg = ScenarioConfig.from_json(args.config) if args.config else ScenarioConfig()
    changes = {}
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = args.out
    return cfg.replace(**changes) if changes else cfg


def _out_dir(cfg: ScenarioConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _initial(cfg: ScenarioConfig):
    ens = sample_ensemble(cfg, derive_rng(cfg.seed, 0, 0))
    ens, shift = galilean_check(ens, cfg.galilean_shift)
    return ens, shift, empirical_density(ens, cfg.epsilon, cfg.grid)


def cmd_particles(cfg: ScenarioConfig, args) -> dict:
    ens = sample_ensemble(cfg, derive_rng(cfg.seed, 0, 0))
    kernel = kernel_from_config(cfg)
    times = cfg.sample_times()
    if cfg.sigma > 0:
        traj = simulate_particles(ens, kernel, cfg.dt, times, cfg.sigma, rng=derive_rng(cfg.seed, 0, 0, 0))
    else:
        traj = simulate_particles(ens, kernel, cfg.dt, times)
    out = _out_dir(cfg)
    traj.write_csv(out / "particles.csv")
    mv = traj.mean_velocities()
    bound = flocking_bound(traj, kernel)
    fit = flocking_rate_fit(traj)
    meta = {"config": cfg.to_dict(), "times": traj.times, "velocity_spread": traj.spreads(),
            "mean_velocity_drift": float(np.max(np.abs(mv - mv[0]))),
            "rate_fit": fit._asdict(), "d_max": bound["d_max"], "a_of_d_max": bound["a_min"],
            "spread_bound": bound["bound"]}
    write_json(out / "particles.json", meta)
    return meta


def _field_meta(cfg, traj, extra=None) -> dict:
    meta = {"config": cfg.to_dict(), "times": traj.times, "drift": traj.drift(),
            "flocking_gap": traj.gaps(),
            "negative_density_samples": traj.meta.get("negative_density_samples", 0)}
    meta.update(extra or {})
    return meta


def cmd_pde1d(cfg: ScenarioConfig, args) -> dict:
    if cfg.d != 1:
        raise ConfigError("pde1d needs d = 1")
    ens, shift, pair = _initial(cfg)
    state = pde_state_from_config(cfg, pair, kernel_from_config(cfg), ens, cfg.weight_mode)
    traj = simulate_pde_1d(state, cfg.sample_times(), cfg.cfl)
    out = _out_dir(cfg)
    traj.write_csv(out / "pde1d.csv")
    meta = _field_meta(cfg, traj, {"galilean_shift": shift})
    write_json(out / "pde1d.json", meta)
    return meta


def cmd_pdend(cfg: ScenarioConfig, args) -> dict:
    if cfg.d < 2:
        raise ConfigError("pdend needs d >= 2")
    ens, shift, pair = _initial(cfg)
    vbar = pair.momentum() / pair.mass()
    if cfg.reg_V is None:
        reg = default_regularization(pair, vbar, cfg.reg_W, cfg.reg_radius)
    else:
        reg = RegularizationConfig(cfg.reg_V, cfg.reg_W, cfg.reg_radius)
    state = make_state_nd(pair, kernel_from_config(cfg).table(cfg.grid), reg=reg, dealias=cfg.dealias)
    traj = simulate_pde_nd(state, cfg.sample_times(), cfg.cfl, track_activation=True)
    out = _out_dir(cfg)
    traj.write_csv(out / "pdend.csv")
    write_activation_csv(out / "activation.csv", traj.meta["final_state"])
    meta = _field_meta(cfg, traj, {"V": reg.V, "W": reg.W, "max_activation": traj.meta["max_activation"],
                                   "galilean_shift": shift})
    write_json(out / "pdend.json", meta)
    return meta


def cmd_spde(cfg: ScenarioConfig, args) -> dict:
    if cfg.d != 1:
        raise ConfigError("spde needs d = 1")
    ens, shift, pair = _initial(cfg)
    state = make_state_1d(pair, kernel_from_config(cfg).table(cfg.grid))
    traj = simulate_spde_1d(state, cfg.sigma, cfg.sample_times(), rng=derive_rng(cfg.seed, 0, 0, 1),
                            cfl=cfg.cfl, dt=min(cfg.dt, max_dt_spde(state, cfg.cfl)))
    out = _out_dir(cfg)
    traj.write_csv(out / "spde.csv")
    meta = _field_meta(cfg, traj, {"increments_used": traj.meta["increments_used"]})
    write_json(out / "spde.json", meta)
    return meta


def cmd_hydro(cfg: ScenarioConfig, args) -> dict:
    _, shift, pair = _initial(cfg)
    state = make_hydro_state(pair, kernel_from_config(cfg).table(cfg.grid), cfg.effective_rho_floor(),
                             cfg.dealias)
    traj = simulate_hydro(state, cfg.sample_times(), cfg.cfl)
    out = _out_dir(cfg)
    write_hydro_csv(out / "hydro.csv", traj)
    meta = _field_meta(cfg, traj)
    write_json(out / "hydro.json", meta)
    return meta


def cmd_compare(cfg: ScenarioConfig, args) -> dict:
    if args.both_weights:
        reports = compare_modes(cfg, ("none", "exponential"), threads=args.threads)
    else:
        reports = {cfg.weight_mode: run_compare(cfg, threads=args.threads)}
    out = _out_dir(cfg)
    summary = {}
    for mode, rep in reports.items():
        rep.write(out, f"compare_{mode}")
        summary[mode] = {"l2_final": float(rep.l2[-1]),
                         "hm2_final": None if rep.hm2 is None else float(rep.hm2[-1])}
    return summary


def cmd_sweep(cfg: ScenarioConfig, args) -> dict:
    values = [float(v) for v in args.values.split(",") if v.strip()] if args.values else []
    modes = ("none", "exponential") if args.both_weights else None
    rows = sweep(cfg, args.axis, values, modes, threads=args.threads)
    out = _out_dir(cfg)
    write_sweep_csv(out / "sweep.csv", rows)
    write_json(out / "sweep.json", {"config": cfg.to_dict(), "axis": args.axis, "values": values})
    return {"rows": len(rows)}


def cmd_bench(cfg: ScenarioConfig, args) -> dict:
    Ns = [int(v) for v in args.N.split(",")]
    records, cross = run_benchmark(Ns, cfg, args.repetitions)
    out = _out_dir(cfg)
    write_rows(out / "bench.csv", ["N", "particle_step_s", "pde_step_s", "repetitions"],
               [[r.N, r.particle_step, r.pde_step, r.repetitions] for r in records])
    meta = {"config": cfg.to_dict(), "crossover_N": cross, **(benchmark_slopes(records) if len(records) > 1 else {})}
    write_json(out / "bench.json", meta)
    return meta


def cmd_stats(cfg: ScenarioConfig, args) -> dict:
    res = run_stats(cfg, threads=args.threads)
    out = _out_dir(cfg)
    x = cfg.grid.axis()
    p, s = res["particles"], res["spde"]
    write_rows(out / "stats.csv",
               ["x", "rho_mean_particles", "rho_var_particles", "j_mean_particles", "j_var_particles",
                "rho_mean_spde", "rho_var_spde", "j_mean_spde", "j_var_spde"],
               zip(x, p["rho_mean"], p["rho_var"], p["j_mean"], p["j_var"],
                   s["rho_mean"], s["rho_var"], s["j_mean"], s["j_var"]))
    meta = {"config": cfg.to_dict(), "t": res["t"], "dt": res["dt"],
            "rho_fraction_within_3se": res["rho_fraction_within_3se"],
            "j_fraction_within_3se": res["j_fraction_within_3se"]}
    write_json(out / "stats.json", meta)
    return meta


COMMANDS = {
    "particles": (cmd_particles, "integrate the Cucker-Smale particle system"),
    "pde1d": (cmd_pde1d, "run the 1D reduced model (weighted if weight_mode is set)"),
    "pdend": (cmd_pdend, "run the regularised reduced model in d >= 2"),
    "spde": (cmd_spde, "run one realization of the reduced SPDE"),
    "hydro": (cmd_hydro, "run the mono-kinetic hydrodynamic model"),
    "compare": (cmd_compare, "particle vs reduced-PDE error report"),
    "sweep": (cmd_sweep, "error reports along one parameter axis"),
    "bench": (cmd_bench, "per-step wall time of particles and PDE"),
    "stats": (cmd_stats, "SPDE vs stochastic particle ensemble statistics"),
}


def _add_global_flags(p: argparse.ArgumentParser, top: bool) -> None:
    # flags are accepted before or after the subcommand; SUPPRESS keeps a
    # subcommand-level default from overwriting a value given at top level
    dflt = None if top else argparse.SUPPRESS
    p.add_argument("--config", metavar="PATH", default=dflt, help="flat JSON scenario file")
    p.add_argument("--out", metavar="DIR", default=dflt, help="output directory (overrides out_dir)")
    p.add_argument("--seed", type=int, metavar="U64", default=dflt, help="master seed (overrides seed)")
    p.add_argument("--threads", type=int, metavar="K", default=1 if top else argparse.SUPPRESS,
                   help="worker processes for realizations")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csflock", description=__doc__.splitlines()[0])
    _add_global_flags(parser, top=True)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        _add_global_flags(p, top=False)
        if name in ("compare", "sweep"):
            p.add_argument("--both-weights", action="store_true",
                           help="compare unweighted and exponential-weight models together")
        if name == "sweep":
            p.add_argument("--axis", required=True, choices=SWEEP_AXES)
            p.add_argument("--values", default="", help="comma-separated values")
        if name == "bench":
            p.add_argument("--N", default="100,200,400,800,1600,3200,6400,10000", help="comma-separated N list")
            p.add_argument("--repetitions", type=int, default=10)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
        fn, _ = COMMANDS[args.command]
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            fn(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        # invalid parameter combinations surfacing from the solvers
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{args.command}: wrote results to {cfg.out_dir}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
