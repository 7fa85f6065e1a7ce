"""Domain types, torus geometry and scenario configuration.

Every solver in the package works on the box ``[0, L)^d`` with periodic
identification.  User-facing coordinates (config files, sampling boxes) are
centred on the origin and shifted by ``L/2`` on ingestion.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

import numpy as np


class ConfigError(ValueError):
    """Invalid or inconsistent scenario configuration."""


class NumericalError(RuntimeError):
    """A solver refused to step (stability or positivity violation)."""


class CFLError(NumericalError):
    pass


class VacuumError(NumericalError):
    pass


@dataclass(frozen=True)
class Torus:
    d: int
    L: float

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ConfigError(f"torus dimension must be a positive integer, got {self.d}")
        if not self.L > 0:
            raise ConfigError(f"torus length must be positive, got {self.L}")


@dataclass(frozen=True)
class GridSpec:
    torus: Torus
    M: int

    def __post_init__(self):
        if self.M < 4:
            raise ConfigError(f"need at least 4 grid points per axis, got {self.M}")

    @property
    def d(self) -> int:
        return self.torus.d

    @property
    def L(self) -> float:
        return self.torus.L

    @property
    def h(self) -> float:
        return self.torus.L / self.M

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.M,) * self.torus.d

    @property
    def cell_volume(self) -> float:
        return self.h ** self.torus.d

    def axis(self) -> np.ndarray:
        """Node coordinates ``k h`` along one axis."""
        return np.arange(self.M) * self.h

    def nodes(self) -> np.ndarray:
        """All node coordinates, shape ``(d, M, ..., M)``."""
        ax = self.axis()
        return np.stack(np.meshgrid(*([ax] * self.d), indexing="ij"))

    def integrate(self, f: np.ndarray) -> float:
        """Rectangle-rule integral over the torus (spectrally accurate)."""
        return float(np.sum(f) * self.cell_volume)


@dataclass(frozen=True)
class ParticleEnsemble:
    torus: Torus
    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float)
        v = np.asarray(self.velocities, dtype=float)
        d = self.torus.d
        if x.ndim == 1 and d == 1:
            x = x[:, None]
        if v.ndim == 1 and d == 1:
            v = v[:, None]
        if x.ndim != 2 or x.shape[1] != d or v.shape != x.shape:
            raise ValueError(
                f"positions/velocities must both be N x {d}, got {x.shape} and {v.shape}"
            )
        if x.shape[0] < 1:
            raise ValueError("ensemble needs at least one particle")
        object.__setattr__(self, "positions", wrap(x, self.torus))
        object.__setattr__(self, "velocities", v)

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.torus.d

    def mean_velocity(self) -> np.ndarray:
        return mean_velocity(self)

    def replace(self, **changes) -> "ParticleEnsemble":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class FieldPair:
    """Density ``rho`` (shape ``grid.shape``) and momentum ``j`` (``(d,) + grid.shape``)."""

    grid: GridSpec
    rho: np.ndarray
    j: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float)
        j = np.asarray(self.j, dtype=float)
        if rho.shape != self.grid.shape:
            raise ValueError(f"rho has shape {rho.shape}, grid expects {self.grid.shape}")
        if j.shape == self.grid.shape and self.grid.d == 1:
            j = j[None]
        if j.shape != (self.grid.d,) + self.grid.shape:
            raise ValueError(f"j has shape {j.shape}, expected {(self.grid.d,) + self.grid.shape}")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "j", j)

    def mass(self) -> float:
        return self.grid.integrate(self.rho)

    def momentum(self) -> np.ndarray:
        return np.array([self.grid.integrate(jm) for jm in self.j])


def wrap(x, torus: Torus) -> np.ndarray:
    """Map coordinates into the canonical box ``[0, L)``."""
    L = torus.L
    y = np.mod(np.asarray(x, dtype=float), L)
    # np.mod can round tiny negatives up to exactly L
    return np.where(y >= L, 0.0, y)


def geodesic_displacement(x, y, torus: Torus) -> np.ndarray:
    """Minimal-image difference ``x - y`` with components in ``[-L/2, L/2)``."""
    L = torus.L
    dxy = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return dxy - L * np.floor(dxy / L + 0.5)


def geodesic_distance_sq(x, y, torus: Torus) -> np.ndarray:
    """Squared torus distance between canonical points; exactly symmetric in x, y."""
    a = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    a = np.minimum(a, torus.L - a)
    return np.sum(a * a, axis=-1)


def mean_velocity(ensemble: ParticleEnsemble) -> np.ndarray:
    return ensemble.velocities.mean(axis=0)


def user_to_torus(x, torus: Torus) -> np.ndarray:
    """Shift origin-centred user coordinates into the canonical chart."""
    return wrap(np.asarray(x, dtype=float) + torus.L / 2, torus)


def torus_to_user(x, torus: Torus) -> np.ndarray:
    return np.asarray(x, dtype=float) - torus.L / 2


WEIGHT_MODES = ("none", "exponential", "exact-frozen")
POSITION_LAWS = ("uniform", "von_mises")


@dataclass
class ScenarioConfig:
    """Flat experiment description, serialised as JSON with these exact keys.

    Positions are sampled in user coordinates ``[x_low, x_high]^d`` (or from a
    von Mises law with concentration ``von_mises_k`` mapped onto the torus) and
    shifted by ``L/2``.  ``dt`` is the particle step; field solvers use
    ``cfl`` to pick their own step.  ``weight_rate`` defaults to ``lam / 2``
    and ``rho_min`` to ``1e-6 / L``.
    """

    d: int = 1
    L: float = 40.0
    M: int = 256
    N: int = 1000
    t_end: float = 2.0
    dt: float = 1e-2
    cfl: float = 0.4
    n_samples: int = 21
    lam: float = 50.0
    r: float = 0.5
    split_c_a: float | None = None
    split_theta: float | None = None
    epsilon: float = 1.0
    position_law: str = "uniform"
    x_low: float = -20.0
    x_high: float = 20.0
    von_mises_k: float = 0.0
    v_low: float = -10.0
    v_high: float = 10.0
    weight_mode: str = "none"
    weight_rate: float | None = None
    w_min: float = 0.1
    w_max: float = 10.0
    rho_min: float | None = None
    sigma: float = 0.0
    seed: int = 0
    realizations: int = 1
    galilean_shift: float = 0.0
    dealias: bool = False
    reg_V: float | None = None
    reg_W: float = 1.0
    reg_radius: int = 1
    rho_floor: float | None = None
    out_dir: str = "out"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = ("L", "t_end", "dt", "cfl", "epsilon", "w_min", "w_max")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        for name in ("d", "M", "N", "realizations", "n_samples"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.M < 4:
            raise ConfigError("M must be at least 4")
        if self.n_samples < 2:
            raise ConfigError("n_samples must be at least 2")
        if self.lam < 0 or self.r < 0:
            raise ConfigError("kernel parameters lam and r must be non-negative")
        if self.sigma < 0:
            raise ConfigError("sigma must be non-negative")
        if self.w_min > self.w_max:
            raise ConfigError("w_min must not exceed w_max")
        if self.x_low >= self.x_high or self.v_low > self.v_high:
            raise ConfigError("sampling boxes must have low < high")
        if self.weight_mode not in WEIGHT_MODES:
            raise ConfigError(f"weight_mode must be one of {WEIGHT_MODES}")
        if self.position_law not in POSITION_LAWS:
            raise ConfigError(f"position_law must be one of {POSITION_LAWS}")
        if (self.split_c_a is None) != (self.split_theta is None):
            raise ConfigError("split_c_a and split_theta must be given together")
        if self.split_c_a is not None and (self.split_c_a <= 0 or self.split_theta < 0):
            raise ConfigError("explicit split needs split_c_a > 0 and split_theta >= 0")
        if self.von_mises_k < 0:
            raise ConfigError("von_mises_k must be non-negative")
        if self.reg_W < 0 or (self.reg_V is not None and self.reg_V < 0):
            raise ConfigError("regularisation constants must be non-negative")

    @property
    def torus(self) -> Torus:
        return Torus(self.d, self.L)

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.torus, self.M)

    def sample_times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.n_samples)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path: str | Path) -> "ScenarioConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a flat JSON object")
        return cls.from_dict(data)

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def effective_weight_rate(self) -> float:
        return self.lam / 2 if self.weight_rate is None else self.weight_rate

    def effective_rho_min(self) -> float:
        return 1e-6 / self.L if self.rho_min is None else self.rho_min

    def effective_rho_floor(self) -> float:
        return 1e-8 / self.L ** self.d if self.rho_floor is None else self.rho_floor


def derive_rng(master_seed: int, *path: int) -> np.random.Generator:
    """Child generator for ``(master_seed, *path)``.

    The rule is ``SeedSequence(entropy=master_seed, spawn_key=path)`` feeding
    PCG64; it is stable across runs and machines.  Realization ``r`` of sweep
    point ``i`` uses ``path = (i, r)``.
    """
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=tuple(int(p) for p in path))
    return np.random.default_rng(seq)
