"""Flat key-value run configuration.

The on-disk format is line-oriented ``key = value`` with ``#`` comments,
chosen so configs stay diff-friendly and language-agnostic.  Parsing is
strict: unknown keys are hard errors, and every rejection names the
violated validation rule (the parenthesized rule codes used throughout the
docs, e.g. ``(hpzero)`` for nonnegative initial potential data).

See docs/config.md for the full key table and defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from . import constitutive as laws_mod
from .mesh import Grid, ScalarField, field_of, read_snapshot
from .stepper import SolverConfig


class ConfigError(ValueError):
    """Malformed or invalid configuration text."""


_POTENTIALS = ("clamp", "log")
_MOBILITIES = ("constant", "tanhpow")
_COUPLINGS = ("linear", "constant")
_STUDIES = ("", "tau_refinement", "homogeneous_oracle", "degenerate_demo",
            "perturbation")


@dataclass(frozen=True)
class Config:
    """Everything one run (or one study) needs, as plain values."""

    # grid
    dim: int = 1
    n: int = 32
    length: float = 1.0
    # time discretization
    T: float = 1.0
    N: int = 64
    # constitutive selections
    potential: str = "clamp"
    alpha1: float = 0.5
    alpha2: float = 2.0
    mobility: str = "constant"
    kappa0: float = 1.0
    m: float = 2.0
    epsilon: float = 1.0
    delta: float = 1.0
    coupling: str = "linear"
    g0: float = 0.0
    # solver controls
    yosida_lambda: float = 0.0       # 0 = tie to the time step
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    linear_tol: float = 1e-11
    linear_max_iter: int = 0         # 0 = automatic cap
    sign_split_reaction: bool = True
    mobility_floor_tau: float = -1.0  # negative = tie to the time step
    face_average: str = "arithmetic"
    # initial data recipes
    mu0: tuple = ("constant", 1.0)
    rho0: tuple = ("constant", 0.5)
    # output
    snapshot_stride: int = 1
    # optional study block
    study: str = ""
    study_values: tuple = ()
    study_reference: int = 512
    perturb_amplitude: float = 1e-6
    perturb_seed: int = 0

    @property
    def tau(self) -> float:
        return self.T / self.N if self.N > 0 else 0.0


_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def _parse_bool(raw: str, key: str, lineno: int) -> bool:
    low = raw.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"line {lineno}: key '{key}' expects a boolean, got {raw!r}")


def _parse_recipe(raw: str, key: str, lineno: int) -> tuple:
    parts = raw.split()
    if not parts:
        raise ConfigError(f"line {lineno}: empty initial-data recipe for '{key}'")
    kind = parts[0]
    if kind == "constant":
        if len(parts) != 2:
            raise ConfigError(f"line {lineno}: '{key} = constant <value>'")
        return ("constant", float(parts[1]))
    if kind == "bump":
        if len(parts) != 4:
            raise ConfigError(
                f"line {lineno}: '{key} = bump <center> <radius> <amplitude>'")
        return ("bump", float(parts[1]), float(parts[2]), float(parts[3]))
    if kind == "cosine":
        if len(parts) != 3:
            raise ConfigError(
                f"line {lineno}: '{key} = cosine <mean> <amplitude>'")
        return ("cosine", float(parts[1]), float(parts[2]))
    if kind == "file":
        if len(parts) != 2:
            raise ConfigError(f"line {lineno}: '{key} = file <path>'")
        return ("file", parts[1])
    raise ConfigError(
        f"line {lineno}: unknown initial-data recipe {kind!r} for '{key}'")


def parse_config(text: str) -> Config:
    """Parse and validate configuration text; reject anything off-spec."""
    overrides = {}
    explicit_tau = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key == "tau":
            explicit_tau = (float(raw), lineno)
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in ("mu0", "rho0"):
            overrides[key] = _parse_recipe(raw, key, lineno)
            continue
        ftype = _FIELD_TYPES[key]
        try:
            if ftype == "int":
                overrides[key] = int(raw)
            elif ftype == "float":
                overrides[key] = float(raw)
            elif ftype == "bool":
                overrides[key] = _parse_bool(raw, key, lineno)
            elif ftype == "tuple":
                overrides[key] = tuple(float(v) for v in raw.split())
            else:
                overrides[key] = raw
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    config = Config(**overrides)
    if explicit_tau is not None:
        value, lineno = explicit_tau
        if config.N <= 0 or value != config.T / config.N:
            raise ConfigError(
                f"line {lineno}: violates tau = T/N: tau = {value!r} "
                f"but T/N = {config.T / config.N if config.N else float('nan')!r}")
    validate_config(config)
    return config


def validate_config(config: Config) -> None:
    """Structural and data hypotheses, checked before anything runs."""
    if config.dim not in (1, 2):
        raise ConfigError(f"dim must be 1 or 2, got {config.dim}")
    if config.n < 3:
        raise ConfigError(f"n must be at least 3, got {config.n}")
    if not config.length > 0:
        raise ConfigError(f"length must be positive, got {config.length}")
    if config.T < 0:
        raise ConfigError("T must be nonnegative")
    if config.N < 0:
        raise ConfigError("N must be nonnegative")
    if config.N == 0 and config.T != 0:
        raise ConfigError("N = 0 is admitted only with T = 0")
    if config.potential not in _POTENTIALS:
        raise ConfigError(f"potential must be one of {_POTENTIALS}")
    if config.mobility not in _MOBILITIES:
        raise ConfigError(f"mobility must be one of {_MOBILITIES}")
    if config.coupling not in _COUPLINGS:
        raise ConfigError(f"coupling must be one of {_COUPLINGS}")
    if config.potential == "log" and not config.alpha1 > 0:
        raise ConfigError("alpha1 must be positive for the log potential")
    if not config.kappa0 > 0:
        raise ConfigError(
            f"violates (hpcost): kappa0 must be positive, got {config.kappa0}")
    if config.mobility == "tanhpow" and not config.m > 1:
        raise ConfigError("violates (hpcost): tanh-power mobility needs m > 1")
    if not (config.epsilon > 0 and config.delta > 0):
        raise ConfigError("epsilon and delta must be positive")
    if config.g0 < 0:
        raise ConfigError(
            f"violates (hpfg): the coupling must be nonnegative, g0 = {config.g0}")
    if config.mu0[0] == "constant" and config.mu0[1] < 0:
        raise ConfigError(
            f"violates (hpzero): mu0 has negative values ({config.mu0[1]:g})")
    if config.mu0[0] == "bump" and config.mu0[3] < 0:
        raise ConfigError("violates (hpzero): mu0 bump amplitude is negative")
    if config.mu0[0] == "cosine" and config.mu0[1] - abs(config.mu0[2]) < 0:
        raise ConfigError(
            "violates (hpzero): mu0 cosine profile dips below zero")
    if config.face_average not in ("arithmetic", "harmonic"):
        raise ConfigError("face_average must be arithmetic or harmonic")
    if config.snapshot_stride < 0:
        raise ConfigError("snapshot_stride must be nonnegative")
    if config.study not in _STUDIES:
        raise ConfigError(f"study must be one of {_STUDIES[1:]} or absent")
    if config.study and config.study != "homogeneous_oracle":
        if len(config.study_values) < 1:
            raise ConfigError("study block needs study_values")


def render_config(config: Config) -> str:
    """Canonical text for a config; parse(render(c)) == c."""
    lines = []
    for f in fields(Config):
        value = getattr(config, f.name)
        if f.name in ("mu0", "rho0"):
            rendered = " ".join(
                part if isinstance(part, str) else f"{part:.17g}" for part in value)
        elif isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, float):
            rendered = f"{value:.17g}"
        elif isinstance(value, tuple):
            rendered = " ".join(f"{v:.17g}" for v in value)
        else:
            rendered = str(value)
        lines.append(f"{f.name} = {rendered}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# builders


def build_grid(config: Config) -> Grid:
    return Grid(config.dim, config.n, config.length)


def build_solver_config(config: Config) -> SolverConfig:
    return SolverConfig(
        T=config.T,
        n_steps=config.N,
        epsilon=config.epsilon,
        delta=config.delta,
        yosida_lambda=config.yosida_lambda if config.yosida_lambda > 0 else None,
        newton_tol=config.newton_tol,
        newton_max_iter=config.newton_max_iter,
        linear_tol=config.linear_tol,
        linear_max_iter=config.linear_max_iter or None,
        sign_split_reaction=config.sign_split_reaction,
        mobility_floor_tau=(config.mobility_floor_tau
                            if config.mobility_floor_tau >= 0 else None),
        face_average=config.face_average,
    )


def build_laws(config: Config) -> laws_mod.Laws:
    if config.potential == "clamp":
        potential = laws_mod.make_clamp_potential(config.alpha2)
    else:
        potential = laws_mod.make_log_potential(config.alpha1, config.alpha2)
    if config.coupling == "linear":
        coupling = laws_mod.make_linear_coupling(config.epsilon)
    else:
        coupling = laws_mod.make_constant_coupling(config.g0, config.epsilon)
    if config.mobility == "constant":
        mobility = laws_mod.make_constant_mobility(config.kappa0)
    else:
        mobility = laws_mod.make_tanh_power_mobility(config.m)
    return laws_mod.Laws(potential=potential, coupling=coupling,
                         mobility=mobility)


def build_field(recipe: tuple, grid: Grid) -> ScalarField:
    kind = recipe[0]
    if kind == "constant":
        return field_of(grid, recipe[1])
    if kind == "bump":
        center, radius, amplitude = recipe[1:]
        if grid.dim == 1:
            x = grid.coordinates()
            dist2 = (x - center) ** 2
        else:
            x, y = grid.coordinates()
            dist2 = (x - center) ** 2 + (y - center) ** 2
        profile = np.maximum(0.0, 1.0 - dist2 / radius ** 2) ** 2
        return field_of(grid, amplitude * profile)
    if kind == "cosine":
        mean, amplitude = recipe[1:]
        freq = np.pi / grid.length
        if grid.dim == 1:
            profile = np.cos(freq * grid.coordinates())
        else:
            x, y = grid.coordinates()
            profile = np.cos(freq * x) * np.cos(freq * y)
        return field_of(grid, mean + amplitude * profile)
    if kind == "file":
        field, _t = read_snapshot(recipe[1])
        if field.grid != grid:
            raise ConfigError(
                f"initial-data file {recipe[1]!r} was written for grid "
                f"{field.grid}, run uses {grid}")
        return field
    raise ConfigError(f"unknown initial-data recipe {kind!r}")


def build_run(config: Config):
    """Materialize (grid, solver config, laws, (mu0, rho0)) from a config."""
    grid = build_grid(config)
    cfg = build_solver_config(config)
    laws = build_laws(config)
    mu0 = build_field(config.mu0, grid)
    rho0 = build_field(config.rho0, grid)
    return grid, cfg, laws, (mu0, rho0)


def with_steps(config: Config, n_steps: int) -> Config:
    """Copy of the config with a different step count (same final time)."""
    return replace(config, N=n_steps)
