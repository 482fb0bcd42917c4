"""
Experiment configuration for urfdyn.

An experiment is described by a single JSON document (see DEFAULT_CONFIG for
every key). Values are resolved with a four-tier priority:

    Command-line flag > Environment Variable > Config File > Default Value

  - Defaults: DEFAULT_CONFIG below; enough to run a small Van der Pol study
    with no config file at all.
  - Config file: passed with --config or named by URFDYN_CONFIG. A manifest
    written by a previous run is accepted too (its "config" block is used),
    which is how runs are reproduced.
  - Environment variables: URFDYN_OUTPUT_DIR, URFDYN_SEED and URFDYN_JOBS
    override the file for one-off runs, e.g. `URFDYN_SEED=3 urfdyn generate`.
  - Flags: --out, --seed and --jobs win over everything.

Several defaults were never pinned down by the experiments this package
reproduces (feature lengthscale, noise level, integrator step, credible level,
iteration cap, tolerance, tube size). They are listed in UNVALIDATED_DEFAULTS
and every manifest records whether the user set them or the default was used.

The `load_dotenv()` call at import reads a `.env` file from the working
directory into os.environ, so the URFDYN_* variables can live there.
"""

import copy
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from dotenv import load_dotenv

from .console import console
from .dynamics import TubeMode
from .errors import ConfigError
from .features import FeatureKind, FeatureSpec
from .systems import (
    IntegratorMethod,
    IntegratorSpec,
    ReferenceSystem,
    RolloutConfig,
    SystemKind,
    check_compatible,
    default_cost_kind,
    default_initial_state,
    default_integrator,
    make_system,
    observe,
)
from .worstcase import CostKind, Direction, Schedule, SolverConfig

load_dotenv()

DEFAULT_CONFIG: dict[str, Any] = {
    "system": {"kind": "van_der_pol", "seed": 0},
    # method null -> the system's own integrator (discrete map, RK4, semi-implicit Euler)
    "integrator": {"method": None, "dt": 0.05},
    "rollouts": {"num_rollouts": 25, "length": 50, "noise_std": 0.01},
    "features": {"kind": "fourier", "count": 200, "lengthscale": 1.0},
    "pca": {"enabled": True, "reduced_dim": 50},
    "alpha": 0.95,
    "certainty_equivalent": False,
    # null -> quadratic, or pendulum-upright for the pendulum
    "cost": None,
    "solver": {
        "directions": ["worst", "best"],
        "horizon": 50,
        "outer_iterations": 200,
        "schedule": "fw_standard",
        "schedules": ["fw_standard", "full_step", "constant"],
        "tol": 1e-8,
        # null -> the system's fixed test initial state, native coordinates
        "x0": None,
    },
    "tube": {"num_samples": 30, "mode": "fixed-weight"},
    "sweep": {"axis": "num_rollouts", "values": [5, 25, 100, 200], "seeds": [0, 1, 2]},
    "output_dir": "runs/default",
    "seed": 0,
}

# Dotted keys whose defaults are our own choice rather than a reported value.
UNVALIDATED_DEFAULTS = (
    "features.lengthscale",
    "rollouts.noise_std",
    "integrator.dt",
    "alpha",
    "solver.outer_iterations",
    "solver.tol",
    "tube.num_samples",
)

SWEEP_AXES = ("num_rollouts", "alpha", "schedule")

# Independent random streams derived from the global seed.
SEED_STREAMS = {"data": 1, "features": 2, "tube": 3}


def get_setting(key: str, default: str) -> str:
    """Environment variable if set and non-empty, else `default`."""
    env_val = os.getenv(key)
    if env_val:
        return env_val
    return default


def get_int_setting(key: str, default: int) -> int:
    """Integer environment setting; warns and falls back to `default` on garbage."""
    value = get_setting(key, str(default))
    try:
        return int(value)
    except ValueError:
        console.print(
            f"[yellow]Warning: Invalid integer value for {key}: {value}, using default {default}[/yellow]"
        )
        return default


def derive_seed(global_seed: int, stream: str) -> int:
    """Deterministic 64-bit seed for one named random stream."""
    sequence = np.random.SeedSequence([global_seed, SEED_STREAMS[stream]])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def deep_merge(base: dict[str, Any], update: dict[str, Any]) -> dict[str, Any]:
    """Recursively overlay `update` on a copy of `base`."""
    merged = copy.deepcopy(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _lookup(document: dict[str, Any], dotted: str) -> tuple[bool, Any]:
    node: Any = document
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            return False, None
        node = node[part]
    return True, node


def provenance(user_document: dict[str, Any]) -> dict[str, str]:
    """"user" or "default-unvalidated" for every key in UNVALIDATED_DEFAULTS."""
    return {
        key: "user" if _lookup(user_document, key)[0] else "default-unvalidated"
        for key in UNVALIDATED_DEFAULTS
    }


def read_config_file(path: Path | None) -> dict[str, Any]:
    """User document from a config file or manifest; {} when no path is given.

    Raises:
        ConfigError: the file is missing, not JSON, or not a JSON object.
    """
    if path is None:
        return {}
    try:
        with open(path) as f:
            document = json.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"config: file not found: {path}") from e
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"config: cannot read {path}: {e}") from e
    if not isinstance(document, dict):
        raise ConfigError(f"config: {path} must contain a JSON object")
    # Manifests embed the resolved config.
    if isinstance(document.get("config"), dict) and "provenance" in document:
        user = document.get("user_config", document["config"])
        return user if isinstance(user, dict) else document["config"]
    return document


def _section(document: dict[str, Any], name: str) -> dict[str, Any]:
    value = document.get(name)
    if not isinstance(value, dict):
        raise ConfigError(f"{name}: expected an object, got {value!r}")
    return value


def _number(value: Any, field_name: str, kind: type = float) -> Any:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{field_name}: expected a number, got {value!r}")
    if kind is int:
        if int(value) != value:
            raise ConfigError(f"{field_name}: expected an integer, got {value!r}")
        return int(value)
    return float(value)


@dataclass(frozen=True)
class PcaSettings:
    enabled: bool
    reduced_dim: int


@dataclass(frozen=True)
class SolverSettings:
    directions: tuple[Direction, ...]
    horizon: int
    outer_iterations: int
    schedule: Schedule
    schedules: tuple[Schedule, ...]
    tol: float
    x0: tuple[float, ...] | None = None


@dataclass(frozen=True)
class TubeSettings:
    num_samples: int
    mode: TubeMode


@dataclass(frozen=True)
class SweepSettings:
    axis: str
    values: tuple[Any, ...]
    seeds: tuple[int, ...]


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, immutable view of one experiment document.

    `document` is the fully merged JSON form (what the manifest echoes) and
    `user_document` the part the user actually supplied.
    """

    system_kind: SystemKind
    system_seed: int
    integrator_method: IntegratorMethod | None
    dt: float
    num_rollouts: int
    rollout_length: int
    noise_std: float
    feature_kind: FeatureKind
    feature_count: int
    lengthscale: float
    pca: PcaSettings
    alpha: float
    certainty_equivalent: bool
    cost_kind: CostKind | None
    solver: SolverSettings
    tube: TubeSettings
    sweep: SweepSettings
    output_dir: Path
    seed: int
    document: dict[str, Any] = field(compare=False, repr=False)
    user_document: dict[str, Any] = field(compare=False, repr=False)

    @property
    def reduced_dim(self) -> int | None:
        return self.pca.reduced_dim if self.pca.enabled else None

    def make_system(self) -> ReferenceSystem:
        return make_system(self.system_kind, self.system_seed)

    def integrator(self, system: ReferenceSystem) -> IntegratorSpec:
        if self.integrator_method is None:
            return default_integrator(system, self.dt)
        integrator = IntegratorSpec(method=self.integrator_method, dt=self.dt)
        check_compatible(system, integrator)
        return integrator

    def rollout_config(self) -> RolloutConfig:
        return RolloutConfig(
            num_rollouts=self.num_rollouts,
            length=self.rollout_length,
            noise_std=self.noise_std,
            seed=derive_seed(self.seed, "data"),
        )

    def feature_spec(self, input_dim: int) -> FeatureSpec:
        return FeatureSpec(
            kind=self.feature_kind,
            count=self.feature_count,
            input_dim=input_dim,
            lengthscale=self.lengthscale,
            seed=derive_seed(self.seed, "features"),
        )

    @property
    def tube_seed(self) -> int:
        return derive_seed(self.seed, "tube")

    def resolved_cost_kind(self, system: ReferenceSystem) -> CostKind:
        return self.cost_kind or default_cost_kind(system)

    def native_x0(self, system: ReferenceSystem) -> np.ndarray:
        if self.solver.x0 is None:
            return default_initial_state(system)
        x0 = np.asarray(self.solver.x0, dtype=float)
        if x0.shape != (system.state_dim,):
            raise ConfigError(
                f"solver.x0: expected {system.state_dim} native coordinates, got {len(x0)}"
            )
        return x0

    def solver_config(
        self,
        system: ReferenceSystem,
        direction: Direction = Direction.WORST,
        schedule: Schedule | None = None,
    ) -> SolverConfig:
        """Solver settings with x0 mapped into the learned coordinates."""
        return SolverConfig(
            x0=observe(system, self.native_x0(system)),
            horizon=self.solver.horizon,
            direction=direction,
            outer_iterations=self.solver.outer_iterations,
            schedule=schedule or self.solver.schedule,
            tol=self.solver.tol,
        )

    def with_overrides(self, overrides: dict[str, Any]) -> "ExperimentConfig":
        """New config with `overrides` deep-merged over the user document."""
        return build_experiment_config(deep_merge(self.user_document, overrides))


def _enum(enum_type: Any, value: Any, field_name: str) -> Any:
    try:
        return enum_type(value)
    except ValueError as e:
        allowed = ", ".join(str(member) for member in enum_type)
        raise ConfigError(f"{field_name}: {value!r} is not one of {allowed}") from e


def _validate(document: dict[str, Any], user_document: dict[str, Any]) -> ExperimentConfig:
    unknown = set(document) - set(DEFAULT_CONFIG)
    if unknown:
        raise ConfigError(f"config: unknown keys {sorted(unknown)}")

    system = _section(document, "system")
    integrator = _section(document, "integrator")
    rollouts = _section(document, "rollouts")
    features = _section(document, "features")
    pca = _section(document, "pca")
    solver = _section(document, "solver")
    tube = _section(document, "tube")
    sweep = _section(document, "sweep")

    feature_count = _number(features.get("count"), "features.count", int)
    pca_settings = PcaSettings(
        enabled=bool(pca.get("enabled")),
        reduced_dim=_number(pca.get("reduced_dim"), "pca.reduced_dim", int),
    )
    if pca_settings.enabled and not 1 <= pca_settings.reduced_dim < feature_count:
        raise ConfigError(
            f"pca.reduced_dim: must satisfy 1 <= L̂ < L={feature_count}, got {pca_settings.reduced_dim}"
        )

    alpha = _number(document.get("alpha"), "alpha")
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"alpha: must lie in (0, 1), got {alpha}")

    directions = tuple(_enum(Direction, d, "solver.directions") for d in solver.get("directions", []))
    if not directions:
        raise ConfigError("solver.directions: at least one direction is required")
    schedules = tuple(_enum(Schedule, s, "solver.schedules") for s in solver.get("schedules", []))
    x0 = solver.get("x0")
    if x0 is not None:
        if not isinstance(x0, list):
            raise ConfigError(f"solver.x0: expected a list of numbers, got {x0!r}")
        x0 = tuple(_number(v, "solver.x0") for v in x0)
    solver_settings = SolverSettings(
        directions=directions,
        horizon=_number(solver.get("horizon"), "solver.horizon", int),
        outer_iterations=_number(solver.get("outer_iterations"), "solver.outer_iterations", int),
        schedule=_enum(Schedule, solver.get("schedule"), "solver.schedule"),
        schedules=schedules,
        tol=_number(solver.get("tol"), "solver.tol"),
        x0=x0,
    )
    if solver_settings.horizon < 1:
        raise ConfigError(f"solver.horizon: must be >= 1, got {solver_settings.horizon}")
    if solver_settings.outer_iterations < 1:
        raise ConfigError(
            f"solver.outer_iterations: must be >= 1, got {solver_settings.outer_iterations}"
        )
    if solver_settings.tol < 0:
        raise ConfigError(f"solver.tol: must be >= 0, got {solver_settings.tol}")

    tube_settings = TubeSettings(
        num_samples=_number(tube.get("num_samples"), "tube.num_samples", int),
        mode=_enum(TubeMode, tube.get("mode"), "tube.mode"),
    )
    if tube_settings.num_samples < 1:
        raise ConfigError(f"tube.num_samples: must be >= 1, got {tube_settings.num_samples}")

    axis = sweep.get("axis")
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep.axis: {axis!r} is not one of {', '.join(SWEEP_AXES)}")
    values = sweep.get("values")
    if not isinstance(values, list) or not values:
        raise ConfigError("sweep.values: expected a non-empty list")
    seeds = sweep.get("seeds")
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("sweep.seeds: expected a non-empty list")

    cost = document.get("cost")
    method = integrator.get("method")
    seed = _number(document.get("seed"), "seed", int)
    if seed < 0:
        raise ConfigError(f"seed: must be a non-negative integer, got {seed}")

    config = ExperimentConfig(
        system_kind=_enum(SystemKind, system.get("kind"), "system.kind"),
        system_seed=_number(system.get("seed", 0), "system.seed", int),
        integrator_method=None if method is None else _enum(IntegratorMethod, method, "integrator.method"),
        dt=_number(integrator.get("dt"), "integrator.dt"),
        num_rollouts=_number(rollouts.get("num_rollouts"), "rollouts.num_rollouts", int),
        rollout_length=_number(rollouts.get("length"), "rollouts.length", int),
        noise_std=_number(rollouts.get("noise_std"), "rollouts.noise_std"),
        feature_kind=_enum(FeatureKind, features.get("kind"), "features.kind"),
        feature_count=feature_count,
        lengthscale=_number(features.get("lengthscale"), "features.lengthscale"),
        pca=pca_settings,
        alpha=alpha,
        certainty_equivalent=bool(document.get("certainty_equivalent")),
        cost_kind=None if cost is None else _enum(CostKind, cost, "cost"),
        solver=solver_settings,
        tube=tube_settings,
        sweep=SweepSettings(axis=axis, values=tuple(values), seeds=tuple(int(s) for s in seeds)),
        output_dir=Path(str(document.get("output_dir"))),
        seed=seed,
        document=document,
        user_document=user_document,
    )
    # Sub-configs validate themselves; build them once so errors surface here.
    system_obj = config.make_system()
    config.integrator(system_obj)
    config.rollout_config()
    config.feature_spec(system_obj.learned_dim)
    config.solver_config(system_obj)
    return config


def build_experiment_config(user_document: dict[str, Any]) -> ExperimentConfig:
    """Merge a user document over DEFAULT_CONFIG and validate it."""
    return _validate(deep_merge(DEFAULT_CONFIG, user_document), user_document)


def load_experiment_config(
    path: Path | None = None, overrides: dict[str, Any] | None = None
) -> ExperimentConfig:
    """Resolve the experiment config from flags, environment, file and defaults.

    Args:
        path: Config file or manifest; URFDYN_CONFIG is used when None.
        overrides: Flag values (nested like the document) that beat everything.

    Raises:
        ConfigError: unreadable file or invalid value; the message names the field.
    """
    if path is None and os.getenv("URFDYN_CONFIG"):
        path = Path(get_setting("URFDYN_CONFIG", ""))
    user = read_config_file(path)

    env: dict[str, Any] = {}
    if os.getenv("URFDYN_OUTPUT_DIR"):
        env["output_dir"] = get_setting("URFDYN_OUTPUT_DIR", DEFAULT_CONFIG["output_dir"])
    if os.getenv("URFDYN_SEED"):
        env["seed"] = get_int_setting("URFDYN_SEED", user.get("seed", DEFAULT_CONFIG["seed"]))

    user = deep_merge(deep_merge(user, env), overrides or {})
    return build_experiment_config(user)
