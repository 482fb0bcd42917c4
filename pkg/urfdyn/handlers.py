"""
Command handlers for the urfdyn CLI.

One cmd_* function per subcommand in commands.COMMANDS. Each takes a
validated ExperimentConfig, does its work through the library modules, writes
its artifacts below `config.output_dir`, records them (with SHA-256 digests)
in manifest.json and returns the list of files written.

Handlers raise the package exceptions unchanged; main.py turns them into exit
codes. The `quiet` flag suppresses console summaries for sweep cells.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any

import numpy as np

from .config import ExperimentConfig, build_experiment_config, derive_seed, provenance
from .console import console
from .dynamics import (
    Trajectory,
    UrfModel,
    fit_urf_model,
    identity_nominal,
    residual_dataset,
    rollout_mean,
    sample_uncertainty_tube,
)
from .errors import DimensionError
from .features import evaluate
from .regression import predictive_variance
from .storage import (
    digests,
    ensure_dir,
    load_model_bundle,
    read_dataset_csv,
    save_json,
    save_model_bundle,
    update_manifest,
    write_dataset_csv,
    write_manifest_header,
    write_records,
    write_table,
    write_trajectory_csv,
)
from .systems import (
    MIN_NOISE_STD,
    ReferenceSystem,
    generate_dataset,
    make_cost,
    observe,
    simulate,
    system_to_dict,
)
from .utils import get_version, print_costs, print_written
from .worstcase import CostFunction, Direction, cost_bounds, solve, solve_exact, trajectory_cost

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ["axis_value", "seed", "best", "mean", "worst", "true", "interval_width"]


def _record(config: ExperimentConfig, command: str, files: list[Path], extra: dict[str, Any] | None = None) -> Path:
    """Write the manifest header and this command's section."""
    root = config.output_dir
    write_manifest_header(
        root,
        {
            "config": config.document,
            "user_config": config.user_document,
            "provenance": provenance(config.user_document),
            "seeds": {
                "global": config.seed,
                "system": config.system_seed,
                "data": derive_seed(config.seed, "data"),
                "features": derive_seed(config.seed, "features"),
                "tube": derive_seed(config.seed, "tube"),
            },
            "version": get_version(),
        },
    )
    return update_manifest(root, command, {"files": digests(root, files), **(extra or {})})


def _load_model(config: ExperimentConfig) -> tuple[UrfModel, ReferenceSystem]:
    model, _ = load_model_bundle(config.output_dir / "model.json")
    system = config.make_system()
    if model.state_dim != system.learned_dim:
        raise DimensionError(
            f"model.json has state dimension {model.state_dim}, {system.kind} needs {system.learned_dim}"
        )
    return model, system


def _true_trajectory(config: ExperimentConfig, system: ReferenceSystem) -> Trajectory:
    """Ground truth from the solver's initial state, in learned coordinates."""
    states = simulate(system, config.integrator(system), config.native_x0(system), config.solver.horizon)
    return Trajectory(states=observe(system, states))


def _write_tube(directory: Path, tube: list[Trajectory]) -> list[Path]:
    return [write_trajectory_csv(directory / f"sample_{i:03d}.csv", traj) for i, traj in enumerate(tube)]


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def cmd_generate(config: ExperimentConfig, quiet: bool = False) -> list[Path]:
    """Simulate rollouts and write dataset.csv plus one CSV per rollout."""
    root = ensure_dir(config.output_dir)
    system = config.make_system()
    data = generate_dataset(system, config.integrator(system), config.rollout_config())

    files = [write_dataset_csv(root / "dataset.csv", data.dataset.inputs, data.successors)]
    files += [
        write_trajectory_csv(root / "rollouts" / f"rollout_{i:03d}.csv", states)
        for i, states in enumerate(data.rollouts)
    ]
    _record(config, "generate", files, {"system": system_to_dict(system), "transitions": data.dataset.size})
    if not quiet:
        console.print(f"[green]✓ {data.dataset.size} transitions from {config.num_rollouts} rollouts[/green]")
        print_written(root, files[:1])
        console.print(f"[dim]{len(data.rollouts)} rollout files in {root / 'rollouts'}[/dim]")
    return files


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def cmd_fit(config: ExperimentConfig, quiet: bool = False) -> list[Path]:
    """Fit a URF model to dataset.csv and write the model.json bundle."""
    root = config.output_dir
    system = config.make_system()
    inputs, successors = read_dataset_csv(root / "dataset.csv", state_dim=system.learned_dim)
    dim = system.learned_dim
    noise_std = max(config.noise_std, MIN_NOISE_STD)
    dataset = residual_dataset(inputs, successors, identity_nominal(dim), noise_std)
    model = fit_urf_model(
        dataset,
        config.feature_spec(dim),
        config.alpha,
        reduced_dim=config.reduced_dim,
        certainty_equivalent=config.certainty_equivalent,
    )

    energy = model.features.retained_energy()
    conditions = [post.condition_number() for post in model.posteriors]
    metadata = {
        "system": system_to_dict(system),
        "alpha": config.alpha,
        "noise_std": noise_std,
        "transitions": dataset.size,
        "retained_energy": energy,
        "condition_numbers": conditions,
    }
    files = [save_model_bundle(model, root / "model.json", metadata)]
    _record(config, "fit", files, {"retained_energy": energy, "condition_numbers": conditions})
    if not quiet:
        console.print(
            f"[green]✓ Fitted {model.state_dim} outputs on {dataset.size} transitions "
            f"with {model.feature_dim} features[/green]"
        )
        if energy is not None:
            console.print(f"[dim]PCA retained energy: {energy:.4f}[/dim]")
        print_written(root, files)
    return files


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------


def one_step_std(model: UrfModel, trajectory: Trajectory) -> np.ndarray:
    """Predictive std of every output along a trajectory, shape (N, p)."""
    phis = [evaluate(model.features, x) for x in trajectory.states[:-1]]
    return np.array(
        [[np.sqrt(predictive_variance(post, phi)) for post in model.posteriors] for phi in phis]
    )


def cmd_predict(config: ExperimentConfig, quiet: bool = False) -> list[Path]:
    """Mean rollout, uncertainty tube, ground truth and one-step predictive std."""
    root = config.output_dir
    out = ensure_dir(root / "predict")
    model, system = _load_model(config)
    x0 = observe(system, config.native_x0(system))
    horizon = config.solver.horizon

    mean = rollout_mean(model, x0, horizon)
    true = _true_trajectory(config, system)
    tube = sample_uncertainty_tube(
        model, x0, horizon, config.tube.num_samples, config.tube.mode, seed=config.tube_seed
    )
    std = one_step_std(model, mean)
    rmse = float(np.sqrt(np.mean((mean.states - true.states) ** 2)))

    files = [write_trajectory_csv(out / "mean.csv", mean), write_trajectory_csv(out / "true.csv", true)]
    files += _write_tube(out / "tube", tube)
    index = np.arange(horizon, dtype=float)[:, None]
    files.append(
        write_table(
            out / "predictive_std.csv",
            ["n"] + [f"std{d}" for d in range(model.state_dim)],
            np.hstack([index, std]),
        )
    )
    _record(config, "predict", files, {"rmse": rmse})
    if not quiet:
        console.print(f"[green]✓ Mean rollout RMSE against the true system: {rmse:.6g}[/green]")
        print_written(root, files[:2] + files[-1:])
    return files


# ---------------------------------------------------------------------------
# worstcase
# ---------------------------------------------------------------------------


def _trace_name(stem: str, direction: Direction) -> str:
    return f"trace_{stem}.csv" if direction is Direction.WORST else f"trace_{stem}_best.csv"


def _write_trace(filepath: Path, trace: list[float]) -> Path:
    rows = np.column_stack([np.arange(len(trace), dtype=float), np.asarray(trace)])
    return write_table(filepath, ["iteration", "J"], rows)


def run_worstcase(config: ExperimentConfig) -> tuple[dict[str, Any], list[Path]]:
    """Solve, write every worstcase artifact and return (costs, files)."""
    root = config.output_dir
    out = ensure_dir(root / "worstcase")
    model, system = _load_model(config)
    cost: CostFunction = make_cost(config.resolved_cost_kind(system))
    base = config.solver_config(system)

    bounds = cost_bounds(model, cost, base)
    true = _true_trajectory(config, system)
    true_cost = trajectory_cost(cost, true)

    files = [
        write_trajectory_csv(out / "mean.csv", bounds.mean_trajectory),
        write_trajectory_csv(out / "worst.csv", bounds.worst_result.trajectory),
        write_trajectory_csv(out / "best.csv", bounds.best_result.trajectory),
        write_trajectory_csv(out / "true.csv", true),
        save_json(bounds.worst_result.to_dict("worst.csv"), out / "worst.json"),
        save_json(bounds.best_result.to_dict("best.csv"), out / "best.json"),
    ]

    per_schedule: dict[str, dict[str, float]] = {}
    monotone: dict[str, dict[str, bool]] = {}
    for schedule in config.solver.schedules or (config.solver.schedule,):
        per_schedule[str(schedule)] = {}
        monotone[str(schedule)] = {}
        for direction in config.solver.directions:
            if schedule is base.schedule:
                result = bounds.worst_result if direction is Direction.WORST else bounds.best_result
            else:
                result = solve(model, cost, config.solver_config(system, direction, schedule))
            files.append(_write_trace(out / _trace_name(str(schedule), direction), result.cost_trace))
            per_schedule[str(schedule)][str(direction)] = result.extreme_cost
            monotone[str(schedule)][str(direction)] = result.trace_monotone

    exact: dict[str, float] = {}
    for direction in config.solver.directions:
        result = solve_exact(model, cost, config.solver_config(system, direction))
        files.append(_write_trace(out / _trace_name("exact_pmp", direction), result.cost_trace))
        exact[str(direction)] = result.extreme_cost

    tube = sample_uncertainty_tube(
        model, base.x0, base.horizon, config.tube.num_samples, config.tube.mode, seed=config.tube_seed
    )
    files += _write_tube(out / "tube", tube)

    costs: dict[str, Any] = {
        "best": bounds.best,
        "mean": bounds.mean,
        "worst": bounds.worst,
        "true": true_cost,
        "interval_width": bounds.width,
        "certainty_equivalent": model.certainty_equivalent,
        "cost_kind": str(cost.kind),
        "schedule": str(base.schedule),
        "converged": {"worst": bounds.worst_result.converged, "best": bounds.best_result.converged},
        "iterations": {
            "worst": bounds.worst_result.iterations_used,
            "best": bounds.best_result.iterations_used,
        },
        "trace_monotone": {
            "worst": bounds.worst_result.trace_monotone,
            "best": bounds.best_result.trace_monotone,
        },
        "largest_setback": {
            "worst": bounds.worst_result.largest_setback,
            "best": bounds.best_result.largest_setback,
        },
        "incumbent_iteration": {
            "worst": bounds.worst_result.incumbent_iteration,
            "best": bounds.best_result.incumbent_iteration,
        },
        "schedules": per_schedule,
        "schedule_trace_monotone": monotone,
        "exact_pmp": exact,
    }
    files.insert(0, save_json(costs, out / "costs.json"))
    if not bounds.best <= true_cost <= bounds.worst:
        logger.warning(
            "true cost %.6g lies outside [%.6g, %.6g]", true_cost, bounds.best, bounds.worst
        )
    _record(config, "worstcase", files, {"costs": costs})
    return costs, files


def cmd_worstcase(config: ExperimentConfig, quiet: bool = False) -> list[Path]:
    """Best/mean/worst cost bounds, per-schedule traces and trajectories."""
    costs, files = run_worstcase(config)
    if not quiet:
        print_costs({key: costs[key] for key in ("best", "mean", "worst", "true")})
        print_written(config.output_dir, [path for path in files if path.suffix == ".json"])
    return files


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def _axis_override(axis: str, value: Any) -> dict[str, Any]:
    if axis == "num_rollouts":
        return {"rollouts": {"num_rollouts": int(value)}}
    if axis == "alpha":
        return {"alpha": float(value)}
    return {"solver": {"schedule": str(value), "schedules": [str(value)]}}


def sweep_cells(config: ExperimentConfig) -> list[tuple[Any, int, dict[str, Any]]]:
    """(axis value, seed, user document) for every cell of the sweep."""
    root = config.output_dir / "sweep"
    cells = []
    for value in config.sweep.values:
        for seed in config.sweep.seeds:
            overrides = _axis_override(config.sweep.axis, value)
            overrides["seed"] = seed
            overrides["output_dir"] = str(root / f"{config.sweep.axis}_{value}" / f"seed_{seed}")
            cells.append((value, seed, config.with_overrides(overrides).user_document))
    return cells


def run_cell(document: dict[str, Any]) -> dict[str, Any]:
    """generate -> fit -> worstcase for one cell; safe to run in a worker process."""
    config = build_experiment_config(document)
    cmd_generate(config, quiet=True)
    cmd_fit(config, quiet=True)
    costs, _ = run_worstcase(config)
    return costs


def cmd_sweep(config: ExperimentConfig, jobs: int = 1, quiet: bool = False) -> list[Path]:
    """Repeat the pipeline over the sweep axis and aggregate sweep.csv."""
    root = ensure_dir(config.output_dir / "sweep")
    cells = sweep_cells(config)
    documents = [document for _, _, document in cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_cell, documents))
    else:
        results = [run_cell(document) for document in documents]

    records = []
    for (value, seed, _), costs in zip(cells, results, strict=True):
        records.append(
            [value, seed, costs["best"], costs["mean"], costs["worst"], costs["true"], costs["interval_width"]]
        )
        logger.info(
            "%s=%s seed=%d: best=%.6g worst=%.6g true=%.6g",
            config.sweep.axis, value, seed, costs["best"], costs["worst"], costs["true"],
        )
    files = [write_records(root / "sweep.csv", SWEEP_COLUMNS, records)]

    summary = summarize_sweep(config, cells, results)
    _record(config, "sweep", files, summary)
    if not quiet:
        for value, width in summary["mean_interval_width"].items():
            console.print(f"  [cyan]{config.sweep.axis}={value}[/cyan]  mean interval width {width:.6g}")
        print_written(config.output_dir, files)
    return files


def summarize_sweep(
    config: ExperimentConfig, cells: list[tuple[Any, int, dict[str, Any]]], results: list[dict[str, Any]]
) -> dict[str, Any]:
    """Mean interval width per axis value and the recorded trend checks."""
    widths: dict[str, list[float]] = {}
    worst: dict[str, list[float]] = {}
    contained = True
    monotone = True
    setback = 0.0
    for (value, _, _), costs in zip(cells, results, strict=True):
        monotone = monotone and costs["trace_monotone"]["worst"]
        setback = max(setback, costs["largest_setback"]["worst"])
        widths.setdefault(str(value), []).append(costs["interval_width"])
        worst.setdefault(str(value), []).append(costs["worst"])
        contained = contained and costs["best"] <= costs["true"] <= costs["worst"]

    mean_width = {value: float(np.mean(w)) for value, w in widths.items()}
    # Monotonicity is recorded only; it never fails a sweep.
    checks: dict[str, Any] = {
        "true_cost_contained": contained,
        "worst_trace_monotone": monotone,
        "largest_worst_trace_setback": setback,
    }
    if config.sweep.axis == "num_rollouts":
        ordered = list(mean_width.values())
        checks["interval_width_non_increasing"] = all(
            later <= earlier for earlier, later in zip(ordered, ordered[1:], strict=False)
        )
    if config.sweep.axis == "schedule" and {"fw_standard", "constant"} <= set(worst):
        checks["fw_standard_worst_at_least_constant"] = bool(
            np.mean(worst["fw_standard"]) >= np.mean(worst["constant"])
        )
    return {"mean_interval_width": mean_width, "checks": checks}
