"""
Worst-case (and best-case) weight realizations of a URF model.

Given a stage cost c and a horizon N, the worst case maximizes the accumulated
cost J = Σ_{n=1..N} c(x_n) over weight sequences w_n ∈ W (the product of the
per-output ellipsoids); the best case minimizes it. Internally both are
minimizations of Ĵ = Σ ĉ(x_n) with ĉ = -c (worst) or ĉ = c (best), so callers
only ever see the user-facing cost c.

The solver is an indirect shooting method built on Pontryagin's minimum
principle. Each outer iteration runs:

  1. forward pass:  x_{n+1} = h(x_n) + W_n φ̂(x_n)
  2. backward pass: p_N = ∇ĉ(x_N),
                    p_n = ∇ĉ(x_n) + (∂h/∂x + W_n ∂φ̂/∂x)ᵀ p_{n+1}
  3. update:        w̄_{n,d} = argmin_{w ∈ W_d} p_{n+1,d} φ̂(x_n)ᵀ w   (closed form)
                    w_n ← w_n + γ_k (w̄_n - w_n)

Because the Hamiltonian ĉ(x) + pᵀ(h(x) + W φ̂(x)) is linear in W, the vector
φ̂(x_n) p_{n+1,d} is exactly ∇_{w_{n,d}} Ĵ, so step 3 is a Frank-Wolfe step on
Ĵ. With γ_k = 1 it coincides with exact Hamiltonian minimization
(`solve_exact`).

The nominal h stays in both passes: it shifts the Hamiltonian by a
W-independent term, but its Jacobian is part of the adjoint recursion.

Frank-Wolfe iterates on this nonconvex objective need not improve
monotonically, so a solve returns its incumbent: the weights, trajectory and
co-states of the most adverse (worst) or most favorable (best) trace entry.
The full trace and weight history stay available for diagnostics.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import Any

import numpy as np

from .dynamics import (
    Trajectory,
    UrfModel,
    rollout_mean,
    rollout_with_weights,
    step_with_weights,
    transition_jacobian,
)
from .errors import ConfigError, DimensionError, DivergenceError, NumericalError
from .features import evaluate
from .regression import UncertaintySet

logger = logging.getLogger(__name__)

# Below this Hamiltonian-gradient norm the minimizer falls back to the center.
DEGENERATE_GRADIENT = 1e-14
# Forward pass recomputed inside backward_pass must agree with the trajectory.
CONSISTENCY_TOL = 1e-9
FEASIBILITY_TOL = 1e-10
ORDERING_TOL = 1e-9
# Relative slack before a trace step counts as moving away from the target.
MONOTONE_TOL = 1e-9

ScalarFunction = Callable[[np.ndarray], float]
VectorFunction = Callable[[np.ndarray], np.ndarray]


class CostKind(StrEnum):
    QUADRATIC = "quadratic"
    PENDULUM_UPRIGHT = "pendulum-upright"
    CUSTOM = "custom"


@dataclass(frozen=True)
class CostFunction:
    """Stage cost c(x) with its gradient."""

    kind: CostKind
    value: ScalarFunction
    gradient: VectorFunction


class Direction(StrEnum):
    WORST = "worst"  # maximize J
    BEST = "best"  # minimize J


class Schedule(StrEnum):
    FW_STANDARD = "fw_standard"  # γ_k = 2 / (k + 2)
    FULL_STEP = "full_step"  # γ_k = 1
    CONSTANT = "constant"  # γ_k = 1 / F


def step_size(schedule: Schedule, k: int, outer_iterations: int) -> float:
    if schedule is Schedule.FW_STANDARD:
        return 2.0 / (k + 2.0)
    if schedule is Schedule.FULL_STEP:
        return 1.0
    return 1.0 / outer_iterations


@dataclass(frozen=True, eq=False)
class SolverConfig:
    """Settings of one worst/best-case solve.

    Attributes:
        x0: Initial state.
        horizon: N ≥ 1.
        direction: worst (maximize J) or best (minimize J).
        outer_iterations: F ≥ 1, the iteration cap (also sets γ for `constant`).
        schedule: Step-size schedule of the inexact update.
        tol: Stop once |J_k - J_{k-1}| < tol.
    """

    x0: np.ndarray
    horizon: int
    direction: Direction = Direction.WORST
    outer_iterations: int = 200
    schedule: Schedule = Schedule.FW_STANDARD
    tol: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        try:
            object.__setattr__(self, "direction", Direction(self.direction))
            object.__setattr__(self, "schedule", Schedule(self.schedule))
        except ValueError as e:
            raise ConfigError(f"solver: {e}") from e
        if self.horizon < 1:
            raise ConfigError(f"solver.horizon: must be >= 1, got {self.horizon}")
        if self.outer_iterations < 1:
            raise ConfigError(f"solver.outer_iterations: must be >= 1, got {self.outer_iterations}")
        if not self.tol >= 0:
            raise ConfigError(f"solver.tol: must be >= 0, got {self.tol}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "x0": self.x0.tolist(),
            "horizon": self.horizon,
            "direction": str(self.direction),
            "outer_iterations": self.outer_iterations,
            "schedule": str(self.schedule),
            "tol": self.tol,
        }


@dataclass(frozen=True, eq=False)
class WorstCaseResult:
    """Outcome of a solve.

    The weights, trajectory and co-states belong to the incumbent, the
    iterate whose J is the extreme of `cost_trace`. The last iterate is
    `weight_history[-1]`.

    Attributes:
        weights: (N, p, L̂) incumbent weight realizations w_0..w_{N-1}.
        trajectory: Forward pass under `weights`.
        costates: (N+1, p) co-states p_0..p_N for `weights`.
        cost_trace: J of the initial (mean) weights followed by J after each
            outer iteration.
        converged: True when the cost change fell below tol.
        iterations_used: Number of outer iterations performed.
        direction: Direction that was optimized.
        exact: True for exact PMP updates, False for the scheduled FW update.
        config: The solver settings.
        incumbent_iteration: Index into `cost_trace` of the incumbent.
        weight_history: Weights of every trace entry, incumbent or not.
    """

    weights: np.ndarray
    trajectory: Trajectory
    costates: np.ndarray
    cost_trace: list[float]
    converged: bool
    iterations_used: int
    direction: Direction
    config: SolverConfig
    exact: bool = False
    incumbent_iteration: int = 0
    weight_history: list[np.ndarray] = field(default_factory=list)

    @property
    def cost(self) -> float:
        """J of the incumbent weights."""
        return self.cost_trace[self.incumbent_iteration]

    @property
    def final_cost(self) -> float:
        """J of the last iterate."""
        return self.cost_trace[-1]

    @property
    def extreme_cost(self) -> float:
        """Most adverse (worst) or most favorable (best) J over all iterates."""
        if self.direction is Direction.WORST:
            return max(self.cost_trace)
        return min(self.cost_trace)

    @property
    def largest_setback(self) -> float:
        """Largest single-iteration move of J away from the target direction.

        A decrease for the worst case, an increase for the best case; 0.0 for
        a trace that never moves backwards.
        """
        steps = np.diff(self.cost_trace)
        if steps.size == 0:
            return 0.0
        backwards = -steps if self.direction is Direction.WORST else steps
        return float(max(0.0, backwards.max()))

    @property
    def trace_monotone(self) -> bool:
        """True when every iteration moved J towards its target, up to MONOTONE_TOL."""
        scale = max(1.0, max(abs(j) for j in self.cost_trace))
        return self.largest_setback <= MONOTONE_TOL * scale

    def to_dict(self, trajectory_file: str | None = None) -> dict[str, Any]:
        return {
            "direction": str(self.direction),
            "exact": self.exact,
            "config": self.config.to_dict(),
            "weights": {
                "shape": list(self.weights.shape),
                "data": self.weights.ravel().tolist(),
            },
            "trajectory": trajectory_file,
            "cost": self.cost,
            "final_cost": self.final_cost,
            "incumbent_iteration": self.incumbent_iteration,
            "cost_trace": list(self.cost_trace),
            "trace_monotone": self.trace_monotone,
            "largest_setback": self.largest_setback,
            "converged": self.converged,
            "iterations_used": self.iterations_used,
        }


def _sign(direction: Direction) -> float:
    """ĉ = sign · c."""
    return -1.0 if direction is Direction.WORST else 1.0


def trajectory_cost(cost: CostFunction, trajectory: Trajectory) -> float:
    """J = Σ_{n=1..N} c(x_n); the initial state is not charged."""
    return float(sum(cost.value(x) for x in trajectory.states[1:]))


def hamiltonian(
    model: UrfModel, cost: CostFunction, x, p_next, weights, direction: Direction
) -> float:
    """H = ĉ(x) + p_nextᵀ (h(x) + W φ̂(x))."""
    x = np.asarray(x, dtype=float)
    p_next = np.asarray(p_next, dtype=float)
    if p_next.shape != (model.state_dim,):
        raise DimensionError(f"co-state has shape {p_next.shape}, expected ({model.state_dim},)")
    successor = step_with_weights(model, x, weights)
    return float(_sign(Direction(direction)) * cost.value(x) + p_next @ successor)


def minimize_hamiltonian_step(uset: UncertaintySet, phi, p_scalar: float) -> np.ndarray:
    """argmin over the ellipsoid of the linear objective gᵀw with g = φ̂ · p.

    Closed form: w* = μ - S g / √(gᵀ S g), or μ for a singleton set or a
    vanishing gradient. Evaluated through the shape factor F (S = F Fᵀ) as
    μ - F v / ||v|| with v = Fᵀg, which keeps w* on the boundary of the set as
    the set itself measures it.
    """
    phi = np.asarray(phi, dtype=float)
    if not (np.all(np.isfinite(phi)) and np.isfinite(p_scalar)):
        raise NumericalError("Hamiltonian gradient has non-finite entries")
    if uset.degenerate:
        return np.array(uset.center)
    whitened = uset.shape_factor.T @ (phi * p_scalar)
    norm = float(np.linalg.norm(whitened))
    if norm < DEGENERATE_GRADIENT:
        return np.array(uset.center)
    return uset.center - uset.shape_factor @ (whitened / norm)


def _check_sequence(model: UrfModel, weights: np.ndarray, horizon: int) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    expected = (horizon, model.state_dim, model.feature_dim)
    if weights.shape != expected:
        raise DimensionError(f"weight sequence has shape {weights.shape}, expected {expected}")
    return weights


def backward_pass(
    model: UrfModel,
    cost: CostFunction,
    trajectory: Trajectory,
    weights,
    direction: Direction,
) -> np.ndarray:
    """Co-states p_0..p_N of the adjoint recursion, shape (N+1, p).

    Raises:
        NumericalError: `trajectory` is not the forward pass of `weights`.
    """
    sign = _sign(Direction(direction))
    states = trajectory.states
    horizon = trajectory.horizon
    weights = _check_sequence(model, weights, horizon)

    replay = rollout_with_weights(model, states[0], weights).states
    mismatch = float(np.max(np.abs(replay - states)))
    if mismatch > CONSISTENCY_TOL:
        raise NumericalError(
            f"trajectory does not match its weights (max deviation {mismatch:.3e})"
        )

    costates = np.empty_like(states)
    costates[horizon] = sign * cost.gradient(states[horizon])
    for n in range(horizon - 1, -1, -1):
        jac = transition_jacobian(model, states[n], weights[n])
        costates[n] = sign * cost.gradient(states[n]) + jac.T @ costates[n + 1]
    return costates


def weight_gradients(model: UrfModel, trajectory: Trajectory, costates: np.ndarray) -> np.ndarray:
    """∇_{w_{n,d}} Ĵ = φ̂(x_n) p_{n+1,d}, shape (N, p, L̂)."""
    phis = np.stack([evaluate(model.features, x) for x in trajectory.states[:-1]])
    return costates[1:, :, None] * phis[:, None, :]


def hamiltonian_minimizers(
    model: UrfModel, trajectory: Trajectory, costates: np.ndarray
) -> np.ndarray:
    """Per step and output dimension closed-form minimizers w̄_{n,d}."""
    targets = np.empty((trajectory.horizon, model.state_dim, model.feature_dim))
    for n, x in enumerate(trajectory.states[:-1]):
        phi = evaluate(model.features, x)
        for d, uset in enumerate(model.sets):
            targets[n, d] = minimize_hamiltonian_step(uset, phi, costates[n + 1, d])
    return targets


def feasibility_violations(
    model: UrfModel, weights, tol: float = FEASIBILITY_TOL
) -> list[tuple[int, int, float]]:
    """(step, output, quadratic form) for every weight vector outside its set."""
    violations = []
    for n, step_weights in enumerate(np.asarray(weights, dtype=float)):
        for d, uset in enumerate(model.sets):
            q = uset.quadratic_form(step_weights[d])
            if q > 1.0 + tol:
                violations.append((n, d, q))
    return violations


def _iterate(
    model: UrfModel, cost: CostFunction, config: SolverConfig, exact: bool
) -> WorstCaseResult:
    if config.x0.shape != (model.state_dim,):
        raise ConfigError(
            f"solver.x0: has {config.x0.size} entries, model state dimension is {model.state_dim}"
        )
    direction = config.direction
    horizon = config.horizon
    weights = np.array(
        np.broadcast_to(model.mean_weights(), (horizon, model.state_dim, model.feature_dim))
    )

    trajectory = rollout_with_weights(model, config.x0, weights, iteration=0)
    costates = backward_pass(model, cost, trajectory, weights, direction)
    trace = [trajectory_cost(cost, trajectory)]
    history = [weights.copy()]
    converged = False
    iterations = 0
    # ĉ-sign makes "lower is better" hold for both directions.
    sign = _sign(direction)
    incumbent = (0, weights, trajectory, costates)

    for k in range(config.outer_iterations):
        targets = hamiltonian_minimizers(model, trajectory, costates)
        if exact:
            weights = targets
        else:
            gamma = step_size(config.schedule, k, config.outer_iterations)
            weights = weights + gamma * (targets - weights)

        violations = feasibility_violations(model, weights)
        if violations:
            n, d, q = violations[0]
            raise NumericalError(
                f"iterate {k + 1} left the uncertainty set at step {n}, output {d} "
                f"(quadratic form {q:.12f})"
            )

        try:
            trajectory = rollout_with_weights(model, config.x0, weights, iteration=k + 1)
        except DivergenceError:
            logger.error("%s-case solve diverged at iteration %d", direction, k + 1)
            raise
        costates = backward_pass(model, cost, trajectory, weights, direction)
        trace.append(trajectory_cost(cost, trajectory))
        history.append(weights.copy())
        iterations = k + 1
        if sign * trace[-1] < sign * trace[incumbent[0]]:
            incumbent = (iterations, weights, trajectory, costates)
        logger.debug("%s iteration %d: J = %.10g", direction, iterations, trace[-1])
        if abs(trace[-1] - trace[-2]) < config.tol:
            converged = True
            break

    best_iteration, best_weights, best_trajectory, best_costates = incumbent
    logger.info(
        "%s-case %s solve: J = %.6g (iterate %d) after %d iteration(s)%s",
        direction,
        "exact PMP" if exact else str(config.schedule),
        trace[best_iteration],
        best_iteration,
        iterations,
        " (converged)" if converged else "",
    )
    return WorstCaseResult(
        weights=best_weights,
        trajectory=best_trajectory,
        costates=best_costates,
        cost_trace=trace,
        converged=converged,
        iterations_used=iterations,
        direction=direction,
        config=config,
        exact=exact,
        incumbent_iteration=best_iteration,
        weight_history=history,
    )


def solve(model: UrfModel, cost: CostFunction, config: SolverConfig) -> WorstCaseResult:
    """Inexact PMP: Frank-Wolfe updates with the configured step-size schedule."""
    return _iterate(model, cost, config, exact=False)


def solve_exact(model: UrfModel, cost: CostFunction, config: SolverConfig) -> WorstCaseResult:
    """Exact PMP: every iteration jumps to the Hamiltonian minimizers."""
    return _iterate(model, cost, config, exact=True)


@dataclass(frozen=True, eq=False)
class CostBounds:
    """Best, mean and worst accumulated cost with the runs that produced them."""

    best: float
    mean: float
    worst: float
    best_result: WorstCaseResult
    worst_result: WorstCaseResult
    mean_trajectory: Trajectory

    @property
    def width(self) -> float:
        return self.worst - self.best

    def as_tuple(self) -> tuple[float, float, float]:
        return self.best, self.mean, self.worst


def cost_bounds(model: UrfModel, cost: CostFunction, config: SolverConfig) -> CostBounds:
    """Solve in both directions and bracket the mean-rollout cost.

    The bounds are the costs of the incumbent trajectories, recomputed from
    those trajectories, so `worst` is exactly the J of
    `worst_result.trajectory` (likewise for `best`).

    Raises:
        NumericalError: An incumbent lies outside the uncertainty set, its
            recomputed cost disagrees with its trace entry, or
            best ≤ mean ≤ worst fails by more than ORDERING_TOL.
    """
    mean_trajectory = rollout_mean(model, config.x0, config.horizon)
    mean = trajectory_cost(cost, mean_trajectory)
    worst_result = solve(model, cost, replace(config, direction=Direction.WORST))
    best_result = solve(model, cost, replace(config, direction=Direction.BEST))

    for result in (worst_result, best_result):
        violations = feasibility_violations(model, result.weights)
        if violations:
            n, d, q = violations[0]
            raise NumericalError(
                f"{result.direction}-case incumbent leaves the uncertainty set at step {n}, "
                f"output {d} (quadratic form {q:.12f})"
            )
    best = trajectory_cost(cost, best_result.trajectory)
    worst = trajectory_cost(cost, worst_result.trajectory)
    for value, result in ((best, best_result), (worst, worst_result)):
        if abs(value - result.cost) > ORDERING_TOL * max(1.0, abs(value)):
            raise NumericalError(
                f"{result.direction}-case trajectory costs {value:.10g}, "
                f"its trace entry says {result.cost:.10g}"
            )
    if not (best <= mean + ORDERING_TOL and mean <= worst + ORDERING_TOL):
        raise NumericalError(
            f"cost ordering violated: best={best:.10g}, mean={mean:.10g}, worst={worst:.10g}"
        )
    return CostBounds(
        best=best,
        mean=mean,
        worst=worst,
        best_result=best_result,
        worst_result=worst_result,
        mean_trajectory=mean_trajectory,
    )
