"""
URF set-valued dynamics.

A learned model maps a state x to the set of successors

    x⁺ ∈ { h(x) + (φ̂(x)ᵀw_1, ..., φ̂(x)ᵀw_p) : w_d ∈ W_d },

where h is a known nominal model, φ̂ the (possibly projected) random feature
map shared by all output dimensions, and W_d the credible ellipsoid of output
dimension d. Weight realizations are always passed around as a (p, L̂) array
with one row per output dimension; weight sequences over a horizon have
shape (N, p, L̂).

The transition is linear in the weights for fixed x, which is the structure the
worst-case solver in `worstcase` relies on.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass
from enum import StrEnum
from typing import Any

import numpy as np

from .errors import ConfigError, DimensionError, DivergenceError
from .features import (
    FeatureMap,
    FeatureSpec,
    build_feature_map,
    evaluate,
    feature_jacobian,
    feature_map_from_dict,
    feature_map_to_dict,
    feature_matrix,
    fit_pca_projection,
    make_generator,
)
from .regression import (
    RegressionDataset,
    UncertaintySet,
    WeightPosterior,
    credible_set,
    fit_multi_output,
    posterior_from_dict,
    posterior_to_dict,
    sample_uniform,
    set_from_dict,
    set_to_dict,
)

logger = logging.getLogger(__name__)

# Rollouts abort once any state entry exceeds this magnitude.
DIVERGENCE_BOUND = 1e6

StateFunction = Callable[[np.ndarray], np.ndarray]


class NominalKind(StrEnum):
    IDENTITY = "identity"
    AFFINE = "affine"
    CUSTOM = "custom"


@dataclass(frozen=True, eq=False)
class NominalModel:
    """Known part h of the dynamics together with its Jacobian.

    Build instances with identity_nominal(), affine_nominal() or
    custom_nominal() rather than directly.
    """

    kind: NominalKind
    dim: int
    matrix: np.ndarray | None = None
    offset: np.ndarray | None = None
    value_fn: StateFunction | None = None
    jacobian_fn: StateFunction | None = None

    def value(self, x: np.ndarray) -> np.ndarray:
        if self.kind is NominalKind.IDENTITY:
            return np.array(x, dtype=float)
        if self.kind is NominalKind.AFFINE:
            assert self.matrix is not None and self.offset is not None
            return self.matrix @ x + self.offset
        assert self.value_fn is not None
        return np.asarray(self.value_fn(x), dtype=float)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        if self.kind is NominalKind.IDENTITY:
            return np.eye(self.dim)
        if self.kind is NominalKind.AFFINE:
            assert self.matrix is not None
            return np.array(self.matrix)
        assert self.jacobian_fn is not None
        return np.asarray(self.jacobian_fn(x), dtype=float)


def identity_nominal(dim: int) -> NominalModel:
    """h(x) = x, the default for residual learning."""
    return NominalModel(kind=NominalKind.IDENTITY, dim=dim)


def affine_nominal(matrix, offset) -> NominalModel:
    """h(x) = A x + b.

    Args:
        matrix: Square (p, p) matrix A.
        offset: Length-p vector b.

    Returns:
        Affine nominal model with constant Jacobian A.

    Raises:
        DimensionError: A is not square or b does not match it.
    """
    matrix = np.asarray(matrix, dtype=float)
    offset = np.asarray(offset, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or offset.shape != (matrix.shape[0],):
        raise DimensionError(
            f"affine nominal needs a square matrix and matching offset, got {matrix.shape} and {offset.shape}"
        )
    return NominalModel(kind=NominalKind.AFFINE, dim=matrix.shape[0], matrix=matrix, offset=offset)


def custom_nominal(dim: int, value_fn: StateFunction, jacobian_fn: StateFunction) -> NominalModel:
    """Nominal map from user callables.

    Args:
        dim: State dimension p.
        value_fn: x -> h(x), returning a length-p vector.
        jacobian_fn: x -> ∂h/∂x, returning a (p, p) matrix.

    Custom nominals cannot be written to model.json.
    """
    return NominalModel(
        kind=NominalKind.CUSTOM, dim=dim, value_fn=value_fn, jacobian_fn=jacobian_fn
    )


@dataclass(frozen=True, eq=False)
class UrfModel:
    """Learned set-valued dynamics: nominal + features + per-dimension posterior/set."""

    nominal: NominalModel
    features: FeatureMap
    posteriors: tuple[WeightPosterior, ...]
    sets: tuple[UncertaintySet, ...]

    def __post_init__(self):
        object.__setattr__(self, "posteriors", tuple(self.posteriors))
        object.__setattr__(self, "sets", tuple(self.sets))
        p = len(self.posteriors)
        if p == 0 or len(self.sets) != p:
            raise DimensionError(
                f"model needs one posterior and one set per output, got {p} and {len(self.sets)}"
            )
        if self.nominal.dim != p or self.features.input_dim != p:
            raise DimensionError(
                f"state dimension mismatch: nominal {self.nominal.dim}, "
                f"features {self.features.input_dim}, outputs {p}"
            )
        width = self.features.output_dim
        for d, (posterior, uset) in enumerate(zip(self.posteriors, self.sets, strict=True)):
            if posterior.dim != width or uset.dim != width:
                raise DimensionError(
                    f"output {d}: weights of length {posterior.dim}/{uset.dim}, features give {width}"
                )

    @property
    def state_dim(self) -> int:
        return len(self.posteriors)

    @property
    def feature_dim(self) -> int:
        return self.features.output_dim

    @property
    def certainty_equivalent(self) -> bool:
        return all(uset.degenerate for uset in self.sets)

    def mean_weights(self) -> np.ndarray:
        """Posterior means stacked into a (p, L̂) array."""
        return np.stack([posterior.mean for posterior in self.posteriors])


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States x_0..x_N stacked into an (N+1) × p matrix."""

    states: np.ndarray

    def __post_init__(self):
        if self.states.ndim != 2 or self.states.shape[0] < 1:
            raise DimensionError(f"trajectory states must be (N+1, p), got {self.states.shape}")
        if not np.all(np.isfinite(self.states)):
            raise DivergenceError(
                "trajectory contains non-finite states",
                step=int(np.argmax(~np.all(np.isfinite(self.states), axis=1))),
            )

    @property
    def horizon(self) -> int:
        return int(self.states.shape[0] - 1)

    @property
    def initial_state(self) -> np.ndarray:
        return self.states[0]


def _check_state(model: UrfModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (model.state_dim,):
        raise DimensionError(f"state has shape {x.shape}, model expects ({model.state_dim},)")
    return x


def _check_weights(model: UrfModel, weights) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    expected = (model.state_dim, model.feature_dim)
    if weights.shape != expected:
        raise DimensionError(f"weights have shape {weights.shape}, expected {expected}")
    return weights


def step_with_weights(model: UrfModel, x, weights) -> np.ndarray:
    """h(x) + (φ̂(x)ᵀW_1, ..., φ̂(x)ᵀW_p)."""
    x = _check_state(model, x)
    weights = _check_weights(model, weights)
    return model.nominal.value(x) + weights @ evaluate(model.features, x)


def mean_step(model: UrfModel, x) -> np.ndarray:
    return step_with_weights(model, x, model.mean_weights())


def transition_jacobian(model: UrfModel, x, weights) -> np.ndarray:
    """∂x⁺/∂x = ∂h/∂x + W ∂φ̂/∂x, shape (p, p)."""
    x = _check_state(model, x)
    return model.nominal.jacobian(x) + weights @ feature_jacobian(model.features, x)


def _guard(x: np.ndarray, step: int, iteration: int | None) -> None:
    if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > DIVERGENCE_BOUND:
        raise DivergenceError("rollout diverged", step=step, iteration=iteration)


def rollout_with_weights(
    model: UrfModel, x0, weight_sequence, iteration: int | None = None
) -> Trajectory:
    """Forward pass x_{n+1} = h(x_n) + W_n φ̂(x_n) for an (N, p, L̂) weight sequence."""
    x = _check_state(model, x0)
    weight_sequence = np.asarray(weight_sequence, dtype=float)
    if weight_sequence.ndim != 3 or weight_sequence.shape[1:] != (model.state_dim, model.feature_dim):
        raise DimensionError(
            f"weight sequence has shape {weight_sequence.shape}, "
            f"expected (N, {model.state_dim}, {model.feature_dim})"
        )
    states = np.empty((weight_sequence.shape[0] + 1, model.state_dim))
    states[0] = x
    for n, weights in enumerate(weight_sequence):
        x = model.nominal.value(x) + weights @ evaluate(model.features, x)
        _guard(x, n + 1, iteration)
        states[n + 1] = x
    return Trajectory(states=states)


def rollout_mean(model: UrfModel, x0, horizon: int) -> Trajectory:
    """Predicted mean trajectory with every step at the posterior means."""
    if horizon < 1:
        raise ConfigError(f"horizon: must be >= 1, got {horizon}")
    means = np.broadcast_to(model.mean_weights(), (horizon, model.state_dim, model.feature_dim))
    return rollout_with_weights(model, x0, means)


class TubeMode(StrEnum):
    FIXED_WEIGHT = "fixed-weight"
    PER_STEP = "per-step"


def draw_weights(model: UrfModel, rng: np.random.Generator) -> np.ndarray:
    """One (p, L̂) realization drawn uniformly from each output's ellipsoid."""
    return np.stack([sample_uniform(uset, rng)[0] for uset in model.sets])


def sample_uncertainty_tube(
    model: UrfModel,
    x0,
    horizon: int,
    num_samples: int,
    mode: TubeMode | str = TubeMode.FIXED_WEIGHT,
    seed: int = 0,
) -> list[Trajectory]:
    """Plausible trajectories under weights drawn uniformly from the sets.

    In fixed-weight mode one draw is held for the whole horizon; in per-step mode
    weights are redrawn at every step.
    """
    if num_samples < 1:
        raise ConfigError(f"tube.num_samples: must be >= 1, got {num_samples}")
    if horizon < 1:
        raise ConfigError(f"horizon: must be >= 1, got {horizon}")
    mode = TubeMode(mode)
    rng = make_generator(seed)
    tube = []
    for _ in range(num_samples):
        if mode is TubeMode.FIXED_WEIGHT:
            weights = draw_weights(model, rng)
            sequence = np.broadcast_to(weights, (horizon, *weights.shape))
        else:
            sequence = np.stack([draw_weights(model, rng) for _ in range(horizon)])
        tube.append(rollout_with_weights(model, x0, sequence))
    return tube


def residual_dataset(inputs, successors, nominal: NominalModel, noise_std: float) -> RegressionDataset:
    """Residual targets ŷᵢ = yᵢ - h(xᵢ) for observed transitions (xᵢ, yᵢ)."""
    inputs = np.asarray(inputs, dtype=float)
    successors = np.asarray(successors, dtype=float)
    if inputs.shape != successors.shape or inputs.ndim != 2:
        raise DimensionError(
            f"inputs {inputs.shape} and successors {successors.shape} must be equal T x p matrices"
        )
    if inputs.shape[1] != nominal.dim:
        raise DimensionError(f"nominal model has dimension {nominal.dim}, data has {inputs.shape[1]}")
    baseline = np.array([nominal.value(x) for x in inputs]).reshape(inputs.shape)
    return RegressionDataset(inputs=inputs, targets=successors - baseline, noise_std=noise_std)


def fit_urf_model(
    dataset: RegressionDataset,
    feature_spec: FeatureSpec,
    alpha: float,
    reduced_dim: int | None = None,
    nominal: NominalModel | None = None,
    certainty_equivalent: bool = False,
) -> UrfModel:
    """Features -> optional PCA -> per-dimension BLR -> credible sets."""
    if feature_spec.input_dim != dataset.inputs.shape[1]:
        raise DimensionError(
            f"features.input_dim is {feature_spec.input_dim}, dataset has {dataset.inputs.shape[1]} input columns"
        )
    feature_map = build_feature_map(feature_spec)
    if reduced_dim is not None:
        feature_map = fit_pca_projection(feature_map, dataset.inputs, reduced_dim)
    phi = feature_matrix(feature_map, dataset.inputs)
    posteriors = fit_multi_output(phi, dataset.targets, dataset.noise_var)
    sets = [credible_set(post, alpha, certainty_equivalent) for post in posteriors]
    logger.info(
        "fitted URF model on %d transitions: %d outputs, %d features",
        dataset.size,
        dataset.output_dim,
        feature_map.output_dim,
    )
    return UrfModel(
        nominal=nominal or identity_nominal(dataset.output_dim),
        features=feature_map,
        posteriors=tuple(posteriors),
        sets=tuple(sets),
    )


def nominal_to_dict(nominal: NominalModel) -> dict[str, Any]:
    if nominal.kind is NominalKind.CUSTOM:
        raise ConfigError("nominal.kind: custom nominal models cannot be serialized")
    data: dict[str, Any] = {"kind": str(nominal.kind), "dim": nominal.dim}
    if nominal.kind is NominalKind.AFFINE:
        assert nominal.matrix is not None and nominal.offset is not None
        data["matrix"] = nominal.matrix.tolist()
        data["offset"] = nominal.offset.tolist()
    return data


def nominal_from_dict(data: dict[str, Any]) -> NominalModel:
    kind = data.get("kind", "identity")
    if kind == NominalKind.IDENTITY:
        return identity_nominal(int(data["dim"]))
    if kind == NominalKind.AFFINE:
        return affine_nominal(data["matrix"], data["offset"])
    raise ConfigError(f"nominal.kind: cannot load nominal model of kind {kind!r}")


def model_to_dict(model: UrfModel) -> dict[str, Any]:
    return {
        "nominal": nominal_to_dict(model.nominal),
        "features": feature_map_to_dict(model.features),
        "outputs": [
            {"posterior": posterior_to_dict(post), "set": set_to_dict(uset)}
            for post, uset in zip(model.posteriors, model.sets, strict=True)
        ],
    }


def model_from_dict(data: dict[str, Any]) -> UrfModel:
    try:
        outputs = data["outputs"]
        return UrfModel(
            nominal=nominal_from_dict(data["nominal"]),
            features=feature_map_from_dict(data["features"]),
            posteriors=tuple(posterior_from_dict(block["posterior"]) for block in outputs),
            sets=tuple(set_from_dict(block["set"]) for block in outputs),
        )
    except KeyError as e:
        raise ConfigError(f"model bundle is missing field {e.args[0]!r}") from e
