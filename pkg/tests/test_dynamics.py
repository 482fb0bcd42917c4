"""
Tests for the URF set-valued dynamics (urfdyn/dynamics.py).

  1. **TestStep**: one transition under given weights, and its Jacobian.
  2. **TestRollout**: forward passes, horizon validation and divergence.
  3. **TestUncertaintyTube**: sampled trajectories in both tube modes.
  4. **TestFitUrfModel**: residual targets and the full fitting pipeline.
  5. **TestSerialization**: model documents.

Most tests run on hand-built models whose features are constant
(A = 0, b = 0, L = 2 gives φ̂(x) = [1, 1]), so successors can be worked out on
paper.
"""

from dataclasses import replace

import numpy as np
import pytest

from urfdyn.dynamics import (
    DIVERGENCE_BOUND,
    Trajectory,
    TubeMode,
    UrfModel,
    affine_nominal,
    custom_nominal,
    fit_urf_model,
    identity_nominal,
    mean_step,
    model_from_dict,
    model_to_dict,
    residual_dataset,
    rollout_mean,
    rollout_with_weights,
    sample_uncertainty_tube,
    step_with_weights,
    transition_jacobian,
)
from urfdyn.errors import ConfigError, DimensionError, DivergenceError
from urfdyn.features import FeatureMap, FeatureSpec, build_feature_map
from urfdyn.regression import UncertaintySet, fit_blr


def hand_model(directions, offsets, centers, radius=1.0, nominal=None, degenerate=False) -> UrfModel:
    """Model with the given feature basis, one isotropic ball of `radius` per output."""
    directions = np.asarray(directions, dtype=float)
    count, dim = directions.shape
    feature_map = FeatureMap(
        spec=FeatureSpec(kind="fourier", count=count, input_dim=dim),
        directions=directions,
        offsets=np.asarray(offsets, dtype=float),
    )
    prior = fit_blr(np.empty((0, count)), np.empty(0), 1.0)
    posteriors, sets = [], []
    for center in centers:
        center = np.asarray(center, dtype=float)
        posteriors.append(replace(prior, mean=center))
        factor = np.zeros((count, count)) if degenerate else radius * np.eye(count)
        sets.append(
            UncertaintySet(
                center=center, shape=factor @ factor.T, shape_factor=factor, level=0.9, degenerate=degenerate
            )
        )
    return UrfModel(
        nominal=nominal or identity_nominal(dim),
        features=feature_map,
        posteriors=tuple(posteriors),
        sets=tuple(sets),
    )


def constant_model(center=(1.0, 1.0), **kwargs) -> UrfModel:
    """1-d state, φ̂(x) = [1, 1] everywhere."""
    return hand_model(np.zeros((2, 1)), np.zeros(2), [center], **kwargs)


def random_model(seed: int = 3, dim: int = 2, count: int = 8) -> UrfModel:
    feature_map = build_feature_map(FeatureSpec(kind="fourier", count=count, input_dim=dim, seed=seed))
    centers = np.random.default_rng(seed).normal(size=(dim, count))
    model = hand_model(feature_map.directions, feature_map.offsets, centers, radius=0.5)
    return replace(model, features=feature_map)


class TestStep:
    """Single transitions x⁺ = h(x) + W φ̂(x)."""

    def test_constant_features_add_weight_sum(self):
        """With φ̂ = [1, 1] and w = [1, 1], the step is h(x) + 2."""
        assert mean_step(constant_model(), [3.0]) == pytest.approx([5.0])

    def test_linear_in_weights(self):
        """step(aW₁ + bW₂) - h(x) = a(step(W₁) - h(x)) + b(step(W₂) - h(x))."""
        model = random_model()
        rng = np.random.default_rng(0)
        x = rng.normal(size=2)
        w1, w2 = rng.normal(size=(2, 2, 8))
        combined = step_with_weights(model, x, 0.3 * w1 - 1.7 * w2) - x
        separate = 0.3 * (step_with_weights(model, x, w1) - x) - 1.7 * (step_with_weights(model, x, w2) - x)
        assert np.allclose(combined, separate, atol=1e-12)

    def test_affine_nominal(self):
        """The nominal value enters additively."""
        model = constant_model(nominal=affine_nominal([[2.0]], [0.5]))
        assert mean_step(model, [1.0]) == pytest.approx([2.0 + 0.5 + 2.0])

    def test_state_shape_checked(self):
        """A state of the wrong length is rejected."""
        with pytest.raises(DimensionError):
            mean_step(random_model(), [1.0, 2.0, 3.0])

    def test_weight_shape_checked(self):
        """Weights must be (p, L̂)."""
        with pytest.raises(DimensionError):
            step_with_weights(random_model(), [0.0, 0.0], np.zeros((2, 7)))

    def test_transition_jacobian_matches_finite_differences(self):
        """∂x⁺/∂x agrees with central differences to 1e-6."""
        model = random_model()
        weights = model.mean_weights()
        x = np.array([0.4, -0.8])
        numeric = np.empty((2, 2))
        for j in range(2):
            e = np.zeros(2)
            e[j] = 1e-6
            numeric[:, j] = (step_with_weights(model, x + e, weights) - step_with_weights(model, x - e, weights)) / 2e-6
        assert np.allclose(transition_jacobian(model, x, weights), numeric, atol=1e-6)

    def test_model_dimension_mismatch(self):
        """Feature input dimension must equal the number of outputs."""
        with pytest.raises(DimensionError):
            hand_model(np.zeros((2, 1)), np.zeros(2), [[1.0, 1.0], [1.0, 1.0]])


class TestRollout:
    """Forward passes."""

    def test_mean_rollout_horizon_one_is_mean_step(self):
        """N = 1 returns [x0, mean_step(x0)]."""
        model = random_model()
        x0 = np.array([0.2, 0.1])
        trajectory = rollout_mean(model, x0, 1)
        assert trajectory.horizon == 1
        assert np.array_equal(trajectory.initial_state, x0)
        assert np.allclose(trajectory.states[1], mean_step(model, x0), atol=0)

    def test_per_step_weights(self):
        """Each step uses its own weight row."""
        sequence = np.array([[[1.0, 0.0]], [[0.0, 2.0]], [[-1.0, -1.0]]])
        trajectory = rollout_with_weights(constant_model(), [0.0], sequence)
        assert trajectory.states.ravel() == pytest.approx([0.0, 1.0, 3.0, 1.0])

    def test_shape(self):
        """States are (N+1) × p."""
        assert rollout_mean(random_model(), [0.0, 0.0], 12).states.shape == (13, 2)

    def test_zero_horizon(self):
        """N = 0 is a configuration error."""
        with pytest.raises(ConfigError, match="horizon"):
            rollout_mean(random_model(), [0.0, 0.0], 0)

    def test_sequence_shape_checked(self):
        """Weight sequences must be (N, p, L̂)."""
        with pytest.raises(DimensionError):
            rollout_with_weights(constant_model(), [0.0], np.zeros((3, 2)))

    def test_divergence_reports_step(self):
        """x⁺ = 10x from x0 = 1 first exceeds the bound at step 7."""
        model = constant_model(center=(0.0, 0.0), nominal=affine_nominal([[10.0]], [0.0]))
        with pytest.raises(DivergenceError) as excinfo:
            rollout_mean(model, [1.0], 20)
        assert 10.0**7 > DIVERGENCE_BOUND >= 10.0**6
        assert excinfo.value.step == 7
        assert excinfo.value.iteration is None

    def test_non_finite_trajectory(self):
        """A trajectory holding NaN is rejected with the offending step."""
        with pytest.raises(DivergenceError) as excinfo:
            Trajectory(states=np.array([[0.0], [1.0], [np.nan]]))
        assert excinfo.value.step == 2


class TestUncertaintyTube:
    """Sampled plausible trajectories."""

    def test_certainty_equivalent_tube_is_mean(self):
        """Every CERF sample equals the mean rollout."""
        model = constant_model(degenerate=True)
        mean = rollout_mean(model, [0.5], 10)
        for trajectory in sample_uncertainty_tube(model, [0.5], 10, num_samples=5, seed=1):
            assert np.array_equal(trajectory.states, mean.states)

    def test_fixed_weight_increments_are_constant(self):
        """One draw per trajectory: with constant features each step adds the same amount."""
        model = constant_model(center=(0.0, 0.0))
        tube = sample_uncertainty_tube(model, [0.0], 6, num_samples=8, mode=TubeMode.FIXED_WEIGHT, seed=2)
        for trajectory in tube:
            increments = np.diff(trajectory.states.ravel())
            assert np.allclose(increments, increments[0], atol=1e-12)

    def test_per_step_increments_vary(self):
        """Redrawn weights give different increments at each step."""
        model = constant_model(center=(0.0, 0.0))
        tube = sample_uncertainty_tube(model, [0.0], 6, num_samples=3, mode="per-step", seed=2)
        for trajectory in tube:
            assert np.ptp(np.diff(trajectory.states.ravel())) > 0

    def test_increments_respect_set(self):
        """Increments w₁ + w₂ with ||w|| ≤ 1 never exceed √2 in magnitude."""
        model = constant_model(center=(0.0, 0.0))
        for mode in TubeMode:
            for trajectory in sample_uncertainty_tube(model, [0.0], 5, num_samples=20, mode=mode, seed=4):
                assert np.all(np.abs(np.diff(trajectory.states.ravel())) <= np.sqrt(2) + 1e-12)

    def test_seeded(self):
        """Same seed, same tube; different seed, different tube."""
        model = random_model()
        first = sample_uncertainty_tube(model, [0.1, 0.1], 5, num_samples=3, seed=7)
        again = sample_uncertainty_tube(model, [0.1, 0.1], 5, num_samples=3, seed=7)
        other = sample_uncertainty_tube(model, [0.1, 0.1], 5, num_samples=3, seed=8)
        assert all(np.array_equal(a.states, b.states) for a, b in zip(first, again, strict=True))
        assert not np.array_equal(first[0].states, other[0].states)

    def test_sample_count_validated(self):
        """At least one sample is required."""
        with pytest.raises(ConfigError, match="num_samples"):
            sample_uncertainty_tube(constant_model(), [0.0], 5, num_samples=0)


def smooth_transitions(count: int = 200, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    inputs = rng.uniform(-2.0, 2.0, size=(count, 1))
    successors = 0.9 * inputs + 0.2 * np.sin(inputs) + 0.01 * rng.standard_normal((count, 1))
    return inputs, successors


class TestFitUrfModel:
    """Residual data and the fitting pipeline."""

    def test_residual_targets(self):
        """ŷ = y - h(x) for the identity nominal."""
        dataset = residual_dataset([[1.0, 2.0]], [[1.5, 1.0]], identity_nominal(2), 0.1)
        assert dataset.targets.tolist() == [[0.5, -1.0]]

    def test_residual_shape_mismatch(self):
        """Inputs and successors must have the same shape."""
        with pytest.raises(DimensionError):
            residual_dataset(np.zeros((3, 2)), np.zeros((3, 1)), identity_nominal(2), 0.1)

    def test_learns_smooth_residual(self):
        """Mean predictions on [-1.5, 1.5] track the true map to within 0.05."""
        inputs, successors = smooth_transitions()
        dataset = residual_dataset(inputs, successors, identity_nominal(1), 0.01)
        model = fit_urf_model(dataset, FeatureSpec(kind="fourier", count=100, input_dim=1), alpha=0.95)
        for x in np.linspace(-1.5, 1.5, 13):
            truth = 0.9 * x + 0.2 * np.sin(x)
            assert mean_step(model, [x])[0] == pytest.approx(truth, abs=0.05)

    def test_pca_reduces_feature_dimension(self):
        """With reduced_dim the model works in L̂ dimensions and reports retained energy."""
        inputs, successors = smooth_transitions()
        dataset = residual_dataset(inputs, successors, identity_nominal(1), 0.01)
        model = fit_urf_model(
            dataset, FeatureSpec(kind="fourier", count=100, input_dim=1), alpha=0.95, reduced_dim=8
        )
        assert model.feature_dim == 8
        assert model.mean_weights().shape == (1, 8)
        assert model.features.retained_energy() > 0.99

    def test_certainty_equivalent(self):
        """CERF fitting gives singleton sets at the posterior means."""
        inputs, successors = smooth_transitions(50)
        dataset = residual_dataset(inputs, successors, identity_nominal(1), 0.01)
        model = fit_urf_model(
            dataset, FeatureSpec(kind="relu", count=10, input_dim=1), alpha=0.9, certainty_equivalent=True
        )
        assert model.certainty_equivalent
        assert np.array_equal(model.sets[0].center, model.posteriors[0].mean)

    def test_feature_dimension_must_match_data(self):
        """A 2-d feature spec cannot be fitted on 1-d data."""
        inputs, successors = smooth_transitions(20)
        dataset = residual_dataset(inputs, successors, identity_nominal(1), 0.01)
        with pytest.raises(DimensionError, match="input_dim"):
            fit_urf_model(dataset, FeatureSpec(kind="fourier", count=10, input_dim=2), alpha=0.9)


class TestSerialization:
    """Model documents."""

    def test_round_trip_reproduces_predictions(self):
        """A reloaded model regenerates its features and predicts identically."""
        inputs, successors = smooth_transitions(60)
        dataset = residual_dataset(inputs, successors, identity_nominal(1), 0.01)
        model = fit_urf_model(
            dataset, FeatureSpec(kind="fourier", count=30, input_dim=1, seed=11), alpha=0.9, reduced_dim=6
        )
        restored = model_from_dict(model_to_dict(model))
        assert np.array_equal(
            rollout_mean(restored, [0.3], 10).states, rollout_mean(model, [0.3], 10).states
        )
        assert restored.sets[0].level == 0.9

    def test_affine_nominal_round_trip(self):
        """Affine nominal models keep their matrix and offset."""
        model = constant_model(nominal=affine_nominal([[0.5]], [1.0]))
        restored = model_from_dict(model_to_dict(replace(model, features=build_feature_map(model.features.spec))))
        assert restored.nominal.matrix.tolist() == [[0.5]]
        assert restored.nominal.offset.tolist() == [1.0]

    def test_custom_nominal_not_serializable(self):
        """Callables cannot be written to JSON."""
        model = constant_model(nominal=custom_nominal(1, np.sin, lambda x: np.diag(np.cos(x))))
        with pytest.raises(ConfigError, match="custom"):
            model_to_dict(model)

    def test_missing_field(self):
        """A document without outputs names the missing field."""
        data = model_to_dict(random_model())
        del data["outputs"]
        with pytest.raises(ConfigError, match="outputs"):
            model_from_dict(data)
