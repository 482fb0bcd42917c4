"""
Tests for the random feature maps (urfdyn/features.py).

Organized around the life of a FeatureMap:

  1. **TestBuildFeatureMap**: drawing A and b from a FeatureSpec, seeding,
     and spec validation.
  2. **TestEvaluate**: feature values, including the kernel approximation
     the Fourier features exist for.
  3. **TestFeatureJacobian**: analytic Jacobians against central finite
     differences.
  4. **TestPcaProjection**: thin-SVD compression, rank checks and energy
     reporting.
  5. **TestSerialization**: dict round trips regenerate the basis from the seed.

Hand-built maps (A = 0, b = 0, ...) are constructed directly through the
FeatureMap dataclass so the expected values can be computed by hand.
"""

import numpy as np
import pytest

from urfdyn.errors import ConfigError, DimensionError, NumericalError
from urfdyn.features import (
    FeatureKind,
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
    raw_feature_matrix,
)


def hand_map(kind: str, directions, offsets) -> FeatureMap:
    directions = np.asarray(directions, dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    spec = FeatureSpec(kind=kind, count=directions.shape[0], input_dim=directions.shape[1])
    return FeatureMap(spec=spec, directions=directions, offsets=offsets)


def finite_difference_jacobian(feature_map: FeatureMap, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    columns = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        columns.append((evaluate(feature_map, x + e) - evaluate(feature_map, x - e)) / (2 * step))
    return np.column_stack(columns)


class TestBuildFeatureMap:
    """Drawing the random basis from a spec."""

    def test_fourier_shapes_and_offset_range(self):
        """L=1000, d=2 Fourier map: A is 1000×2 and every b lies in [0, 2π)."""
        fmap = build_feature_map(FeatureSpec(kind="fourier", count=1000, input_dim=2, lengthscale=1.0, seed=7))
        assert fmap.directions.shape == (1000, 2)
        assert fmap.offsets.shape == (1000,)
        assert np.all(fmap.offsets >= 0.0)
        assert np.all(fmap.offsets < 2 * np.pi)
        assert fmap.output_dim == 1000

    def test_directions_scale_with_lengthscale(self):
        """A entries have standard deviation 1/l."""
        fmap = build_feature_map(FeatureSpec(kind="fourier", count=5000, input_dim=2, lengthscale=2.0, seed=1))
        assert np.std(fmap.directions) == pytest.approx(0.5, rel=0.05)

    def test_huge_lengthscale_collapses_frequencies(self):
        """l → ∞ (approximated by 1e12) puts the single direction at ≈ 0."""
        fmap = build_feature_map(FeatureSpec(kind="fourier", count=1, input_dim=1, lengthscale=1e12, seed=3))
        assert abs(fmap.directions[0, 0]) < 1e-9

    def test_same_spec_is_bit_identical(self):
        """Two builds from one spec give identical A and b."""
        spec = FeatureSpec(kind="fourier", count=50, input_dim=3, seed=11)
        first, second = build_feature_map(spec), build_feature_map(spec)
        assert np.array_equal(first.directions, second.directions)
        assert np.array_equal(first.offsets, second.offsets)

    def test_different_seeds_differ(self):
        """Changing the seed changes the basis."""
        a = build_feature_map(FeatureSpec(kind="relu", count=20, input_dim=2, seed=1))
        b = build_feature_map(FeatureSpec(kind="relu", count=20, input_dim=2, seed=2))
        assert not np.array_equal(a.directions, b.directions)

    def test_arrays_are_read_only(self):
        """A frozen map cannot be mutated in place."""
        fmap = build_feature_map(FeatureSpec(kind="fourier", count=4, input_dim=2))
        with pytest.raises(ValueError):
            fmap.directions[0, 0] = 1.0

    @pytest.mark.parametrize(
        "kwargs, field",
        [
            ({"kind": "fourier", "count": 0, "input_dim": 2}, "features.count"),
            ({"kind": "fourier", "count": 5, "input_dim": 0}, "features.input_dim"),
            ({"kind": "fourier", "count": 5, "input_dim": 2, "lengthscale": 0.0}, "features.lengthscale"),
            ({"kind": "sigmoid", "count": 5, "input_dim": 2}, "features.kind"),
            ({"kind": "relu", "count": 5, "input_dim": 2, "seed": -1}, "features.seed"),
        ],
    )
    def test_invalid_spec_names_field(self, kwargs, field):
        """Invalid spec values raise ConfigError naming the offending field."""
        with pytest.raises(ConfigError, match=field):
            FeatureSpec(**kwargs)

    def test_relu_ignores_lengthscale(self):
        """ReLU specs accept any lengthscale value."""
        spec = FeatureSpec(kind="relu", count=3, input_dim=1, lengthscale=-1.0)
        assert spec.kind is FeatureKind.RELU

    def test_philox_generator(self):
        """The package generator is counter-based Philox."""
        assert isinstance(make_generator(0).bit_generator, np.random.Philox)


class TestEvaluate:
    """Feature values."""

    def test_fourier_constant_features(self):
        """A = 0, b = 0, L = 2 gives (1, 1) for any x."""
        fmap = hand_map("fourier", np.zeros((2, 3)), np.zeros(2))
        assert np.allclose(evaluate(fmap, [0.3, -1.0, 4.0]), [1.0, 1.0])

    def test_relu_negative_preactivation(self):
        """a = 1, b = 0 at x = -1 yields 0."""
        fmap = hand_map("relu", [[1.0]], [0.0])
        assert evaluate(fmap, [-1.0])[0] == 0.0
        assert evaluate(fmap, [2.5])[0] == 2.5

    def test_rbf_kernel_single_pair(self):
        """Σ φ̂ᵢ(x) φ̂ᵢ(x') ≈ e^(-1/2) for x=(0,0), x'=(1,0) at L=1000."""
        fmap = build_feature_map(FeatureSpec(kind="fourier", count=1000, input_dim=2, seed=0))
        approx = evaluate(fmap, [0.0, 0.0]) @ evaluate(fmap, [1.0, 0.0])
        assert abs(approx - np.exp(-0.5)) <= 0.08

    def test_rbf_kernel_mean_error(self):
        """Mean absolute kernel error over 100 pairs is ≤ 0.05, averaged over 5 seeds."""
        errors = []
        for seed in range(5):
            fmap = build_feature_map(FeatureSpec(kind="fourier", count=1000, input_dim=2, seed=seed))
            rng = np.random.default_rng(100 + seed)
            x = rng.uniform(-1.5, 1.5, size=(100, 2))
            offset = rng.normal(size=(100, 2))
            offset *= rng.uniform(0, 3.0, size=(100, 1)) / np.linalg.norm(offset, axis=1, keepdims=True)
            xp = x + offset
            approx = np.sum(feature_matrix(fmap, x) * feature_matrix(fmap, xp), axis=1)
            exact = np.exp(-0.5 * np.sum((x - xp) ** 2, axis=1))
            errors.append(np.mean(np.abs(approx - exact)))
        assert np.mean(errors) <= 0.05

    def test_deterministic(self):
        """Evaluating the same state twice is bit-identical."""
        fmap = build_feature_map(FeatureSpec(kind="fourier", count=30, input_dim=2, seed=5))
        assert np.array_equal(evaluate(fmap, [0.1, 0.2]), evaluate(fmap, [0.1, 0.2]))

    def test_matrix_rows_match_evaluate(self):
        """Each feature_matrix row equals evaluate on that input."""
        fmap = build_feature_map(FeatureSpec(kind="relu", count=12, input_dim=2, seed=2))
        inputs = np.random.default_rng(0).normal(size=(6, 2))
        phi = feature_matrix(fmap, inputs)
        for row, x in zip(phi, inputs, strict=True):
            assert np.allclose(row, evaluate(fmap, x), atol=1e-14)

    def test_wrong_state_dimension(self):
        """A state of the wrong length raises DimensionError."""
        fmap = build_feature_map(FeatureSpec(kind="fourier", count=4, input_dim=2))
        with pytest.raises(DimensionError):
            evaluate(fmap, [1.0, 2.0, 3.0])
        with pytest.raises(DimensionError):
            feature_matrix(fmap, np.zeros((4, 3)))


class TestFeatureJacobian:
    """Analytic Jacobians of the feature map."""

    def test_constant_fourier_features_have_zero_jacobian(self):
        """A = 0 gives the zero matrix."""
        fmap = hand_map("fourier", np.zeros((3, 2)), np.zeros(3))
        assert np.array_equal(feature_jacobian(fmap, [0.5, -0.5]), np.zeros((3, 2)))

    def test_relu_zero_preactivation_row_is_zero(self):
        """Pre-activation exactly 0 uses derivative 0."""
        fmap = hand_map("relu", [[1.0, 2.0], [1.0, 0.0]], [0.0, 1.0])
        jac = feature_jacobian(fmap, [0.0, 0.0])
        assert np.array_equal(jac[0], [0.0, 0.0])
        assert np.array_equal(jac[1], [1.0, 0.0])

    @pytest.mark.parametrize("kind", ["fourier", "relu"])
    @pytest.mark.parametrize("projected", [False, True])
    def test_matches_finite_differences(self, kind, projected):
        """Relative error ≤ 1e-5 against central differences at 20 random points."""
        fmap = build_feature_map(FeatureSpec(kind=kind, count=40, input_dim=3, seed=9))
        rng = np.random.default_rng(4)
        if projected:
            fmap = fit_pca_projection(fmap, rng.normal(size=(60, 3)), 10)
        for x in rng.normal(size=(20, 3)):
            analytic = feature_jacobian(fmap, x)
            numeric = finite_difference_jacobian(fmap, x)
            scale = max(np.max(np.abs(numeric)), 1e-8)
            assert np.max(np.abs(analytic - numeric)) / scale <= 1e-5


class TestPcaProjection:
    """Compression of the feature basis by thin SVD."""

    def test_full_rank_projection_is_lossless(self):
        """L̂ = L: P is orthogonal and the Gram matrix is unchanged."""
        fmap = build_feature_map(FeatureSpec(kind="fourier", count=20, input_dim=2, seed=1))
        inputs = np.random.default_rng(1).normal(size=(60, 2))
        projected = fit_pca_projection(fmap, inputs, 20)
        P = projected.projection
        assert np.allclose(P @ P.T, np.eye(20), atol=1e-10)
        assert np.allclose(P.T @ P, np.eye(20), atol=1e-10)
        raw = raw_feature_matrix(fmap, inputs)
        proj = feature_matrix(projected, inputs)
        assert np.allclose(proj @ proj.T, raw @ raw.T, atol=1e-8)

    def test_projection_rows_orthonormal(self):
        """P Pᵀ = I of size L̂ and the output dimension becomes L̂."""
        fmap = build_feature_map(FeatureSpec(kind="fourier", count=100, input_dim=2, seed=1))
        projected = fit_pca_projection(fmap, np.random.default_rng(2).normal(size=(80, 2)), 15)
        assert projected.output_dim == 15
        assert projected.raw_dim == 100
        assert np.allclose(projected.projection @ projected.projection.T, np.eye(15), atol=1e-10)

    def test_projected_inner_products(self):
        """Projected features equal P φ(x) computed by explicit products."""
        fmap = build_feature_map(FeatureSpec(kind="relu", count=30, input_dim=2, seed=3))
        projected = fit_pca_projection(fmap, np.random.default_rng(3).normal(size=(50, 2)), 8)
        x, xp = np.array([0.2, -0.4]), np.array([1.0, 0.5])
        P = projected.projection
        explicit = (P @ evaluate(fmap, x)) @ (P @ evaluate(fmap, xp))
        assert evaluate(projected, x) @ evaluate(projected, xp) == pytest.approx(explicit, abs=1e-12)

    def test_identical_inputs_are_rank_deficient(self):
        """Identical inputs give rank 1; asking for L̂ = 2 raises NumericalError."""
        fmap = build_feature_map(FeatureSpec(kind="fourier", count=10, input_dim=2, seed=0))
        with pytest.raises(NumericalError, match="rank 1"):
            fit_pca_projection(fmap, np.ones((20, 2)), 2)

    def test_reduced_dim_out_of_range(self):
        """L̂ outside [1, min(L, T)] is a configuration error."""
        fmap = build_feature_map(FeatureSpec(kind="fourier", count=10, input_dim=2))
        inputs = np.random.default_rng(0).normal(size=(5, 2))
        with pytest.raises(ConfigError, match="pca.reduced_dim"):
            fit_pca_projection(fmap, inputs, 6)
        with pytest.raises(ConfigError, match="pca.reduced_dim"):
            fit_pca_projection(fmap, inputs, 0)

    def test_cannot_project_twice(self):
        """A projected map rejects a second projection."""
        fmap = build_feature_map(FeatureSpec(kind="fourier", count=10, input_dim=2))
        inputs = np.random.default_rng(0).normal(size=(20, 2))
        with pytest.raises(ConfigError):
            fit_pca_projection(fit_pca_projection(fmap, inputs, 3), inputs, 2)

    def test_retained_energy_matches_dense_svd(self):
        """Energy fraction equals the dense-SVD oracle to 1e-8."""
        fmap = build_feature_map(FeatureSpec(kind="fourier", count=300, input_dim=2, seed=4))
        inputs = np.random.default_rng(5).uniform(-2, 2, size=(250, 2))
        projected = fit_pca_projection(fmap, inputs, 30)
        singular = np.linalg.svd(raw_feature_matrix(fmap, inputs), compute_uv=False)
        oracle = np.sum(singular[:30] ** 2) / np.sum(singular**2)
        assert projected.retained_energy() == pytest.approx(oracle, abs=1e-8)
        assert build_feature_map(fmap.spec).retained_energy() is None


class TestSerialization:
    """Feature map documents."""

    def test_round_trip_with_projection(self):
        """Reloaded maps evaluate identically."""
        fmap = build_feature_map(FeatureSpec(kind="fourier", count=25, input_dim=2, lengthscale=0.7, seed=8))
        fmap = fit_pca_projection(fmap, np.random.default_rng(8).normal(size=(40, 2)), 6)
        restored = feature_map_from_dict(feature_map_to_dict(fmap))
        x = np.array([0.3, 0.9])
        assert np.array_equal(evaluate(restored, x), evaluate(fmap, x))
        assert restored.retained_energy() == fmap.retained_energy()

    def test_missing_field(self):
        """A document without the seed is a ConfigError."""
        data = feature_map_to_dict(build_feature_map(FeatureSpec(kind="relu", count=2, input_dim=1)))
        del data["seed"]
        with pytest.raises(ConfigError, match="seed"):
            feature_map_from_dict(data)
