"""
Random feature maps approximating universal kernels.

Two feature families are supported:

  - Random Fourier features (RFF) for the Gaussian RBF kernel
    k(x, x') = exp(-||x - x'||² / 2l²):

        φ̂ᵢ(x) = √(2/L) · cos(aᵢᵀx + bᵢ),   aᵢ ~ N(0, l⁻² I_d),  bᵢ ~ U[0, 2π)

    so that Σᵢ φ̂ᵢ(x) φ̂ᵢ(x') ≈ k(x, x').

  - Random ReLU features:

        φ̂ᵢ(x) = max(0, aᵢᵀx + bᵢ),   aᵢ ~ N(0, I_d),  bᵢ ~ N(0, 1)

A FeatureMap can additionally carry a PCA projection P (L̂ × L, orthonormal
rows) fitted on training inputs, in which case every evaluation returns
ψ̂(x) = P φ̂(x). The projection is a thin SVD of the T × L feature matrix, which
spans the same subspace as an eigendecomposition of the Gram matrix without
forming it.

Reproducibility:
  Directions and offsets are drawn from `numpy.random.Generator` backed by the
  counter-based Philox bit generator. Normals use numpy's ziggurat sampler and
  uniforms the 53-bit double conversion, both fixed algorithms in numpy ≥ 1.17,
  so a FeatureSpec always regenerates the same A and b. This is what lets the
  serialized form store only the spec and the (fitted) projection.
"""

import logging
from dataclasses import dataclass, replace
from enum import StrEnum
from typing import Any

import numpy as np

from .errors import ConfigError, DimensionError, NumericalError

logger = logging.getLogger(__name__)


class FeatureKind(StrEnum):
    FOURIER = "fourier"
    RELU = "relu"


@dataclass(frozen=True)
class FeatureSpec:
    """Hyperparameters that fully determine a random feature basis.

    Attributes:
        kind: Feature family.
        count: Number of raw features L.
        input_dim: State dimension d.
        lengthscale: RBF lengthscale l (Fourier features only).
        seed: Seed of the Philox generator (unsigned 64-bit).
    """

    kind: FeatureKind
    count: int
    input_dim: int
    lengthscale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "kind", FeatureKind(self.kind))
        except ValueError as e:
            raise ConfigError(f"features.kind: unknown feature kind {self.kind!r}") from e
        if int(self.count) < 1:
            raise ConfigError(f"features.count: must be >= 1, got {self.count}")
        if int(self.input_dim) < 1:
            raise ConfigError(f"features.input_dim: must be >= 1, got {self.input_dim}")
        if self.kind is FeatureKind.FOURIER and not (
            np.isfinite(self.lengthscale) and self.lengthscale > 0
        ):
            raise ConfigError(f"features.lengthscale: must be > 0, got {self.lengthscale}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError(f"features.seed: must be an unsigned 64-bit integer, got {self.seed}")


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """A frozen random feature basis, optionally PCA-projected.

    Attributes:
        spec: The FeatureSpec the basis was drawn from.
        directions: A, shape (L, d).
        offsets: b, shape (L,).
        projection: Optional P, shape (L̂, L), orthonormal rows.
        spectrum: Singular values of the training feature matrix when a
            projection was fitted (used for energy reporting).
    """

    spec: FeatureSpec
    directions: np.ndarray
    offsets: np.ndarray
    projection: np.ndarray | None = None
    spectrum: np.ndarray | None = None

    def __post_init__(self):
        for array in (self.directions, self.offsets, self.projection, self.spectrum):
            if array is not None:
                array.setflags(write=False)

    @property
    def raw_dim(self) -> int:
        return self.spec.count

    @property
    def output_dim(self) -> int:
        """L̂ when a projection is attached, otherwise L."""
        if self.projection is not None:
            return int(self.projection.shape[0])
        return self.spec.count

    @property
    def input_dim(self) -> int:
        return self.spec.input_dim

    def retained_energy(self) -> float | None:
        """Fraction Σ_{i≤L̂} σᵢ² / Σᵢ σᵢ² kept by the projection, if any."""
        if self.projection is None or self.spectrum is None:
            return None
        energy = self.spectrum**2
        return float(energy[: self.output_dim].sum() / energy.sum())


def make_generator(seed: int) -> np.random.Generator:
    """Counter-based Philox generator used for every random draw in the package."""
    return np.random.Generator(np.random.Philox(int(seed)))


def build_feature_map(spec: FeatureSpec) -> FeatureMap:
    """Draw the directions and offsets of a feature basis from its spec."""
    rng = make_generator(spec.seed)
    shape = (spec.count, spec.input_dim)
    if spec.kind is FeatureKind.FOURIER:
        directions = rng.normal(0.0, 1.0 / spec.lengthscale, size=shape)
        offsets = rng.uniform(0.0, 2.0 * np.pi, size=spec.count)
    else:
        directions = rng.standard_normal(size=shape)
        offsets = rng.standard_normal(size=spec.count)
    return FeatureMap(spec=spec, directions=directions, offsets=offsets)


def _as_state(feature_map: FeatureMap, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (feature_map.input_dim,):
        raise DimensionError(
            f"state has shape {x.shape}, feature map expects ({feature_map.input_dim},)"
        )
    return x


def _raw_features(feature_map: FeatureMap, pre: np.ndarray) -> np.ndarray:
    if feature_map.spec.kind is FeatureKind.FOURIER:
        return np.sqrt(2.0 / feature_map.raw_dim) * np.cos(pre)
    return np.maximum(0.0, pre)


def evaluate(feature_map: FeatureMap, x) -> np.ndarray:
    """Feature vector φ̂(x) (or P φ̂(x) when projected) for one state."""
    x = _as_state(feature_map, x)
    phi = _raw_features(feature_map, feature_map.directions @ x + feature_map.offsets)
    if feature_map.projection is not None:
        return feature_map.projection @ phi
    return phi


def raw_feature_matrix(feature_map: FeatureMap, inputs) -> np.ndarray:
    """Unprojected T × L feature matrix Φ(X)."""
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[1] != feature_map.input_dim:
        raise DimensionError(
            f"inputs have shape {inputs.shape}, expected (T, {feature_map.input_dim})"
        )
    return _raw_features(feature_map, inputs @ feature_map.directions.T + feature_map.offsets)


def feature_matrix(feature_map: FeatureMap, inputs) -> np.ndarray:
    """T × output_dim feature matrix, projected when the map carries a projection."""
    phi = raw_feature_matrix(feature_map, inputs)
    if feature_map.projection is not None:
        return phi @ feature_map.projection.T
    return phi


def feature_jacobian(feature_map: FeatureMap, x) -> np.ndarray:
    """Jacobian ∂φ̂/∂x of shape (output_dim, d).

    ReLU rows are zero where the pre-activation is exactly 0.
    """
    x = _as_state(feature_map, x)
    pre = feature_map.directions @ x + feature_map.offsets
    if feature_map.spec.kind is FeatureKind.FOURIER:
        scale = -np.sqrt(2.0 / feature_map.raw_dim) * np.sin(pre)
    else:
        scale = (pre > 0.0).astype(float)
    jacobian = scale[:, None] * feature_map.directions
    if feature_map.projection is not None:
        return feature_map.projection @ jacobian
    return jacobian


def fit_pca_projection(feature_map: FeatureMap, inputs, reduced_dim: int) -> FeatureMap:
    """Attach a rank-L̂ PCA projection fitted on the features of `inputs`.

    The rows of P are the top-L̂ right singular vectors of Φ(X).

    Raises:
        ConfigError: reduced_dim outside [1, min(L, T)] or map already projected.
        NumericalError: Φ(X) has numerical rank below reduced_dim.
    """
    if feature_map.projection is not None:
        raise ConfigError("pca.reduced_dim: feature map already carries a projection")
    phi = raw_feature_matrix(feature_map, inputs)
    samples, count = phi.shape
    if not 1 <= reduced_dim <= min(count, samples):
        raise ConfigError(
            f"pca.reduced_dim: must lie in [1, {min(count, samples)}] "
            f"(L={count}, T={samples}), got {reduced_dim}"
        )

    _, singular_values, right_vectors = np.linalg.svd(phi, full_matrices=False)
    # Same threshold numpy.linalg.matrix_rank uses.
    tol = singular_values[0] * max(samples, count) * np.finfo(float).eps
    rank = int(np.sum(singular_values > tol))
    if rank < reduced_dim:
        raise NumericalError(
            f"feature matrix has numerical rank {rank}, cannot project to {reduced_dim} dimensions"
        )

    projected = replace(
        feature_map,
        projection=np.ascontiguousarray(right_vectors[:reduced_dim]),
        spectrum=singular_values,
    )
    logger.info(
        "PCA projection %d -> %d retains %.4f of spectral energy",
        count,
        reduced_dim,
        projected.retained_energy(),
    )
    return projected


def feature_map_to_dict(feature_map: FeatureMap) -> dict[str, Any]:
    """JSON-ready form; directions and offsets are regenerated from the seed on load."""
    spec = feature_map.spec
    data: dict[str, Any] = {
        "kind": str(spec.kind),
        "L": spec.count,
        "d": spec.input_dim,
        "lengthscale": spec.lengthscale,
        "seed": spec.seed,
    }
    if feature_map.projection is not None:
        data["projection"] = feature_map.projection.ravel().tolist()
        data["proj_rows"] = int(feature_map.projection.shape[0])
        if feature_map.spectrum is not None:
            data["spectrum"] = feature_map.spectrum.tolist()
    return data


def feature_map_from_dict(data: dict[str, Any]) -> FeatureMap:
    """Rebuild a feature map from feature_map_to_dict output.

    Directions and offsets are regenerated from the stored spec and seed,
    then the PCA projection (if any) is reattached.

    Args:
        data: Document with kind, L, d, lengthscale and seed, plus optional
            projection, proj_rows and spectrum.

    Returns:
        The feature map, projected when the document carries a projection.

    Raises:
        ConfigError: A required field is missing.
        DimensionError: The projection does not have proj_rows x L entries.
    """
    try:
        spec = FeatureSpec(
            kind=data["kind"],
            count=int(data["L"]),
            input_dim=int(data["d"]),
            lengthscale=float(data["lengthscale"]),
            seed=int(data["seed"]),
        )
    except KeyError as e:
        raise ConfigError(f"feature map document is missing field {e.args[0]!r}") from e
    feature_map = build_feature_map(spec)
    if data.get("projection") is None:
        return feature_map
    rows = int(data["proj_rows"])
    projection = np.asarray(data["projection"], dtype=float)
    if projection.size != rows * spec.count:
        raise DimensionError(
            f"projection has {projection.size} entries, expected {rows} x {spec.count}"
        )
    spectrum = data.get("spectrum")
    return replace(
        feature_map,
        projection=projection.reshape(rows, spec.count),
        spectrum=None if spectrum is None else np.asarray(spectrum, dtype=float),
    )
