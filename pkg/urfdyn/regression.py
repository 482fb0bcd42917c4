"""
Bayesian linear regression over random-feature weights.

For one output dimension with features Φ (T × L), residual targets y and known
noise variance σ², the standard Gaussian prior w ~ N(0, I_L) gives the posterior

    Σ = σ² (ΦᵀΦ + σ² I)⁻¹,      μ = (ΦᵀΦ + σ² I)⁻¹ Φᵀy.

The "precision" A = ΦᵀΦ + σ² I and the moment vector Φᵀy are kept on the
posterior, so new data is absorbed by adding to both and re-factorizing. All
solves go through the Cholesky factor of A.

A credible ellipsoid at level α is

    W = { w : (w - μ)ᵀ Σ⁻¹ (w - μ) ≤ χ²_L(α) } = { w : (w - μ)ᵀ S⁻¹ (w - μ) ≤ 1 },

with shape S = χ²_L(α) Σ. Multi-output models keep one posterior and one set
per output dimension; their joint set is the Cartesian product.

The certainty-equivalent (CERF) model is an UncertaintySet flagged
`degenerate`: it contains only its center.
"""

import logging
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy import linalg
from scipy.optimize import brentq
from scipy.special import gammainc

from .errors import ConfigError, DimensionError, NumericalError

logger = logging.getLogger(__name__)

# Eigenvalues of Σ below this are clamped before factorizing.
EIGENVALUE_FLOOR = 1e-12
# Slack on the unit quadratic form in membership tests.
MEMBERSHIP_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class RegressionDataset:
    """Transition inputs with residual targets ŷᵢ = yᵢ - h(xᵢ).

    Attributes:
        inputs: T × d matrix of states xᵢ.
        targets: T × p matrix of residuals.
        noise_std: Observation noise standard deviation σ.
    """

    inputs: np.ndarray
    targets: np.ndarray
    noise_std: float

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.targets.ndim != 2:
            raise DimensionError("dataset inputs and targets must be 2-d matrices")
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise DimensionError(
                f"dataset has {self.inputs.shape[0]} inputs but {self.targets.shape[0]} targets"
            )
        if not self.noise_std > 0:
            raise ConfigError(f"rollouts.noise_std: BLR needs a positive noise level, got {self.noise_std}")

    @property
    def size(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def output_dim(self) -> int:
        return int(self.targets.shape[1])

    @property
    def noise_var(self) -> float:
        return float(self.noise_std**2)


@dataclass(frozen=True, eq=False)
class WeightPosterior:
    """Gaussian posterior N(mean, covariance) over one output dimension's weights."""

    mean: np.ndarray
    covariance: np.ndarray
    covariance_factor: np.ndarray
    noise_var: float
    data_count: int
    precision: np.ndarray
    moment: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])

    def condition_number(self) -> float:
        return float(np.linalg.cond(self.covariance))


@dataclass(frozen=True, eq=False)
class UncertaintySet:
    """Ellipsoid {w : (w - center)ᵀ shape⁻¹ (w - center) ≤ 1}.

    Attributes:
        center: μ.
        shape: S, symmetric positive definite (all zeros when degenerate).
        shape_factor: Lower Cholesky factor F with S = F Fᵀ.
        level: Credible level α_w the set was built for.
        degenerate: True for the CERF singleton {μ}.
    """

    center: np.ndarray
    shape: np.ndarray
    shape_factor: np.ndarray
    level: float
    degenerate: bool = False

    @property
    def dim(self) -> int:
        return int(self.center.shape[0])

    def quadratic_form(self, w) -> float:
        """(w - μ)ᵀ S⁻¹ (w - μ); infinite off-center for a degenerate set."""
        delta = np.asarray(w, dtype=float) - self.center
        if self.degenerate:
            return 0.0 if np.all(np.abs(delta) <= MEMBERSHIP_TOL) else float("inf")
        z = linalg.solve_triangular(self.shape_factor, delta, lower=True)
        return float(z @ z)

    def contains(self, w, tol: float = MEMBERSHIP_TOL) -> bool:
        return self.quadratic_form(w) <= 1.0 + tol


def _check_noise_var(noise_var: float) -> float:
    noise_var = float(noise_var)
    if not (np.isfinite(noise_var) and noise_var > 0):
        raise ConfigError(f"noise_var: must be a positive finite number, got {noise_var}")
    return noise_var


def _floored_cholesky(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cholesky of a symmetric matrix, clamping eigenvalues below EIGENVALUE_FLOOR.

    Returns the (possibly repaired) matrix together with its lower factor.
    """
    matrix = 0.5 * (matrix + matrix.T)
    eigenvalues = np.linalg.eigvalsh(matrix)
    if eigenvalues[0] >= EIGENVALUE_FLOOR:
        return matrix, linalg.cholesky(matrix, lower=True)
    logger.warning(
        "clamping %d covariance eigenvalue(s) below %g",
        int(np.sum(eigenvalues < EIGENVALUE_FLOOR)),
        EIGENVALUE_FLOOR,
    )
    values, vectors = np.linalg.eigh(matrix)
    repaired = (vectors * np.maximum(values, EIGENVALUE_FLOOR)) @ vectors.T
    repaired = 0.5 * (repaired + repaired.T)
    return repaired, linalg.cholesky(repaired, lower=True)


def _posterior_from_statistics(
    precision: np.ndarray, moment: np.ndarray, noise_var: float, data_count: int
) -> WeightPosterior:
    try:
        factor = linalg.cho_factor(precision, lower=True)
    except linalg.LinAlgError as e:
        raise NumericalError(f"posterior precision is not positive definite: {e}") from e
    mean = linalg.cho_solve(factor, moment)
    covariance = noise_var * linalg.cho_solve(factor, np.eye(precision.shape[0]))
    covariance, covariance_factor = _floored_cholesky(covariance)
    return WeightPosterior(
        mean=mean,
        covariance=covariance,
        covariance_factor=covariance_factor,
        noise_var=noise_var,
        data_count=data_count,
        precision=precision,
        moment=moment,
    )


def _check_design(features, targets) -> tuple[np.ndarray, np.ndarray]:
    features = np.asarray(features, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if features.ndim != 2:
        raise DimensionError(f"feature matrix must be 2-d, got shape {features.shape}")
    if targets.shape != (features.shape[0],):
        raise DimensionError(
            f"targets have shape {targets.shape}, expected ({features.shape[0]},)"
        )
    if not (np.all(np.isfinite(features)) and np.all(np.isfinite(targets))):
        raise NumericalError("regression data contains non-finite entries")
    return features, targets


def fit_blr(features, targets, noise_var: float) -> WeightPosterior:
    """Posterior over weights under the N(0, I) prior.

    Args:
        features: T × L feature matrix Φ(X) (T may be 0).
        targets: Length-T residual targets for one output dimension.
        noise_var: Known noise variance σ².
    """
    noise_var = _check_noise_var(noise_var)
    features, targets = _check_design(features, targets)
    precision = features.T @ features + noise_var * np.eye(features.shape[1])
    moment = features.T @ targets
    return _posterior_from_statistics(precision, moment, noise_var, features.shape[0])


def update_blr(posterior: WeightPosterior, new_features, new_targets) -> WeightPosterior:
    """Absorb new rows; equal to refitting on the concatenated data."""
    new_features, new_targets = _check_design(new_features, new_targets)
    if new_features.shape[1] != posterior.dim:
        raise DimensionError(
            f"new features have {new_features.shape[1]} columns, posterior has {posterior.dim}"
        )
    if new_features.shape[0] == 0:
        return posterior
    return _posterior_from_statistics(
        posterior.precision + new_features.T @ new_features,
        posterior.moment + new_features.T @ new_targets,
        posterior.noise_var,
        posterior.data_count + new_features.shape[0],
    )


def fit_multi_output(features, targets, noise_var: float) -> list[WeightPosterior]:
    """One independent posterior per column of a T × p target matrix."""
    targets = np.asarray(targets, dtype=float)
    if targets.ndim != 2:
        raise DimensionError(f"targets must be a T x p matrix, got shape {targets.shape}")
    posteriors = [fit_blr(features, targets[:, d], noise_var) for d in range(targets.shape[1])]
    for d, posterior in enumerate(posteriors):
        logger.info(
            "output %d: posterior covariance condition number %.3e", d, posterior.condition_number()
        )
    return posteriors


def predictive_variance(posterior: WeightPosterior, phi) -> float:
    """Variance of a new noisy observation at features φ: σ² + φᵀΣφ."""
    phi = np.asarray(phi, dtype=float)
    return float(posterior.noise_var + phi @ posterior.covariance @ phi)


def _check_level(alpha: float, field: str = "alpha") -> float:
    alpha = float(alpha)
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"{field}: must lie strictly between 0 and 1, got {alpha}")
    return alpha


def chi2_quantile(dof: int, alpha: float) -> float:
    """Quantile q of the χ² distribution: P(dof/2, q/2) = alpha.

    Solved with Brent's method on the regularized lower incomplete gamma
    function after doubling an upper bracket until it covers alpha.
    """
    if int(dof) < 1:
        raise ConfigError(f"dof: must be >= 1, got {dof}")
    alpha = _check_level(alpha)
    half_dof = 0.5 * int(dof)

    def excess(q: float) -> float:
        return float(gammainc(half_dof, 0.5 * q)) - alpha

    lo, hi = 0.0, max(float(dof), 1.0)
    while excess(hi) < 0.0:
        lo, hi = hi, 2.0 * hi
    return float(brentq(excess, lo, hi, xtol=1e-12, rtol=4 * np.finfo(float).eps, maxiter=500))


def credible_set(
    posterior: WeightPosterior, alpha: float, certainty_equivalent: bool = False
) -> UncertaintySet:
    """Credible ellipsoid at level alpha, or the CERF singleton {μ}."""
    alpha = _check_level(alpha)
    if certainty_equivalent:
        zeros = np.zeros((posterior.dim, posterior.dim))
        return UncertaintySet(
            center=posterior.mean, shape=zeros, shape_factor=zeros, level=alpha, degenerate=True
        )
    radius2 = chi2_quantile(posterior.dim, alpha)
    return UncertaintySet(
        center=posterior.mean,
        shape=radius2 * posterior.covariance,
        shape_factor=np.sqrt(radius2) * posterior.covariance_factor,
        level=alpha,
    )


def sample_uniform(uset: UncertaintySet, rng: np.random.Generator, count: int = 1) -> np.ndarray:
    """Draw `count` points uniformly from the ellipsoid (shape (count, L)).

    A direction uniform on the unit sphere is scaled by a radius r = U^(1/L)
    (uniform-in-ball law) and mapped through the shape factor.
    """
    if uset.degenerate:
        return np.tile(uset.center, (count, 1))
    directions = rng.standard_normal((count, uset.dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = rng.uniform(0.0, 1.0, size=count) ** (1.0 / uset.dim)
    return uset.center + (radii[:, None] * directions) @ uset.shape_factor.T


def _matrix_block(matrix: np.ndarray) -> dict[str, Any]:
    return {"rows": int(matrix.shape[0]), "cols": int(matrix.shape[1]), "data": matrix.ravel().tolist()}


def _read_block(block: dict[str, Any]) -> np.ndarray:
    data = np.asarray(block["data"], dtype=float)
    return data.reshape(int(block["rows"]), int(block["cols"]))


def posterior_to_dict(posterior: WeightPosterior) -> dict[str, Any]:
    """Serialize a posterior for model.json.

    Matrices are stored as row-major blocks with explicit dimensions. The
    precision and moment are kept alongside the covariance so a reloaded
    posterior can be passed straight to update_blr.

    Args:
        posterior: Fitted BLR posterior for one output dimension.

    Returns:
        JSON-ready dict; floats survive a round trip exactly.
    """
    return {
        "mean": posterior.mean.tolist(),
        "covariance": _matrix_block(posterior.covariance),
        "covariance_factor": _matrix_block(posterior.covariance_factor),
        "precision": _matrix_block(posterior.precision),
        "moment": posterior.moment.tolist(),
        "noise_var": posterior.noise_var,
        "data_count": posterior.data_count,
    }


def posterior_from_dict(data: dict[str, Any]) -> WeightPosterior:
    """Rebuild a posterior written by posterior_to_dict.

    Args:
        data: Document with mean, covariance, covariance_factor, precision,
            moment, noise_var and data_count.

    Returns:
        The posterior, ready for update_blr or credible_set.
    """
    return WeightPosterior(
        mean=np.asarray(data["mean"], dtype=float),
        covariance=_read_block(data["covariance"]),
        covariance_factor=_read_block(data["covariance_factor"]),
        noise_var=float(data["noise_var"]),
        data_count=int(data["data_count"]),
        precision=_read_block(data["precision"]),
        moment=np.asarray(data["moment"], dtype=float),
    )


def set_to_dict(uset: UncertaintySet) -> dict[str, Any]:
    """Serialize a credible set (center, shape matrix, its factor, level)."""
    return {
        "center": uset.center.tolist(),
        "shape": _matrix_block(uset.shape),
        "shape_factor": _matrix_block(uset.shape_factor),
        "level": uset.level,
        "degenerate": uset.degenerate,
    }


def set_from_dict(data: dict[str, Any]) -> UncertaintySet:
    """Inverse of set_to_dict.

    Args:
        data: Document produced by set_to_dict.

    Returns:
        The uncertainty set, degenerate flag included.
    """
    return UncertaintySet(
        center=np.asarray(data["center"], dtype=float),
        shape=_read_block(data["shape"]),
        shape_factor=_read_block(data["shape_factor"]),
        level=float(data["level"]),
        degenerate=bool(data["degenerate"]),
    )
