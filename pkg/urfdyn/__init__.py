"""
urfdyn - uncertainty-aware random feature dynamics.

Learn set-valued one-step dynamics models from trajectory data (random
features, Bayesian linear regression, credible ellipsoids) and bound the
worst-case and best-case trajectory cost over the learned uncertainty set
with a minimum-principle shooting solver.

The package re-exports its public API here, grouped by source module, so
callers can write `from urfdyn import fit_blr, solve` without knowing the
internal layout. Anything not listed in __all__ is internal.
"""

from .config import DEFAULT_CONFIG, UNVALIDATED_DEFAULTS, ExperimentConfig, load_experiment_config, provenance
from .console import configure_logging, console
from .dynamics import (
    NominalModel,
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
from .errors import ConfigError, DimensionError, DivergenceError, NumericalError, StorageError, UrfError
from .features import (
    FeatureKind,
    FeatureMap,
    FeatureSpec,
    build_feature_map,
    evaluate,
    feature_jacobian,
    feature_matrix,
    fit_pca_projection,
    make_generator,
)
from .regression import (
    RegressionDataset,
    UncertaintySet,
    WeightPosterior,
    chi2_quantile,
    credible_set,
    fit_blr,
    fit_multi_output,
    predictive_variance,
    sample_uniform,
    update_blr,
)
from .systems import (
    IntegratorMethod,
    IntegratorSpec,
    ReferenceSystem,
    RolloutConfig,
    SystemKind,
    generate_dataset,
    make_cost,
    make_system,
    observe,
    pendulum_embed,
    simulate,
    stage_cost,
    true_step,
)
from .worstcase import (
    CostBounds,
    CostFunction,
    CostKind,
    Direction,
    Schedule,
    SolverConfig,
    WorstCaseResult,
    backward_pass,
    cost_bounds,
    feasibility_violations,
    hamiltonian,
    minimize_hamiltonian_step,
    solve,
    solve_exact,
    trajectory_cost,
    weight_gradients,
)

__all__ = [
    # Config: experiment documents, defaults and provenance
    "DEFAULT_CONFIG",
    "UNVALIDATED_DEFAULTS",
    "ExperimentConfig",
    "load_experiment_config",
    "provenance",
    # Console: shared Rich console and logging setup
    "configure_logging",
    "console",
    # Dynamics: set-valued URF model, rollouts, uncertainty tubes
    "NominalModel",
    "Trajectory",
    "TubeMode",
    "UrfModel",
    "affine_nominal",
    "custom_nominal",
    "fit_urf_model",
    "identity_nominal",
    "mean_step",
    "model_from_dict",
    "model_to_dict",
    "residual_dataset",
    "rollout_mean",
    "rollout_with_weights",
    "sample_uncertainty_tube",
    "step_with_weights",
    "transition_jacobian",
    # Errors: exception hierarchy mapped onto CLI exit codes
    "ConfigError",
    "DimensionError",
    "DivergenceError",
    "NumericalError",
    "StorageError",
    "UrfError",
    # Features: random Fourier/ReLU feature maps and PCA compression
    "FeatureKind",
    "FeatureMap",
    "FeatureSpec",
    "build_feature_map",
    "evaluate",
    "feature_jacobian",
    "feature_matrix",
    "fit_pca_projection",
    "make_generator",
    # Regression: Bayesian linear regression and credible ellipsoids
    "RegressionDataset",
    "UncertaintySet",
    "WeightPosterior",
    "chi2_quantile",
    "credible_set",
    "fit_blr",
    "fit_multi_output",
    "predictive_variance",
    "sample_uniform",
    "update_blr",
    # Systems: reference plants, integrators, costs, data generation
    "IntegratorMethod",
    "IntegratorSpec",
    "ReferenceSystem",
    "RolloutConfig",
    "SystemKind",
    "generate_dataset",
    "make_cost",
    "make_system",
    "observe",
    "pendulum_embed",
    "simulate",
    "stage_cost",
    "true_step",
    # Worst case: minimum-principle / Frank-Wolfe solver and cost bounds
    "CostBounds",
    "CostFunction",
    "CostKind",
    "Direction",
    "Schedule",
    "SolverConfig",
    "WorstCaseResult",
    "backward_pass",
    "cost_bounds",
    "feasibility_violations",
    "hamiltonian",
    "minimize_hamiltonian_step",
    "solve",
    "solve_exact",
    "trajectory_cost",
    "weight_gradients",
]
