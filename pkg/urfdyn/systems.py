"""
Reference plants, integrators, stage costs and training-data generation.

Three ground-truth systems, all with a 2-d native state:

  - source spiral:   x⁺ = A x + cos(B x + c)   (discrete map; A = 1.05 · R(0.25),
                     B entries ~ N(0, 0.25), c ~ U(0, 2π) drawn from the system seed)
  - Van der Pol:     ẋ₁ = (1 - x₂²) x₁ - x₂,  ẋ₂ = x₁   (RK4; implemented as printed
                     in the source experiments, which swaps the textbook roles of
                     the two coordinates)
  - damped pendulum: θ̇ = v,  v̇ = -(g/l) sin θ - β/(m l²) v   (semi-implicit Euler)

The pendulum is learned on the embedded state (l cos θ, l sin θ, v); see
`pendulum_embed`. Everything here is a pure function of immutable configs and
explicit seeds.
"""

import logging
from dataclasses import dataclass
from enum import StrEnum
from typing import Any, NamedTuple

import numpy as np

from .dynamics import NominalModel, identity_nominal, residual_dataset
from .errors import ConfigError, DimensionError
from .features import make_generator
from .regression import RegressionDataset
from .worstcase import CostFunction, CostKind

logger = logging.getLogger(__name__)

SPIRAL_GROWTH = 1.05
SPIRAL_ANGLE = 0.25
SPIRAL_FREQUENCY_STD = 0.5  # variance 0.25
DEFAULT_DT = 0.05
PENDULUM_UPRIGHT_VELOCITY_WEIGHT = 0.1
MIN_NOISE_STD = 1e-6


class SystemKind(StrEnum):
    SOURCE_SPIRAL = "source_spiral"
    VAN_DER_POL = "van_der_pol"
    DAMPED_PENDULUM = "damped_pendulum"


class IntegratorMethod(StrEnum):
    DISCRETE_MAP = "discrete_map"
    RK4 = "rk4"
    SEMI_IMPLICIT_EULER = "semi_implicit_euler"


def spiral_matrix() -> np.ndarray:
    """Rotation by SPIRAL_ANGLE scaled by SPIRAL_GROWTH (eigenvalue modulus 1.05)."""
    c, s = np.cos(SPIRAL_ANGLE), np.sin(SPIRAL_ANGLE)
    return SPIRAL_GROWTH * np.array([[c, -s], [s, c]])


@dataclass(frozen=True, eq=False)
class ReferenceSystem:
    kind: SystemKind
    spiral_a: np.ndarray | None = None
    spiral_b: np.ndarray | None = None
    spiral_c: np.ndarray | None = None
    gravity: float = 9.81
    mass: float = 1.0
    length: float = 1.0
    friction: float = 1.0
    seed: int = 0

    @property
    def state_dim(self) -> int:
        return 2

    @property
    def learned_dim(self) -> int:
        """Dimension of the state the URF model is fitted on."""
        return 3 if self.kind is SystemKind.DAMPED_PENDULUM else 2


def source_spiral(seed: int = 0) -> ReferenceSystem:
    """x_{n+1} = A x_n + cos(B x_n + c).

    Args:
        seed: Draws B with entries from N(0, SPIRAL_FREQUENCY_STD²) and c
            uniform on [0, 2π).

    Returns:
        The spiral system; A is fixed by spiral_matrix().
    """
    rng = make_generator(seed)
    return ReferenceSystem(
        kind=SystemKind.SOURCE_SPIRAL,
        spiral_a=spiral_matrix(),
        spiral_b=rng.normal(0.0, SPIRAL_FREQUENCY_STD, size=(2, 2)),
        spiral_c=rng.uniform(0.0, 2.0 * np.pi, size=2),
        seed=seed,
    )


def van_der_pol() -> ReferenceSystem:
    return ReferenceSystem(kind=SystemKind.VAN_DER_POL)


def damped_pendulum(
    gravity: float = 9.81, mass: float = 1.0, length: float = 1.0, friction: float = 1.0
) -> ReferenceSystem:
    """Pendulum with viscous friction, native state (θ, v).

    Args:
        gravity: Gravitational acceleration.
        mass: Bob mass, positive.
        length: Rod length, positive. Also the embedding radius.
        friction: Viscous friction coefficient.

    Raises:
        ConfigError: A parameter is non-finite, or mass or length is not positive.
    """
    for name, value in (("gravity", gravity), ("mass", mass), ("length", length), ("friction", friction)):
        if not np.isfinite(value) or (name in ("mass", "length") and value <= 0):
            raise ConfigError(f"system.{name}: invalid value {value}")
    return ReferenceSystem(
        kind=SystemKind.DAMPED_PENDULUM, gravity=gravity, mass=mass, length=length, friction=friction
    )


def make_system(kind: SystemKind | str, seed: int = 0) -> ReferenceSystem:
    """Reference system by name; `seed` only affects the source spiral."""
    try:
        kind = SystemKind(kind)
    except ValueError as e:
        raise ConfigError(f"system.kind: unknown system {kind!r}") from e
    if kind is SystemKind.SOURCE_SPIRAL:
        return source_spiral(seed)
    if kind is SystemKind.VAN_DER_POL:
        return van_der_pol()
    return damped_pendulum()


@dataclass(frozen=True)
class IntegratorSpec:
    method: IntegratorMethod
    dt: float = DEFAULT_DT

    def __post_init__(self):
        try:
            object.__setattr__(self, "method", IntegratorMethod(self.method))
        except ValueError as e:
            raise ConfigError(f"integrator.method: unknown method {self.method!r}") from e
        if self.method is not IntegratorMethod.DISCRETE_MAP and not self.dt > 0:
            raise ConfigError(f"integrator.dt: must be > 0, got {self.dt}")


def default_integrator(system: ReferenceSystem, dt: float = DEFAULT_DT) -> IntegratorSpec:
    method = {
        SystemKind.SOURCE_SPIRAL: IntegratorMethod.DISCRETE_MAP,
        SystemKind.VAN_DER_POL: IntegratorMethod.RK4,
        SystemKind.DAMPED_PENDULUM: IntegratorMethod.SEMI_IMPLICIT_EULER,
    }[system.kind]
    return IntegratorSpec(method=method, dt=dt)


_COMPATIBLE = {
    SystemKind.SOURCE_SPIRAL: {IntegratorMethod.DISCRETE_MAP},
    SystemKind.VAN_DER_POL: {IntegratorMethod.RK4},
    SystemKind.DAMPED_PENDULUM: {IntegratorMethod.SEMI_IMPLICIT_EULER, IntegratorMethod.RK4},
}


def check_compatible(system: ReferenceSystem, integrator: IntegratorSpec) -> None:
    if integrator.method not in _COMPATIBLE[system.kind]:
        raise ConfigError(
            f"integrator.method: {integrator.method} cannot simulate {system.kind}"
        )


def van_der_pol_field(x: np.ndarray) -> np.ndarray:
    x1, x2 = x
    return np.array([(1.0 - x2**2) * x1 - x2, x1])


def pendulum_field(system: ReferenceSystem, x: np.ndarray) -> np.ndarray:
    theta, velocity = x
    damping = system.friction / (system.mass * system.length**2)
    return np.array([velocity, -(system.gravity / system.length) * np.sin(theta) - damping * velocity])


def rk4_step(vector_field, x: np.ndarray, dt: float) -> np.ndarray:
    k1 = vector_field(x)
    k2 = vector_field(x + 0.5 * dt * k1)
    k3 = vector_field(x + 0.5 * dt * k2)
    k4 = vector_field(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def true_step(system: ReferenceSystem, integrator: IntegratorSpec, x) -> np.ndarray:
    """One step of the ground-truth discrete-time dynamics in native coordinates."""
    check_compatible(system, integrator)
    x = np.asarray(x, dtype=float)
    if x.shape != (system.state_dim,):
        raise DimensionError(f"state has shape {x.shape}, {system.kind} expects (2,)")

    if system.kind is SystemKind.SOURCE_SPIRAL:
        assert system.spiral_a is not None and system.spiral_b is not None
        return system.spiral_a @ x + np.cos(system.spiral_b @ x + system.spiral_c)
    if system.kind is SystemKind.VAN_DER_POL:
        return rk4_step(van_der_pol_field, x, integrator.dt)
    if integrator.method is IntegratorMethod.RK4:
        return rk4_step(lambda s: pendulum_field(system, s), x, integrator.dt)

    # Semi-implicit Euler: velocity first, then position with the new velocity.
    theta, velocity = x
    acceleration = pendulum_field(system, x)[1]
    velocity = velocity + integrator.dt * acceleration
    return np.array([theta + integrator.dt * velocity, velocity])


def simulate(system: ReferenceSystem, integrator: IntegratorSpec, x0, steps: int) -> np.ndarray:
    """Native-coordinate trajectory of shape (steps + 1, 2)."""
    states = np.empty((steps + 1, system.state_dim))
    states[0] = np.asarray(x0, dtype=float)
    for n in range(steps):
        states[n + 1] = true_step(system, integrator, states[n])
    return states


def pendulum_embed(x, length: float = 1.0) -> np.ndarray:
    """(θ, v) -> (l cos θ, l sin θ, v). Accepts a single state or a (T, 2) batch."""
    x = np.asarray(x, dtype=float)
    theta, velocity = x[..., 0], x[..., 1]
    return np.stack([length * np.cos(theta), length * np.sin(theta), velocity], axis=-1)


def observe(system: ReferenceSystem, x) -> np.ndarray:
    """Map native states to the coordinates the URF model is learned in."""
    if system.kind is SystemKind.DAMPED_PENDULUM:
        return pendulum_embed(x, system.length)
    return np.asarray(x, dtype=float)


def pendulum_energy(system: ReferenceSystem, x) -> float:
    theta, velocity = x
    inertia = system.mass * system.length**2
    return float(
        0.5 * inertia * velocity**2 + system.mass * system.gravity * system.length * (1.0 - np.cos(theta))
    )


def stage_cost(kind: CostKind | str, x) -> tuple[float, np.ndarray]:
    """Stage cost value and gradient.

    quadratic:        c(x) = xᵀx,              ∇c = 2x
    pendulum-upright: c(a, b, c) = b² - a + 0.1c², ∇c = (-1, 2b, 0.2c)
    """
    kind = CostKind(kind)
    x = np.asarray(x, dtype=float)
    if kind is CostKind.QUADRATIC:
        return float(x @ x), 2.0 * x
    if kind is CostKind.PENDULUM_UPRIGHT:
        if x.shape != (3,):
            raise DimensionError(f"pendulum-upright cost needs an embedded 3-d state, got {x.shape}")
        a, b, c = x
        w = PENDULUM_UPRIGHT_VELOCITY_WEIGHT
        return float(b**2 - a + w * c**2), np.array([-1.0, 2.0 * b, 2.0 * w * c])
    raise ConfigError(f"cost: no built-in stage cost of kind {kind!r}")


def make_cost(kind: CostKind | str) -> CostFunction:
    kind = CostKind(kind)
    stage_cost(kind, np.zeros(3 if kind is CostKind.PENDULUM_UPRIGHT else 2))
    return CostFunction(
        kind=kind,
        value=lambda x: stage_cost(kind, x)[0],
        gradient=lambda x: stage_cost(kind, x)[1],
    )


def default_cost_kind(system: ReferenceSystem) -> CostKind:
    if system.kind is SystemKind.DAMPED_PENDULUM:
        return CostKind.PENDULUM_UPRIGHT
    return CostKind.QUADRATIC


def default_initial_state(system: ReferenceSystem) -> np.ndarray:
    """Fixed test initial condition (native coordinates)."""
    if system.kind is SystemKind.SOURCE_SPIRAL:
        return np.array([1.0, 1.0])
    if system.kind is SystemKind.VAN_DER_POL:
        return np.array([1.0, 0.0])
    return np.array([np.pi / 2.0, 0.0])


@dataclass(frozen=True)
class RolloutConfig:
    num_rollouts: int
    length: int
    noise_std: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.num_rollouts < 1:
            raise ConfigError(f"rollouts.num_rollouts: must be >= 1, got {self.num_rollouts}")
        if self.length < 1:
            raise ConfigError(f"rollouts.length: must be >= 1, got {self.length}")
        if not self.noise_std >= 0:
            raise ConfigError(f"rollouts.noise_std: must be >= 0, got {self.noise_std}")


def sample_initial_state(system: ReferenceSystem, rng: np.random.Generator) -> np.ndarray:
    """Training initial conditions: N(0, I) spiral, U(-1, 1)² Van der Pol,
    θ ~ U(-π, π) and v ~ U(-1, 1) for the pendulum."""
    if system.kind is SystemKind.SOURCE_SPIRAL:
        return rng.standard_normal(2)
    if system.kind is SystemKind.VAN_DER_POL:
        return rng.uniform(-1.0, 1.0, size=2)
    return np.array([rng.uniform(-np.pi, np.pi), rng.uniform(-1.0, 1.0)])


class GeneratedData(NamedTuple):
    """Output of generate_dataset.

    dataset carries residual targets; successors holds the noisy observed
    yᵢ; rollouts are the noise-free native-coordinate trajectories.
    """

    dataset: RegressionDataset
    successors: np.ndarray
    rollouts: list[np.ndarray]


def generate_dataset(
    system: ReferenceSystem,
    integrator: IntegratorSpec,
    config: RolloutConfig,
    nominal: NominalModel | None = None,
) -> GeneratedData:
    """Simulate rollouts and emit noisy transition pairs (xᵢ, yᵢ = x_{i+1} + εᵢ).

    Noise is added to the observed successor only; the simulation itself
    continues noise-free. Pendulum states are embedded before pairing.
    """
    check_compatible(system, integrator)
    rng = make_generator(config.seed)
    rollouts, inputs, successors = [], [], []
    for _ in range(config.num_rollouts):
        states = simulate(system, integrator, sample_initial_state(system, rng), config.length)
        rollouts.append(states)
        observed = observe(system, states)
        inputs.append(observed[:-1])
        noise = config.noise_std * rng.standard_normal(observed[1:].shape)
        successors.append(observed[1:] + noise)

    inputs_arr = np.concatenate(inputs)
    successors_arr = np.concatenate(successors)
    nominal = nominal or identity_nominal(system.learned_dim)
    # BLR needs σ > 0 even for noise-free data.
    noise_std = max(config.noise_std, MIN_NOISE_STD)
    dataset = residual_dataset(inputs_arr, successors_arr, nominal, noise_std)
    logger.info(
        "generated %d transitions from %d %s rollouts of length %d",
        dataset.size,
        config.num_rollouts,
        system.kind,
        config.length,
    )
    return GeneratedData(dataset=dataset, successors=successors_arr, rollouts=rollouts)


def system_to_dict(system: ReferenceSystem) -> dict[str, Any]:
    data: dict[str, Any] = {"kind": str(system.kind), "seed": system.seed}
    if system.kind is SystemKind.SOURCE_SPIRAL:
        assert system.spiral_a is not None and system.spiral_b is not None and system.spiral_c is not None
        data.update(A=system.spiral_a.tolist(), B=system.spiral_b.tolist(), c=system.spiral_c.tolist())
    if system.kind is SystemKind.DAMPED_PENDULUM:
        data.update(g=system.gravity, m=system.mass, l=system.length, beta=system.friction)
    return data
