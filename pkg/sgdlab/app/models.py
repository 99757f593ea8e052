# sgdlab/app/models.py
"""Problem definitions: objectives, stochastic-gradient families, observables
and the strong-convexity certificate that confines the chain to a ball.

Evaluators take points as arrays whose last axis is the dimension and
broadcast over every leading axis, so the same closures serve single points,
trajectory batches and support enumerations.
"""
import itertools
import logging
import math
from typing import Callable, ClassVar, Dict, NamedTuple, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.stats import qmc

from .errors import CertificateError, UnknownIdError
from .rng import CounterRng
from .schemas import ConvexityCertificate, NoiseKind
from .sde import ou_exact

logger = logging.getLogger(__name__)

GRID_POINTS_1D = 201
GRID_POINTS_ND = 10**4
B_ESTIMATE_DRAWS = 10**4


def as_points(x, dim: int) -> np.ndarray:
    """Coerce x to an array of points with trailing axis `dim`."""
    x = np.asarray(x, dtype=float)
    if dim == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {x.shape}")
    return x


def _col(v) -> np.ndarray:
    return np.asarray(v, dtype=float)[..., None]


class ObjectiveBundle(BaseModel):
    """Deterministic objective f with analytic derivatives."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    name: str
    dim: int = Field(gt=0)
    f: Callable
    grad: Callable
    hess: Callable
    third_deriv: Optional[Callable] = None
    minimizer: Tuple[float, ...]
    # Analytic characteristic y(x, t) of dy/dt = -grad f(y), when known.
    flow_map: Optional[Callable] = None

    @property
    def x_star(self) -> np.ndarray:
        return np.asarray(self.minimizer, dtype=float)

    def shifted(self, shift) -> "ObjectiveBundle":
        """The same objective in coordinates translated by `shift`."""
        shift = np.asarray(shift, dtype=float)
        if not np.any(shift):
            return self
        third = self.third_deriv
        flow = self.flow_map
        return self.model_copy(
            update={
                "name": f"{self.name} (recentered)",
                "f": lambda x: self.f(x + shift),
                "grad": lambda x: self.grad(x + shift),
                "hess": lambda x: self.hess(x + shift),
                "third_deriv": None if third is None else (lambda x: third(x + shift)),
                "minimizer": tuple(self.x_star - shift),
                "flow_map": None if flow is None else (lambda x, t: flow(x + shift, t) - shift),
            }
        )


def scalar_objective(name, f0, f1, f2, f3, minimizer: float, flow=None) -> ObjectiveBundle:
    """Lift scalar f, f', f'', f''' of u = x[..., 0] to a 1D bundle."""
    return ObjectiveBundle(
        name=name,
        dim=1,
        f=lambda x: np.asarray(f0(x[..., 0]), dtype=float),
        grad=lambda x: _col(f1(x[..., 0])),
        hess=lambda x: _col(f2(x[..., 0]))[..., None],
        third_deriv=lambda x: _col(f3(x[..., 0]))[..., None, None],
        minimizer=(float(minimizer),),
        flow_map=None if flow is None else (lambda x, t: _col(flow(x[..., 0], t))),
    )


class TestFunction(BaseModel):
    """Observable phi with gradient, Hessian and third-derivative tensor."""

    __test__: ClassVar[bool] = False
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    name: str
    phi: Callable
    phi_d1: Callable
    phi_d2: Callable
    phi_d3: Optional[Callable] = None


def _diag2(v: np.ndarray) -> np.ndarray:
    return np.eye(v.shape[-1]) * v[..., None, :]


def _diag3(v: np.ndarray) -> np.ndarray:
    d = v.shape[-1]
    out = np.zeros(v.shape + (d, d))
    idx = np.arange(d)
    out[..., idx, idx, idx] = v
    return out


def separable_observable(name, g0, g1, g2, g3) -> TestFunction:
    """phi(x) = sum_i g(x_i); in 1D simply g."""
    return TestFunction(
        name=name,
        phi=lambda x: np.sum(g0(np.asarray(x, dtype=float)), axis=-1),
        phi_d1=lambda x: np.asarray(g1(np.asarray(x, dtype=float)), dtype=float),
        phi_d2=lambda x: _diag2(np.asarray(g2(np.asarray(x, dtype=float)), dtype=float)),
        phi_d3=lambda x: _diag3(np.asarray(g3(np.asarray(x, dtype=float)), dtype=float)),
    )


def constant_observable(c: float) -> TestFunction:
    zero = lambda x: np.zeros_like(np.asarray(x, dtype=float))  # noqa: E731
    return separable_observable(
        f"const({c})", lambda x: np.full_like(x, c / x.shape[-1]), zero, zero, zero
    )


_SEPARABLE = {
    "sin": (np.sin, np.cos, lambda x: -np.sin(x), lambda x: -np.cos(x)),
    "cos": (np.cos, lambda x: -np.sin(x), lambda x: -np.cos(x), np.sin),
    "identity": (lambda x: x, np.ones_like, np.zeros_like, np.zeros_like),
    "square": (np.square, lambda x: 2 * x, lambda x: np.full_like(x, 2.0), np.zeros_like),
}

OBSERVABLE_IDS = tuple(_SEPARABLE) + ("f-itself",)


def objective_observable(objective: ObjectiveBundle) -> TestFunction:
    return TestFunction(
        name="f-itself",
        phi=objective.f,
        phi_d1=objective.grad,
        phi_d2=objective.hess,
        phi_d3=objective.third_deriv,
    )


def get_observable(phi_id: str, family: Optional["StochasticGradientFamily"] = None) -> TestFunction:
    if phi_id in _SEPARABLE:
        return separable_observable(phi_id, *_SEPARABLE[phi_id])
    if phi_id == "f-itself":
        if family is None:
            raise UnknownIdError("observable f-itself needs a family")
        return objective_observable(family.objective)
    raise UnknownIdError(f"unknown observable id: {phi_id}")


class StochasticGradientFamily(BaseModel):
    """Objective plus the law of its random gradients grad f(x; xi)."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    family_id: str
    objective: ObjectiveBundle
    noise_kind: NoiseKind
    # (rng, step) -> one noise token per trajectory of the rng
    sample_xi: Callable
    # (x, xi) -> grad f(x; xi), broadcasting x against xi
    stochastic_grad: Callable
    sigma: Callable
    # () -> (tokens, probabilities) for finite noise supports
    support: Optional[Callable] = None
    stochastic_hess: Optional[Callable] = None
    # xi -> mirrored token with the same law, for sign-symmetric noise
    antithetic: Optional[Callable] = None
    radius: float = Field(gt=0)
    convexity_radius: float = Field(gt=0)
    description: str = ""

    @property
    def dim(self) -> int:
        return self.objective.dim

    @property
    def finite_support(self) -> bool:
        return self.support is not None

    def hess_xi(self, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """Hessian of f(.; xi); additive-noise families share the objective's."""
        if self.stochastic_hess is not None:
            return self.stochastic_hess(x, xi)
        return self.objective.hess(x)

    def recentered(self) -> "StochasticGradientFamily":
        shift = self.objective.x_star
        if not np.any(shift):
            return self
        hess = self.stochastic_hess
        return self.model_copy(
            update={
                "objective": self.objective.shifted(shift),
                "stochastic_grad": lambda x, xi: self.stochastic_grad(x + shift, xi),
                "sigma": lambda x: self.sigma(x + shift),
                "stochastic_hess": None if hess is None else (lambda x, xi: hess(x + shift, xi)),
            }
        )


def additive_noise_family(
    family_id: str,
    objective: ObjectiveBundle,
    scale: float,
    kind: NoiseKind = NoiseKind.RADEMACHER,
    radius: float = 1.0,
    convexity_radius: float = math.inf,
    description: str = "",
) -> StochasticGradientFamily:
    """grad f(x; xi) = grad f(x) + scale * xi with i.i.d. coordinates of xi."""
    d = objective.dim
    if kind == NoiseKind.RADEMACHER:
        draw = CounterRng.rademacher
        signs = np.array(list(itertools.product([-1.0, 1.0], repeat=d)))
        support = lambda: (signs, np.full(len(signs), 1.0 / len(signs)))  # noqa: E731
    elif kind == NoiseKind.GAUSSIAN:
        draw = CounterRng.normal
        support = None
    else:
        raise ValueError(f"additive noise supports rademacher or gaussian, not {kind}")

    def sample_xi(rng: CounterRng, step: int) -> np.ndarray:
        return np.stack([draw(rng, step, lane) for lane in range(d)], axis=-1)

    def sigma(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(scale**2 * np.eye(d), x.shape[:-1] + (d, d))

    return StochasticGradientFamily(
        family_id=family_id,
        objective=objective,
        noise_kind=kind,
        sample_xi=sample_xi,
        stochastic_grad=lambda x, xi: objective.grad(x) + scale * xi,
        sigma=sigma,
        support=support,
        antithetic=lambda xi: -xi,
        radius=radius,
        convexity_radius=convexity_radius,
        description=description,
    )


def example1_objective() -> ObjectiveBundle:
    return scalar_objective(
        "f(x) = x^2/2 - x/2",
        lambda u: 0.5 * u**2 - 0.5 * u,
        lambda u: u - 0.5,
        np.ones_like,
        np.zeros_like,
        minimizer=0.5,
        flow=lambda u, t: 0.5 + (u - 0.5) * np.exp(-t),
    )


def make_example1() -> StochasticGradientFamily:
    """f(x; xi) = x^2/2 - x/2 + xi x / 2 with Rademacher xi; Sigma = 1/4."""
    return additive_noise_family(
        "example1",
        example1_objective(),
        scale=0.5,
        radius=3.0,
        description="quadratic with Rademacher shift, minimum at 1/2",
    )


def example2_objective() -> ObjectiveBundle:
    return scalar_objective(
        "f(x) = x^2/2 + 0.1 x^3",
        lambda u: 0.5 * u**2 + 0.1 * u**3,
        lambda u: u + 0.3 * u**2,
        lambda u: 1.0 + 0.6 * u,
        lambda u: np.full_like(np.asarray(u, dtype=float), 0.6),
        minimizer=0.0,
        flow=lambda u, t: u * np.exp(-t) / (1.0 + 0.3 * u * (1.0 - np.exp(-t))),
    )


def make_example2() -> StochasticGradientFamily:
    """Cubic objective, locally strongly convex around its local minimum 0."""
    return additive_noise_family(
        "example2",
        example2_objective(),
        scale=0.5,
        radius=1.0,
        convexity_radius=5.0 / 3.0,
        description="cubic with Rademacher shift, local minimum at 0",
    )


def quadratic_objective(gamma: float = 1.0) -> ObjectiveBundle:
    return scalar_objective(
        f"f(x) = {gamma} x^2/2",
        lambda u: 0.5 * gamma * u**2,
        lambda u: gamma * u,
        lambda u: np.full_like(np.asarray(u, dtype=float), gamma),
        np.zeros_like,
        minimizer=0.0,
        flow=lambda u, t: u * np.exp(-gamma * t),
    )


def make_ou_family() -> StochasticGradientFamily:
    """f(x) = x^2/2 with standard Gaussian gradient noise, so Sigma = 1."""
    return additive_noise_family(
        "ou",
        quadratic_objective(),
        scale=1.0,
        kind=NoiseKind.GAUSSIAN,
        radius=30.0,
        description="Ornstein-Uhlenbeck reference, Gaussian noise",
    )


def make_ou_reference(eta: float) -> Tuple[ObjectiveBundle, Callable]:
    """Objective x^2/2 with Sigma = 1 and the closed-form expectation u(x, t).

    The evaluator is (phi, x, t) -> E[phi(X_t) | X_0 = x] for the Gaussian law
    with mean x exp(-(1 + 2 eta) t) and variance
    eta / (2 (1 + 2 eta)) (1 - exp(-2 (1 + 2 eta) t)).
    """
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    return quadratic_objective(), lambda phi, x, t: ou_exact(phi, x, t, eta)


def make_noiseless(objective: Optional[ObjectiveBundle] = None, radius: float = 3.0) -> StochasticGradientFamily:
    """Plain gradient descent seen as SGD with b = 0 and Sigma = 0."""
    objective = objective or quadratic_objective()
    return additive_noise_family(
        "noiseless",
        objective,
        scale=0.0,
        radius=radius,
        description="deterministic gradient descent baseline",
    )


def make_minibatch_quadratic(
    curvatures,
    centers,
    batch_size: int,
    family_id: str = "minibatch",
    radius: float = 3.0,
) -> StochasticGradientFamily:
    """Empirical loss (1/M) sum_i a_i |x - c_i|^2 / 2 with size-B minibatches.

    The batch is drawn uniformly without replacement; Sigma(x) is the
    finite-population covariance of the component gradients.
    """
    a = np.asarray(curvatures, dtype=float)
    c = np.asarray(centers, dtype=float)
    if c.ndim == 1:
        c = c[:, None]
    m, d = c.shape
    if a.shape != (m,) or np.any(a <= 0):
        raise ValueError("need one positive curvature per center")
    if not 0 < batch_size <= m:
        raise ValueError(f"batch size must lie in [1, {m}]")
    a_bar = a.mean()
    ac_bar = (a[:, None] * c).mean(axis=0)
    x_star = ac_bar / a_bar
    eye = np.eye(d)
    finite_population = (m - batch_size) / (batch_size * (m - 1)) if m > 1 else 0.0
    subsets = np.array(list(itertools.combinations(range(m), batch_size)))

    def f(x):
        x = np.asarray(x, dtype=float)
        return 0.5 * np.mean(a * np.sum((x[..., None, :] - c) ** 2, axis=-1), axis=-1)

    def flow(x, t):
        return x_star + (np.asarray(x, dtype=float) - x_star) * np.exp(-a_bar * np.asarray(t)[..., None])

    objective = ObjectiveBundle(
        name=f"minibatch quadratic (M={m}, B={batch_size})",
        dim=d,
        f=f,
        grad=lambda x: a_bar * np.asarray(x, dtype=float) - ac_bar,
        hess=lambda x: np.broadcast_to(a_bar * eye, np.shape(x)[:-1] + (d, d)),
        third_deriv=lambda x: np.zeros(np.shape(x)[:-1] + (d, d, d)),
        minimizer=tuple(x_star),
        flow_map=flow,
    )

    def stochastic_grad(x, idx):
        a_b = a[idx]
        return a_b.mean(axis=-1)[..., None] * x - (a_b[..., None] * c[idx]).mean(axis=-2)

    def stochastic_hess(x, idx):
        h = a[idx].mean(axis=-1)[..., None, None] * eye
        shape = np.broadcast_shapes(np.shape(x)[:-1], np.shape(idx)[:-1])
        return np.broadcast_to(h, shape + (d, d))

    def sigma(x):
        g = a[:, None] * (np.asarray(x, dtype=float)[..., None, :] - c)
        dev = g - g.mean(axis=-2, keepdims=True)
        return finite_population * np.einsum("...mi,...mj->...ij", dev, dev) / m

    return StochasticGradientFamily(
        family_id=family_id,
        objective=objective,
        noise_kind=NoiseKind.MINIBATCH,
        sample_xi=lambda rng, step: rng.subset(step, m, batch_size),
        stochastic_grad=stochastic_grad,
        sigma=sigma,
        support=lambda: (subsets, np.full(len(subsets), 1.0 / len(subsets))),
        stochastic_hess=stochastic_hess,
        radius=radius,
        convexity_radius=math.inf,
        description="finite-sum quadratic with minibatches drawn without replacement",
    )


def make_minibatch_example() -> StochasticGradientFamily:
    return make_minibatch_quadratic(
        curvatures=np.linspace(0.5, 1.5, 8), centers=np.linspace(-1.0, 1.0, 8), batch_size=2, radius=12.0
    )


FAMILY_BUILDERS: Dict[str, Callable[[], StochasticGradientFamily]] = {
    "example1": make_example1,
    "example2": make_example2,
    "ou": make_ou_family,
    "noiseless": make_noiseless,
    "minibatch": make_minibatch_example,
}


def get_family(family_id: str) -> StochasticGradientFamily:
    try:
        return FAMILY_BUILDERS[family_id]()
    except KeyError:
        raise UnknownIdError(f"unknown family id: {family_id}")


# --- certificate --------------------------------------------------------------


class LocalConstants(NamedTuple):
    gamma: float
    L: float
    b: float
    b_estimated: bool


def confinement_radius(gamma: float, b: float) -> float:
    return 16.0 * b / (3.0 * gamma)


def confinement_step_cap(gamma: float, b: float, R: float) -> float:
    caps = [1.0 / (2.0 * gamma)]
    if b > 0:
        caps.append(3.0 * R / (8.0 * b))
        caps.append((3.0 * gamma * R**2 / 8.0 - 2.0 * b * R) / (2.0 * gamma * b * R + b**2))
    return min(caps)


def ball_grid(dim: int, R: float) -> np.ndarray:
    """Deterministic points of B(0, R): 201 equispaced in 1D, Halton otherwise."""
    if dim == 1:
        return np.linspace(-R, R, GRID_POINTS_1D)[:, None]
    cube = 2.0 * qmc.Halton(d=dim, scramble=False).random(GRID_POINTS_ND) - 1.0
    inside = cube[np.linalg.norm(cube, axis=1) <= 1.0]
    return np.vstack([np.zeros((1, dim)), R * inside])


def _noise_bound(family: StochasticGradientFamily) -> Tuple[float, bool]:
    origin = np.zeros((1, family.dim))
    if family.finite_support:
        tokens, _ = family.support()
        estimated = False
    else:
        rng = CounterRng(seed=0, trajectories=np.arange(B_ESTIMATE_DRAWS))
        tokens = family.sample_xi(rng, 0)
        estimated = True
    grads = family.stochastic_grad(origin, tokens)
    return float(np.max(np.linalg.norm(grads, axis=-1))), estimated


def local_constants(family: StochasticGradientFamily, R: float) -> LocalConstants:
    """gamma, L and b of the recentered family on B(0, R), no radius checks."""
    family = family.recentered()
    grid = ball_grid(family.dim, R)
    if family.stochastic_hess is not None and family.finite_support:
        tokens, _ = family.support()
        hessians = family.hess_xi(grid[:, None, :], tokens)
    else:
        hessians = family.objective.hess(grid)
    eigenvalues = np.linalg.eigvalsh(np.asarray(hessians))
    b, estimated = _noise_bound(family)
    return LocalConstants(
        gamma=float(eigenvalues.min()),
        L=float(np.abs(eigenvalues).max()),
        b=b,
        b_estimated=estimated,
    )


def certify(
    family: StochasticGradientFamily, R: Optional[float] = None, R1: Optional[float] = None
) -> ConvexityCertificate:
    """Confinement certificate on B(x*, R); the family is recentered first."""
    R = family.radius if R is None else R
    R1 = family.convexity_radius if R1 is None else R1
    if R > R1:
        raise CertificateError(f"radius exceeds convexity radius: R={R} > R1={R1}")
    constants = local_constants(family, R)
    if constants.gamma <= 0:
        raise CertificateError(
            f"not locally strongly convex: minimum Hessian eigenvalue {constants.gamma:.6g} on B(x*, {R})"
        )
    R0 = confinement_radius(constants.gamma, constants.b)
    if R <= R0:
        raise CertificateError(f"radius too small: R={R} <= R0={R0:.6g}")
    eta0 = confinement_step_cap(constants.gamma, constants.b, R)
    if constants.b_estimated:
        logger.info(f"{family.family_id}: b={constants.b:.6g} estimated from {B_ESTIMATE_DRAWS} draws")
    return ConvexityCertificate(
        gamma=constants.gamma,
        b=constants.b,
        L=constants.L,
        R1=R1,
        R=R,
        R0=R0,
        eta0=eta0,
        b_estimated=constants.b_estimated,
    )


def try_certify(family: StochasticGradientFamily, R: Optional[float] = None) -> Optional[ConvexityCertificate]:
    try:
        return certify(family, R)
    except CertificateError as e:
        logger.warning(f"{family.family_id}: no certificate ({e.message})")
        return None
