# sgdlab/app/expansion.py
"""Truncated series u^1 = u0 + eta * u1 for E_x[phi(X_n)].

u0 transports phi along the gradient-flow characteristic dy/dt = -grad f(y).
u1 is the Duhamel integral of L2 u0 along the same characteristic, where

    L2 u = -1/4 grad|grad f|^2 . grad u + 1/2 Tr(Sigma hess u).

The numeric path integrates the characteristic with RK4 together with its
first and second variations J = dy/dx and K = d^2y/dx^2, so the derivatives
of u0 never come from finite differences.
"""
import logging
import math
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict
from scipy import integrate

from .errors import NoClosedFormError, SingularCharacteristicError, SupportError
from .models import StochasticGradientFamily, TestFunction, as_points, ball_grid, local_constants
from .quadrature import composite_gauss_legendre
from .schemas import ExpansionEvaluation, ExpansionMethod
from .sgd import InitialMeasure

logger = logging.getLogger(__name__)

H_ODE_MAX = 1e-3
DUHAMEL_PANELS = 64
DUHAMEL_ORDER = 5
PHI1_HORIZON_FACTOR = 20.0
QUAD_EPSREL = 1e-12
QUAD_LIMIT = 200


def default_h_ode(t: float) -> float:
    return min(H_ODE_MAX, t / 100.0) if t > 0 else H_ODE_MAX


def _scale(c, arr: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    return c.reshape(c.shape + (1,) * (arr.ndim - c.ndim)) * arr


class _State(NamedTuple):
    y: np.ndarray
    J: Optional[np.ndarray]
    K: Optional[np.ndarray]

    def axpy(self, c, other: "_State") -> "_State":
        return _State(*(None if a is None else a + _scale(c, b) for a, b in zip(self, other)))


def _vector_field(objective, state: _State) -> _State:
    g = objective.grad(state.y)
    if state.J is None:
        return _State(-g, None, None)
    H = objective.hess(state.y)
    dJ = -np.einsum("...ij,...jk->...ik", H, state.J)
    if state.K is None:
        return _State(-g, dJ, None)
    T = objective.third_deriv(state.y)
    dK = -np.einsum("...ijk,...ja,...kb->...iab", T, state.J, state.J) - np.einsum(
        "...ij,...jab->...iab", H, state.K
    )
    return _State(-g, dJ, dK)


def _rk4(objective, state: _State, duration, n_steps: int) -> _State:
    """n_steps classical RK4 steps of size duration / n_steps (duration may vary per point)."""
    h = np.asarray(duration, dtype=float) / n_steps
    for _ in range(n_steps):
        k1 = _vector_field(objective, state)
        k2 = _vector_field(objective, state.axpy(0.5 * h, k1))
        k3 = _vector_field(objective, state.axpy(0.5 * h, k2))
        k4 = _vector_field(objective, state.axpy(h, k3))
        state = state.axpy(h / 6.0, k1).axpy(h / 3.0, k2).axpy(h / 3.0, k3).axpy(h / 6.0, k4)
    return state


def _initial_state(points: np.ndarray, order: int, third_deriv) -> _State:
    n, d = points.shape
    if order >= 2 and third_deriv is None:
        raise NoClosedFormError("no closed form registered: second variation needs the third derivative of f")
    J = np.broadcast_to(np.eye(d), (n, d, d)).copy() if order >= 1 else None
    K = np.zeros((n, d, d, d)) if order >= 2 else None
    return _State(points.copy(), J, K)


class CharacteristicFlow(BaseModel):
    """y(x, s) with its variations, cached at increasing times s."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    family_id: str
    h_ode: float
    times: np.ndarray
    states: np.ndarray
    jacobians: Optional[np.ndarray] = None
    second_variations: Optional[np.ndarray] = None

    @property
    def end(self) -> np.ndarray:
        return self.states[-1]


def characteristic_flow(
    x,
    t: float,
    family: StochasticGradientFamily,
    nodes: Optional[Sequence[float]] = None,
    h_ode: Optional[float] = None,
    order: int = 0,
) -> CharacteristicFlow:
    """Integrate dy/ds = -grad f(y), y(0) = x, up to s = t.

    The solution is cached at 0, every node in (0, t) and t; integration runs
    node to node so the nodes are hit exactly. `order` selects how many
    variations (0, 1 or 2) are carried along. x may be a batch of points.
    """
    objective = family.objective
    pts = as_points(x, family.dim).reshape(-1, family.dim)
    h = h_ode or default_h_ode(t)
    inner = np.asarray([] if nodes is None else nodes, dtype=float)
    times = np.concatenate([[0.0], inner, [t]]) if t > 0 else np.zeros(1)
    state = _initial_state(pts, order, objective.third_deriv)
    cached = [state]
    for a, b in zip(times[:-1], times[1:]):
        n_sub = max(1, math.ceil((b - a) / h - 1e-9))
        state = _rk4(objective, state, b - a, n_sub)
        cached.append(state)
    return CharacteristicFlow(
        family_id=family.family_id,
        h_ode=h,
        times=times,
        states=np.stack([s.y for s in cached]),
        jacobians=None if order < 1 else np.stack([s.J for s in cached]),
        second_variations=None if order < 2 else np.stack([s.K for s in cached]),
    )


def _as_batch(x, dim: int):
    pts = as_points(x, dim)
    return pts.reshape(-1, dim), pts.shape[:-1]


def _shaped(values: np.ndarray, shape):
    values = np.asarray(values, dtype=float).reshape(shape)
    return float(values) if values.ndim == 0 else values


def u0_eval(x, t: float, phi: TestFunction, family: StochasticGradientFamily, method=ExpansionMethod.NUMERIC):
    """u0(x, t) = phi(y(x, t))."""
    pts, shape = _as_batch(x, family.dim)
    if t == 0:
        return _shaped(phi.phi(pts), shape)
    if ExpansionMethod(method) == ExpansionMethod.CLOSED_FORM:
        flow = family.objective.flow_map
        if flow is None:
            raise NoClosedFormError(f"no closed form registered for {family.family_id}")
        end = flow(pts, t)
    else:
        end = characteristic_flow(pts, t, family).end
    return _shaped(phi.phi(end), shape)


def u0_derivatives(z: np.ndarray, tau, phi: TestFunction, family: StochasticGradientFamily, h_ode: float):
    """grad and hess of u0(., tau) at the points z, each with its own tau."""
    tau = np.broadcast_to(np.asarray(tau, dtype=float), z.shape[:-1])
    state = _initial_state(z, 2, family.objective.third_deriv)
    horizon = float(np.max(tau)) if tau.size else 0.0
    if horizon > 0:
        state = _rk4(family.objective, state, tau, max(1, math.ceil(horizon / h_ode - 1e-9)))
    return _transport_derivatives(state.y, state.J, state.K, phi)


def _transport_derivatives(end, J, K, phi: TestFunction):
    dphi = phi.phi_d1(end)
    du = np.einsum("...ia,...i->...a", J, dphi)
    d2u = np.einsum("...ia,...ij,...jb->...ab", J, phi.phi_d2(end), J) + np.einsum("...i,...iab->...ab", dphi, K)
    return du, d2u


def apply_L2(du, d2u, x, family: StochasticGradientFamily):
    """-1/4 (2 hess f grad f) . du + 1/2 Tr(Sigma d2u), broadcast over points."""
    pts = as_points(x, family.dim)
    du = np.asarray(du, dtype=float).reshape(pts.shape)
    d2u = np.asarray(d2u, dtype=float).reshape(pts.shape + (family.dim,))
    objective = family.objective
    drift = np.einsum("...ij,...j->...i", objective.hess(pts), objective.grad(pts))
    value = -0.5 * np.sum(drift * du, axis=-1) + 0.5 * np.einsum("...ij,...ij->...", family.sigma(pts), d2u)
    return float(value) if np.ndim(value) == 0 else value


def _u1_numeric(pts: np.ndarray, t: float, phi, family, panels: int, order: int, h_ode: Optional[float]):
    h = h_ode or default_h_ode(t)
    s, w = composite_gauss_legendre(0.0, t, panels, order)
    flow = characteristic_flow(pts, t, family, nodes=s, h_ode=h)
    z = flow.states[1:-1]
    tau = np.broadcast_to((t - s)[:, None], z.shape[:-1])
    du, d2u = u0_derivatives(z.reshape(-1, family.dim), tau.ravel(), phi, family, h)
    integrand = apply_L2(du, d2u, z.reshape(-1, family.dim), family)
    return w @ np.asarray(integrand).reshape(len(s), -1)


def _sigma_constant(family: StochasticGradientFamily, a: float, b: float) -> float:
    points = np.linspace(a, b, 5)[:, None]
    sig = np.asarray(family.sigma(points))[:, 0, 0]
    if not np.allclose(sig, sig[0], rtol=1e-12, atol=0.0):
        raise NoClosedFormError(f"no closed form registered: Sigma is not constant for {family.family_id}")
    return float(sig[0])


def _u1_closed_form_point(x: float, t: float, phi: TestFunction, family: StochasticGradientFamily) -> float:
    objective = family.objective

    def fp(u):
        return float(objective.grad(np.array([u]))[0])

    def fpp(u):
        return float(objective.hess(np.array([u]))[0, 0])

    X = float(objective.flow_map(np.array([x]), t)[0])
    fx, fX = fp(x), fp(X)
    segment = np.linspace(min(x, X), max(x, X), 65)
    slopes = objective.grad(segment[:, None])[:, 0]
    if fx == 0 or fX == 0 or np.any(np.sign(slopes) != np.sign(fx)) or np.any(slopes == 0):
        raise SingularCharacteristicError(f"singular characteristic: f' vanishes between {X:.6g} and {x:.6g}")
    sigma = _sigma_constant(family, X, x)
    cube, _ = integrate.quad(lambda u: fp(u) ** -3, X, x, epsabs=0.0, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT)
    d1 = float(phi.phi_d1(np.array([X]))[0])
    d2 = float(phi.phi_d2(np.array([X]))[0, 0])
    transport = -0.5 * d1 * fX * math.log(fx / fX)
    curvature = 0.5 * sigma * d1 * fX * fpp(X) * cube
    bracket = 0.25 * sigma * d1 * fX * (fx**-2 - fX**-2)
    diffusion = 0.5 * sigma * fX**2 * d2 * cube
    return transport + curvature + bracket + diffusion


def u1_eval(
    x,
    t: float,
    phi: TestFunction,
    family: StochasticGradientFamily,
    method=ExpansionMethod.NUMERIC,
    panels: int = DUHAMEL_PANELS,
    order: int = DUHAMEL_ORDER,
    h_ode: Optional[float] = None,
):
    """u1(x, t) = int_0^t L2 u0(y(x, s), t - s) ds."""
    pts, shape = _as_batch(x, family.dim)
    if t == 0:
        return _shaped(np.zeros(len(pts)), shape)
    if ExpansionMethod(method) == ExpansionMethod.CLOSED_FORM:
        if family.dim != 1 or family.objective.flow_map is None:
            raise NoClosedFormError(f"no closed form registered for {family.family_id}")
        values = [_u1_closed_form_point(float(p[0]), t, phi, family) for p in pts]
        return _shaped(np.array(values), shape)
    return _shaped(_u1_numeric(pts, t, phi, family, panels, order, h_ode), shape)


def truncated_series(
    x, t: float, eta: float, phi: TestFunction, family: StochasticGradientFamily, method=ExpansionMethod.NUMERIC
) -> ExpansionEvaluation:
    u0 = u0_eval(x, t, phi, family, method)
    u1 = u1_eval(x, t, phi, family, method)
    return ExpansionEvaluation.combine(u0, u1, eta, ExpansionMethod(method), x, t)


class LimitConstant(NamedTuple):
    value: float
    tail_bound: float
    horizon: float


def phi1_with_tail(
    phi: TestFunction, family: StochasticGradientFamily, t_max: Optional[float] = None, gamma: Optional[float] = None
) -> LimitConstant:
    """int_0^T L2 u0(x*, s) ds with the e^{-2 gamma s} tail envelope beyond T."""
    if gamma is None:
        gamma = local_constants(family, family.radius).gamma
    t_max = t_max or PHI1_HORIZON_FACTOR / gamma
    x_star = family.objective.x_star[None, :]
    s, w = composite_gauss_legendre(0.0, t_max, DUHAMEL_PANELS, DUHAMEL_ORDER)
    flow = characteristic_flow(x_star, t_max, family, nodes=s, h_ode=H_ODE_MAX, order=2)
    end = flow.states[1:-1, 0]
    du, d2u = _transport_derivatives(end, flow.jacobians[1:-1, 0], flow.second_variations[1:-1, 0], phi)
    integrand = np.asarray(apply_L2(du, d2u, end, family))
    value = float(w @ integrand)
    tail = float(abs(integrand[-1]) / (2.0 * gamma))
    logger.debug(f"phi1 over [0, {t_max:.4g}]: {value:.12g} (tail <= {tail:.3g})")
    return LimitConstant(value=value, tail_bound=tail, horizon=t_max)


def phi1_limit(
    phi: TestFunction, family: StochasticGradientFamily, t_max: Optional[float] = None, gamma: Optional[float] = None
) -> float:
    return phi1_with_tail(phi, family, t_max, gamma).value


def pair_with_initial_measure(
    mu0: Union[InitialMeasure, Sequence],
    t: float,
    eta: float,
    phi: TestFunction,
    family: StochasticGradientFamily,
    method=ExpansionMethod.NUMERIC,
    radius: Optional[float] = None,
) -> float:
    """int (u0 + eta u1)(x, t) mu0(dx) for a discrete initial measure."""
    if not isinstance(mu0, InitialMeasure):
        mu0 = InitialMeasure(points=list(mu0))
    pts, weights = mu0.support(family.dim)
    radius = radius or family.radius
    distance = np.linalg.norm(pts - family.objective.x_star, axis=-1)
    if np.any(distance > radius):
        raise SupportError(f"support outside ball: a point lies {distance.max():.6g} from x* (R={radius})")
    u0 = np.atleast_1d(u0_eval(pts, t, phi, family, method))
    u1 = np.atleast_1d(u1_eval(pts, t, phi, family, method))
    return float(weights @ (u0 + eta * u1))


def evaluate_grid(
    xs, ts, eta: float, phi: TestFunction, family: StochasticGradientFamily, method=ExpansionMethod.NUMERIC
) -> pd.DataFrame:
    """(x, t, u0, u1, u_trunc, method) over a 1D x grid and a t grid.

    Closed-form points on a singular characteristic fall back to the numeric path.
    """
    method = ExpansionMethod(method)
    xs = np.asarray(xs, dtype=float)
    frames = []
    for t in np.asarray(ts, dtype=float):
        if method == ExpansionMethod.NUMERIC:
            u0 = np.atleast_1d(u0_eval(xs, t, phi, family, method))
            u1 = np.atleast_1d(u1_eval(xs, t, phi, family, method))
            used = [method.value] * len(xs)
        else:
            u0, u1, used = _closed_form_row(xs, t, phi, family)
        frames.append(pd.DataFrame({"x": xs, "t": t, "u0": u0, "u1": u1, "u_trunc": u0 + eta * u1, "method": used}))
    return pd.concat(frames, ignore_index=True)


def _closed_form_row(xs: np.ndarray, t: float, phi: TestFunction, family: StochasticGradientFamily):
    u0, u1, used = [], [], []
    for x in xs:
        u0.append(u0_eval(x, t, phi, family, ExpansionMethod.CLOSED_FORM))
        try:
            u1.append(u1_eval(x, t, phi, family, ExpansionMethod.CLOSED_FORM))
            used.append(ExpansionMethod.CLOSED_FORM.value)
        except SingularCharacteristicError:
            logger.info(f"singular characteristic at x={x:.6g}, t={t:.6g}: using numeric quadrature")
            u1.append(u1_eval(x, t, phi, family, ExpansionMethod.NUMERIC))
            used.append(ExpansionMethod.NUMERIC.value)
    return np.array(u0), np.array(u1), used


def c1_norm(phi: TestFunction, center, R: float) -> float:
    """sup |phi| + sup |grad phi| over a grid of B(center, R)."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    pts = center + ball_grid(center.size, R)
    return float(np.max(np.abs(phi.phi(pts))) + np.max(np.linalg.norm(phi.phi_d1(pts), axis=-1)))


class DecayFit(NamedTuple):
    rate: float
    power: float
    intercept: float


def fit_decay_rate(ts, residuals) -> DecayFit:
    """Fit log r = c + a log t - lambda t and report lambda.

    The log t regressor absorbs the polynomial prefactor that appears when
    the two decay modes of u1 coincide (t e^{-gamma t}).
    """
    ts = np.asarray(ts, dtype=float)
    r = np.asarray(residuals, dtype=float)
    keep = r > 0
    if keep.sum() < 3:
        raise ValueError("need at least three positive residuals to fit a decay rate")
    design = np.column_stack([np.ones(keep.sum()), np.log(ts[keep]), -ts[keep]])
    (c, a, lam), *_ = np.linalg.lstsq(design, np.log(r[keep]), rcond=None)
    return DecayFit(rate=float(lam), power=float(a), intercept=float(c))
