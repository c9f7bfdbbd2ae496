"""Activation models sigma(theta, x) with exact gradients and declared constants.

Every model carries the regularity constants consumed by the stability ledger
(:mod:`mflab.constants`).  The constants are *declared* on a compact domain

    |x| <= data_radius,   |theta| <= param_radius

and are checked by :func:`audit_constants` rather than proven symbolically.

Built-in models
---------------
``tanh-dot``     sigma = tanh(theta . x), bounded regime.
    B = 1
    M = max(R_x, R_theta)              (|grad_theta| <= |x|, |grad_x| <= |theta|)
    L_theta = S * R_x**2               with S = max |d/du sech^2(u)| = 4 / (3 sqrt 3)
    L_x = 1 + S * R_x * R_theta
``softplus-dot`` sigma = log(1 + exp(theta . x)), localized regime.
    b = log 2, c = R_x                 (softplus(u) <= log 2 + |u|)
    M = R_x                            (theta-gradient only, see below)
    B = b + c * R_theta                (bound on the parameter ball)
    L_theta = R_x**2 / 4, L_x = 1 + R_x * R_theta / 4

For softplus-dot the x-gradient theta * sigmoid(theta . x) grows with |theta|,
so ``M`` only bounds the theta-gradient; the localization radius only needs
that bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np
from scipy.special import expit

from .errors import InputError

# max over u of |d/du sech^2(u)| = |-2 sech^2 tanh|, attained at tanh(u) = 1/sqrt(3)
SECH2_SLOPE = 4.0 / (3.0 * math.sqrt(3.0))


class Regime(str, Enum):
    BOUNDED = "bounded"
    LOCALIZED = "localized"


def _sech2(u):
    with np.errstate(over="ignore"):
        return 1.0 / np.square(np.cosh(u))


def _tanh_and_sech2(u):
    t = np.tanh(u)
    s = np.asarray(1.0 - t * t)
    # 1 - t^2 loses relative precision in the tails
    far = np.abs(u) > 4.0
    if far.any():
        s[far] = _sech2(u[far])
    return t, s


def _softplus_and_sigmoid(u):
    return np.logaddexp(0.0, u), expit(u)


@dataclass(frozen=True)
class ActivationModel:
    """A two-argument activation with declared constants.

    Subclasses implement :meth:`value`, :meth:`grad_theta` and :meth:`grad_x`
    with numpy broadcasting over leading axes; the public ``eval``-style
    methods add dimension checks for single points.
    """

    name: str
    regime: Regime
    D: int
    d: int
    B: float
    M: float
    L_x: float
    L_theta: float
    b: float
    c: float
    data_radius: float
    param_radius: float

    # -- vectorised kernels -------------------------------------------------
    def value(self, theta, x):
        raise NotImplementedError

    def grad_theta(self, theta, x):
        raise NotImplementedError

    def grad_x(self, theta, x):
        raise NotImplementedError

    def value_and_grad_theta(self, theta, x):
        return self.value(theta, x), self.grad_theta(theta, x)

    # -- checked single-point API -------------------------------------------
    def _check(self, theta_i, x):
        theta_i = np.asarray(theta_i, dtype=float)
        x = np.asarray(x, dtype=float)
        if theta_i.shape != (self.D,):
            raise InputError(f"{self.name}: theta must have shape ({self.D},), got {theta_i.shape}")
        if x.shape != (self.d,):
            raise InputError(f"{self.name}: x must have shape ({self.d},), got {x.shape}")
        return theta_i, x

    def eval(self, theta_i, x) -> float:
        theta_i, x = self._check(theta_i, x)
        return float(self.value(theta_i, x))

    def gradient(self, theta_i, x) -> np.ndarray:
        theta_i, x = self._check(theta_i, x)
        return np.asarray(self.grad_theta(theta_i, x))

    def network_output(self, theta, x) -> float:
        """Mean-field network output (1/N) sum_i sigma(theta^i, x)."""
        theta = np.asarray(theta, dtype=float)
        x = np.asarray(x, dtype=float)
        if theta.ndim != 2 or theta.shape[0] < 1 or theta.shape[1] != self.D:
            raise InputError(f"{self.name}: theta must have shape (N, {self.D}) with N >= 1")
        if x.shape != (self.d,):
            raise InputError(f"{self.name}: x must have shape ({self.d},), got {x.shape}")
        return float(np.mean(self.value(theta, x)))


@dataclass(frozen=True)
class DotActivation(ActivationModel):
    """sigma(theta, x) = f(theta . x) for a scalar profile f (requires D == d)."""

    profile: Callable = field(default=None, repr=False, compare=False)
    derivative: Callable = field(default=None, repr=False, compare=False)
    fused: Callable = field(default=None, repr=False, compare=False)

    @staticmethod
    def _u(theta, x):
        if theta.shape[-1] == 1 and x.shape[-1] == 1:
            return theta[..., 0] * x[..., 0]
        return np.sum(theta * x, axis=-1)

    def value(self, theta, x):
        return self.profile(self._u(theta, x))

    def grad_theta(self, theta, x):
        return self.derivative(self._u(theta, x))[..., None] * x

    def grad_x(self, theta, x):
        return self.derivative(self._u(theta, x))[..., None] * theta

    def value_and_grad_theta(self, theta, x):
        u = self._u(theta, x)
        if self.fused is not None:
            f, df = self.fused(u)
        else:
            f, df = self.profile(u), self.derivative(u)
        return f, df[..., None] * x


def tanh_dot(D: int = 1, data_radius: float = 1.0, param_radius: float = 1.0) -> DotActivation:
    Rx, Rt = float(data_radius), float(param_radius)
    return DotActivation(
        name="tanh-dot",
        regime=Regime.BOUNDED,
        D=D,
        d=D,
        B=1.0,
        M=max(Rx, Rt),
        L_x=1.0 + SECH2_SLOPE * Rx * Rt,
        L_theta=SECH2_SLOPE * Rx**2,
        b=1.0,
        c=0.0,
        data_radius=Rx,
        param_radius=Rt,
        profile=np.tanh,
        derivative=lambda u: _tanh_and_sech2(u)[1],
        fused=_tanh_and_sech2,
    )


def softplus_dot(D: int = 1, data_radius: float = 1.0, param_radius: float = 1.0) -> DotActivation:
    Rx, Rt = float(data_radius), float(param_radius)
    b = math.log(2.0)
    return DotActivation(
        name="softplus-dot",
        regime=Regime.LOCALIZED,
        D=D,
        d=D,
        B=b + Rx * Rt,
        M=Rx,
        L_x=1.0 + 0.25 * Rx * Rt,
        L_theta=0.25 * Rx**2,
        b=b,
        c=Rx,
        data_radius=Rx,
        param_radius=Rt,
        profile=lambda u: np.logaddexp(0.0, u),
        derivative=expit,
        fused=_softplus_and_sigmoid,
    )


BUILTIN_MODELS = {"tanh-dot": tanh_dot, "softplus-dot": softplus_dot}

_CONSTANT_FIELDS = ("B", "M", "L_x", "L_theta", "b", "c")


def get_model(name: str, D: int = 1, data_radius: float = 1.0, param_radius: float = 1.0,
              **overrides) -> ActivationModel:
    """Build a registered model; ``overrides`` replace declared constants."""
    try:
        factory = BUILTIN_MODELS[name]
    except KeyError:
        raise InputError(f"unknown activation model {name!r}; known: {sorted(BUILTIN_MODELS)}") from None
    model = factory(D=D, data_radius=data_radius, param_radius=param_radius)
    bad = set(overrides) - set(_CONSTANT_FIELDS)
    if bad:
        raise InputError(f"cannot override {sorted(bad)}; allowed: {_CONSTANT_FIELDS}")
    if overrides:
        from dataclasses import replace
        model = replace(model, **{k: float(v) for k, v in overrides.items()})
    return model


def register_model(name: str, factory: Callable[..., ActivationModel]) -> None:
    """Extension point: ``factory(D=, data_radius=, param_radius=)`` -> model."""
    BUILTIN_MODELS[name] = factory


def _sample_ball(rng, n, dim, radius):
    g = rng.standard_normal((n, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * (radius * rng.uniform(size=(n, 1)) ** (1.0 / dim))


def audit_constants(model: ActivationModel, n: int = 10_000, seed: int = 0,
                    growth_scale: float = 10.0) -> dict:
    """Worst observed ratio (observed / declared) for each declared constant.

    Points are drawn uniformly from the declared domain.  Lipschitz constants
    are audited on random secants inside the domain.  For the localized regime
    the growth bound ``b + c|theta|`` and the theta-gradient bound are also
    checked far outside the parameter ball (``growth_scale * param_radius``),
    since they are claimed for every theta.
    A ratio <= 1 (up to float slack) means the constant holds on the sample.
    """
    rng = np.random.default_rng(seed)
    Rx, Rt = model.data_radius, model.param_radius
    th = _sample_ball(rng, n, model.D, Rt)
    th2 = _sample_ball(rng, n, model.D, Rt)
    x = _sample_ball(rng, n, model.d, Rx)
    x2 = _sample_ball(rng, n, model.d, Rx)

    def ratio(obs, bound):
        obs = float(np.max(obs))
        return obs / bound if bound > 0 else (0.0 if obs == 0 else math.inf)

    out = {
        "M_theta": ratio(np.linalg.norm(model.grad_theta(th, x), axis=1), model.M),
        "L_theta": ratio(np.linalg.norm(model.grad_theta(th, x) - model.grad_theta(th2, x), axis=1)
                         / np.maximum(np.linalg.norm(th - th2, axis=1), 1e-300), model.L_theta),
        "L_x": ratio(np.linalg.norm(model.grad_theta(th, x) - model.grad_theta(th, x2), axis=1)
                     / np.maximum(np.linalg.norm(x - x2, axis=1), 1e-300), model.L_x),
    }
    if model.regime is Regime.BOUNDED:
        out["B"] = ratio(np.abs(model.value(th, x)), model.B)
        out["M_x"] = ratio(np.linalg.norm(model.grad_x(th, x), axis=1), model.M)
    else:
        wide = _sample_ball(rng, n, model.D, growth_scale * Rt)
        out["growth"] = ratio(np.abs(model.value(wide, x)) / (model.b + model.c * np.linalg.norm(wide, axis=1)), 1.0)
        out["M_theta_wide"] = ratio(np.linalg.norm(model.grad_theta(wide, x), axis=1), model.M)
        out["B"] = ratio(np.abs(model.value(th, x)), model.B)
    return out
