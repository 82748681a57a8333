"""Benchmark diffusion models.

Three stochastic-kinetics benchmarks (registry keys "sqrt", "lv",
"autoreg") plus an affine linear model used for exact-oracle testing and
benchmarking.  Each ModelSpec bundles the SDE, analytic drift Jacobian,
ground-truth parameters, default initial condition, observation-model and
log-prior builders, and the log-scale mask for the working parameterisation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError
from .sde import ObservationModel, SdeModel

# Compiled-backend dispatch ids (mirrored in backends/_core.pyx).
KID_AFFINE1D = 0
KID_SQRT = 1
KID_LV = 2
KID_AUTOREG = 3


@dataclass(frozen=True)
class ModelSpec:
    """A model plus everything an experiment needs to run it."""

    model: SdeModel
    theta_true: np.ndarray
    x0: np.ndarray
    log_scale_mask: np.ndarray
    make_observation: Callable  # config kwargs -> ObservationModel
    log_prior: Callable  # working-scale theta -> log density (Jacobian absorbed)
    theta_names: tuple


def _gaussian_working_prior(p, sd=10.0):
    """Independent N(0, sd^2) priors on each working-scale component."""

    def log_prior(w):
        w = np.asarray(w, dtype=float)
        return float(-0.5 * np.sum(w * w) / sd**2 - p * (0.5 * math.log(2 * math.pi) + math.log(sd)))

    return log_prior


def _uniform_working_prior(lo, hi, p):
    def log_prior(w):
        w = np.asarray(w, dtype=float)
        if np.any(w < lo) or np.any(w > hi):
            return -np.inf
        return -p * math.log(hi - lo)

    return log_prior


def square_root_model():
    """Univariate square-root diffusion (degenerate Feller):

    dX = (th1 - th2) X dt + sqrt((th1 + th2) X) dW,  X >= 0.
    """

    def drift(x, th):
        return np.array([(th[0] - th[1]) * x[0]])

    def diffusion(x, th):
        return np.array([[(th[0] + th[1]) * x[0]]])

    def jacobian(x, th):
        return np.array([[th[0] - th[1]]])

    model = SdeModel(
        name="sqrt",
        d=1,
        p=2,
        drift=drift,
        diffusion=diffusion,
        state_lower=np.zeros(1),
        jacobian=jacobian,
        kernel_id=KID_SQRT,
        kernel_params=lambda th: np.asarray(th, dtype=float),
    )
    return ModelSpec(
        model=model,
        theta_true=np.array([0.05, 0.06]),
        x0=np.array([25.0]),
        log_scale_mask=np.array([True, True]),
        make_observation=lambda sigma=1.0, **_: ObservationModel.full(1, float(sigma) ** 2),
        log_prior=_gaussian_working_prior(2),
        theta_names=("theta1", "theta2"),
    )


def lotka_volterra_model():
    """Prey/predator interaction:

    drift  = (th1 x1 - th2 x1 x2,  th2 x1 x2 - th3 x2)
    beta   = [[th1 x1 + th2 x1 x2,  -th2 x1 x2],
              [-th2 x1 x2,           th2 x1 x2 + th3 x2]]
    """

    def drift(x, th):
        inter = th[1] * x[0] * x[1]
        return np.array([th[0] * x[0] - inter, inter - th[2] * x[1]])

    def diffusion(x, th):
        inter = th[1] * x[0] * x[1]
        return np.array(
            [
                [th[0] * x[0] + inter, -inter],
                [-inter, inter + th[2] * x[1]],
            ]
        )

    def jacobian(x, th):
        return np.array(
            [
                [th[0] - th[1] * x[1], -th[1] * x[0]],
                [th[1] * x[1], th[1] * x[0] - th[2]],
            ]
        )

    model = SdeModel(
        name="lv",
        d=2,
        p=3,
        drift=drift,
        diffusion=diffusion,
        state_lower=np.zeros(2),
        jacobian=jacobian,
        kernel_id=KID_LV,
        kernel_params=lambda th: np.asarray(th, dtype=float),
    )
    return ModelSpec(
        model=model,
        theta_true=np.array([0.5, 0.0025, 0.3]),
        x0=np.array([100.0, 100.0]),
        log_scale_mask=np.array([True, True, True]),
        make_observation=lambda sigma=1.0, **_: ObservationModel.full(2, float(sigma) ** 2),
        log_prior=_gaussian_working_prior(3),
        theta_names=("theta1", "theta2", "theta3"),
    )


# Stoichiometry of the autoregulatory network (4 species x 8 reactions).
_AUTOREG_S = np.array(
    [
        [0, 0, 1, 0, 0, 0, -1, 0],
        [0, 0, 0, 1, -2, 2, 0, -1],
        [-1, 1, 0, 0, 1, -1, 0, 0],
        [-1, 1, 0, 0, 0, 0, 0, 0],
    ],
    dtype=float,
)


def _autoreg_hazards(x, th, c8):
    """Reaction hazards; clamped at 0 so S diag(h) S^T stays PSD on the domain."""
    h = np.array(
        [
            0.1 * x[3] * x[2],
            th[0] * (10.0 - x[3]),
            th[1] * x[3],
            0.2 * x[0],
            0.1 * x[1] * (x[1] - 1.0) / 2.0,
            th[2] * x[2],
            th[3] * x[0],
            c8 * x[1],
        ]
    )
    return np.clip(h, 0.0, None)


def autoreg_model(c8):
    """Prokaryotic autoregulation network (RNA, P, P2, DNA) via the chemical
    Langevin equation: drift S h(x, theta), diffusion S diag(h) S^T.

    c8 is the fixed rate constant of the eighth (protein removal) reaction and
    must be supplied explicitly in the experiment configuration.
    """
    c8 = float(c8)
    if c8 <= 0.0:
        raise ConfigError("autoreg model requires a positive c8 constant")

    def drift(x, th):
        return _AUTOREG_S @ _autoreg_hazards(x, th, c8)

    def diffusion(x, th):
        h = _autoreg_hazards(x, th, c8)
        return (_AUTOREG_S * h) @ _AUTOREG_S.T

    def jacobian(x, th):
        dh = np.zeros((8, 4))
        dh[0, 3] = 0.1 * x[2]
        dh[0, 2] = 0.1 * x[3]
        dh[1, 3] = -th[0]
        dh[2, 3] = th[1]
        dh[3, 0] = 0.2
        dh[4, 1] = 0.05 * (2.0 * x[1] - 1.0)
        dh[5, 2] = th[2]
        dh[6, 0] = th[3]
        dh[7, 1] = c8
        return _AUTOREG_S @ dh

    model = SdeModel(
        name="autoreg",
        d=4,
        p=4,
        drift=drift,
        diffusion=diffusion,
        state_lower=np.zeros(4),
        state_upper=np.array([np.inf, np.inf, np.inf, 10.0]),
        jacobian=jacobian,
        kernel_id=KID_AUTOREG,
        kernel_params=lambda th: np.append(np.asarray(th, dtype=float), c8),
    )
    return ModelSpec(
        model=model,
        theta_true=np.array([0.7, 0.35, 0.9, 0.3]),
        x0=np.array([8.0, 8.0, 8.0, 5.0]),
        log_scale_mask=np.array([True] * 4),
        make_observation=lambda **_: ObservationModel.diagonal([1.0, 1.0, 1.0, 0.25]),
        log_prior=_uniform_working_prior(-5.0, 5.0, 4),
        theta_names=("theta1", "theta2", "theta3", "theta4"),
    )


def affine_model(a=0.0, b=0.0, c=1.0, name="affine"):
    """Scalar linear SDE dX = (a + b X) dt + sqrt(c) dW.

    Covers Brownian motion (b=0) and Ornstein-Uhlenbeck (a=0, b<0); its exact
    Gaussian transitions make it the oracle model for unbiasedness and
    filter-exactness tests, so it is wired into the compiled backend too.
    """
    a, b, c = float(a), float(b), float(c)

    def drift(x, th):
        return np.array([th[0] + th[1] * x[0]])

    def diffusion(x, th):
        return np.array([[th[2]]])

    def jacobian(x, th):
        return np.array([[th[1]]])

    model = SdeModel(
        name=name,
        d=1,
        p=3,
        drift=drift,
        diffusion=diffusion,
        jacobian=jacobian,
        kernel_id=KID_AFFINE1D,
        kernel_params=lambda th: np.asarray(th, dtype=float),
    )
    return ModelSpec(
        model=model,
        theta_true=np.array([a, b, c]),
        x0=np.zeros(1),
        log_scale_mask=np.array([False, False, True]),
        make_observation=lambda sigma=1.0, **_: ObservationModel.full(1, float(sigma) ** 2),
        log_prior=_gaussian_working_prior(3),
        theta_names=("a", "b", "c"),
    )


_REGISTRY = {
    "sqrt": lambda constants: square_root_model(),
    "lv": lambda constants: lotka_volterra_model(),
    "autoreg": lambda constants: autoreg_model(**constants),
}


def available_models():
    return sorted(_REGISTRY)


def get_model(name, constants=None):
    """Look up a ModelSpec by registry key ("sqrt", "lv", "autoreg")."""
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown model {name!r}; available: {available_models()}") from None
    try:
        return factory(dict(constants or {}))
    except TypeError as exc:
        raise ConfigError(f"model {name!r} constants invalid: {exc}") from exc
