"""Diffusion-model primitives.

A d-dimensional Ito diffusion

    dX_t = alpha(X_t, theta) dt + sqrt(beta(X_t, theta)) dW_t

is observed at integer times 1..n through Y_t = F^T X_t + eps_t with
eps_t ~ N(0, Sigma).  Each unit interval [t, t+1] is split into m
subintervals of width 1/m and the Euler-Maruyama transition

    X_{k+1} | X_k ~ N(X_k + alpha dt, beta dt)

is applied on each.  This module holds the model/observation/grid types,
Euler moments and log-densities, forward simulation and data generation.
All operations are pure given an explicit numpy Generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _linalg
from .errors import DomainExit, NonFiniteDrift, NotPSD

# Tolerances for the symmetric-PSD validation of beta.
_SYM_TOL = 1e-8
_PSD_TOL = -1e-9


def as_natural(theta):
    """Natural-scale parameter vector from a ParamVector or array-like."""
    if isinstance(theta, ParamVector):
        return theta.natural
    return np.asarray(theta, dtype=float)


@dataclass(frozen=True)
class ParamVector:
    """Parameter vector carried on both the natural and the working scale.

    Components flagged in ``log_mask`` are strictly positive and are
    proposed/stored on the log scale; the rest pass through unchanged.
    """

    natural: np.ndarray
    log_mask: np.ndarray

    @classmethod
    def from_natural(cls, theta, log_mask=None):
        theta = np.asarray(theta, dtype=float).copy()
        if log_mask is None:
            log_mask = np.ones(theta.shape, dtype=bool)
        log_mask = np.asarray(log_mask, dtype=bool)
        if np.any(theta[log_mask] <= 0.0):
            raise ValueError("log-scale components must be positive")
        return cls(theta, log_mask)

    @classmethod
    def from_working(cls, w, log_mask):
        w = np.asarray(w, dtype=float)
        log_mask = np.asarray(log_mask, dtype=bool)
        theta = np.where(log_mask, np.exp(w), w)
        return cls(theta, log_mask)

    @property
    def working(self):
        return np.where(self.log_mask, np.log(self.natural), self.natural)

    @property
    def p(self):
        return len(self.natural)


@dataclass(frozen=True)
class SdeModel:
    """Drift/diffusion pair with a box state domain.

    ``drift(x, theta) -> (d,)`` and ``diffusion(x, theta) -> (d, d)`` take the
    natural-scale parameter vector.  ``kernel_id``/``kernel_params`` wire a
    model into the compiled backend; models without them run on the reference
    backend.
    """

    name: str
    d: int
    p: int
    drift: Callable
    diffusion: Callable
    state_lower: np.ndarray = None
    state_upper: np.ndarray = None
    jacobian: Callable = None  # analytic d(alpha)/dx, else finite differences
    kernel_id: int = -1
    kernel_params: Callable = None  # theta -> flat constants array for _core

    def __post_init__(self):
        lo = self.state_lower
        hi = self.state_upper
        lo = np.full(self.d, -np.inf) if lo is None else np.asarray(lo, float)
        hi = np.full(self.d, np.inf) if hi is None else np.asarray(hi, float)
        object.__setattr__(self, "state_lower", lo)
        object.__setattr__(self, "state_upper", hi)

    def in_domain(self, x):
        x = np.asarray(x)
        return bool(np.all(x >= self.state_lower) and np.all(x <= self.state_upper))

    def clip_to_domain(self, x):
        return np.clip(x, self.state_lower, self.state_upper)

    def drift_jacobian(self, x, theta):
        """Analytic Jacobian when declared, else central finite differences."""
        theta = as_natural(theta)
        if self.jacobian is not None:
            return np.asarray(self.jacobian(np.asarray(x, float), theta), float)
        return finite_difference_jacobian(self.drift, x, theta)


def finite_difference_jacobian(fn, x, theta, rel_step=1e-5):
    """Central finite differences of fn(x, theta) w.r.t. x."""
    x = np.asarray(x, dtype=float)
    d = len(x)
    jac = np.empty((d, d))
    for j in range(d):
        h = rel_step * (1.0 + abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        jac[:, j] = (np.asarray(fn(xp, theta), float) - np.asarray(fn(xm, theta), float)) / (2.0 * h)
    return jac


@dataclass(frozen=True)
class ObservationModel:
    """Linear-Gaussian observation Y = F^T X + N(0, Sigma)."""

    F: np.ndarray  # (d, d_o)
    Sigma: np.ndarray  # (d_o, d_o)

    def __post_init__(self):
        object.__setattr__(self, "F", np.atleast_2d(np.asarray(self.F, float)))
        object.__setattr__(self, "Sigma", np.atleast_2d(np.asarray(self.Sigma, float)))
        if self.d_o > self.F.shape[0]:
            raise ValueError("observation dimension exceeds state dimension")

    @property
    def d(self):
        return self.F.shape[0]

    @property
    def d_o(self):
        return self.F.shape[1]

    @classmethod
    def full(cls, d, sigma2):
        """Observe every component with iid error variance sigma2 (may be 0)."""
        return cls(np.eye(d), float(sigma2) * np.eye(d))

    @classmethod
    def diagonal(cls, variances):
        v = np.asarray(variances, dtype=float)
        return cls(np.eye(len(v)), np.diag(v))


@dataclass(frozen=True)
class TimeGrid:
    """n unit observation intervals, each split into m Euler subintervals."""

    n: int
    m: int

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("need n >= 1 observation times and m >= 1 subintervals")

    @property
    def delta_tau(self):
        return 1.0 / self.m

    @property
    def n_points(self):
        return self.n * self.m + 1

    def times(self):
        return np.arange(self.n_points) * self.delta_tau

    @classmethod
    def from_delta_tau(cls, n, delta_tau):
        m = round(1.0 / float(delta_tau))
        if m < 1 or abs(m * float(delta_tau) - 1.0) > 1e-9:
            raise ValueError("delta_tau must be 1/m for integer m >= 1")
        return cls(n, m)


@dataclass
class LatentPath:
    """Latent values on the fine grid: (n*m + 1, d), row 0 at time 0."""

    values: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[0] != self.grid.n_points:
            raise ValueError("path length does not match the grid")

    @property
    def x_obs(self):
        """States at the observation times 1..n, shape (n, d)."""
        return self.values[self.grid.m :: self.grid.m]

    @property
    def x_intermediate(self):
        """States at all non-observation grid points (time 0 included)."""
        idx = np.arange(self.grid.n_points)
        return self.values[(idx % self.grid.m != 0) | (idx == 0)]


def euler_moments(model, x, theta, dt):
    """One-step Euler-Maruyama mean and covariance.

    mean = x + alpha(x, theta) dt,  cov = beta(x, theta) dt.
    Raises NonFiniteDrift / NotPSD on invalid model output.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    th = as_natural(theta)
    alpha = np.asarray(model.drift(x, th), dtype=float)
    beta = np.atleast_2d(np.asarray(model.diffusion(x, th), dtype=float))
    if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta))):
        raise NonFiniteDrift(f"non-finite drift/diffusion at x={x}")
    scale = 1.0 + np.abs(beta).max()
    if np.abs(beta - beta.T).max() > _SYM_TOL * scale:
        raise NotPSD("diffusion matrix is not symmetric")
    if beta.shape[0] == 1:
        if beta[0, 0] < _PSD_TOL:
            raise NotPSD("negative diffusion")
    elif np.linalg.eigvalsh(0.5 * (beta + beta.T)).min() < _PSD_TOL * scale:
        raise NotPSD("diffusion matrix has negative eigenvalues")
    return x + alpha * dt, beta * dt


def euler_log_density(model, x_from, x_to, theta, dt):
    """log N(x_to; x_from + alpha dt, beta dt)."""
    mean, cov = euler_moments(model, x_from, theta, dt)
    return _linalg.mvn_logpdf(np.asarray(x_to, dtype=float), mean, cov)


def path_log_density(model, segment, theta, grid):
    """Joint Euler log-density of one interval's segment (m+1 rows incl. x_t)."""
    segment = np.atleast_2d(np.asarray(segment, dtype=float))
    if segment.shape[0] != grid.m + 1:
        raise ValueError("segment must hold m+1 points including the start")
    total = 0.0
    dt = grid.delta_tau
    for k in range(grid.m):
        total += euler_log_density(model, segment[k], segment[k + 1], theta, dt)
    return total


def simulate_path(model, theta, x0, grid, rng, policy="truncate"):
    """Forward Euler-Maruyama simulation on the fine grid.

    policy: 'truncate' clips each step to the state domain; 'reject' raises
    DomainExit when a step leaves it.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if not model.in_domain(x0):
        raise DomainExit(f"x0={x0} outside the state domain")
    dt = grid.delta_tau
    values = np.empty((grid.n_points, model.d))
    values[0] = x0
    x = x0
    for k in range(grid.n_points - 1):
        mean, cov = euler_moments(model, x, theta, dt)
        x = mean + _linalg.psd_sqrt(cov) @ rng.standard_normal(model.d)
        if not model.in_domain(x):
            if policy == "reject":
                raise DomainExit(f"step {k + 1} left the state domain")
            x = model.clip_to_domain(x)
        values[k + 1] = x
    return LatentPath(values, grid)


def simulate_data(path, obs, rng):
    """Noisy observations y_t = F^T x_t + N(0, Sigma) at times 1..n."""
    x = path.x_obs
    noise_sqrt = _linalg.psd_sqrt(obs.Sigma)
    y = x @ obs.F + rng.standard_normal((x.shape[0], obs.d_o)) @ noise_sqrt.T
    return y


def obs_log_density(y_t, x_t, obs):
    """log N(y_t; F^T x_t, Sigma)."""
    mean = obs.F.T @ np.asarray(x_t, dtype=float)
    return _linalg.mvn_logpdf(np.asarray(y_t, dtype=float), mean, obs.Sigma)


class PointMassInitial:
    """Degenerate initial-state law: X_0 = x0 exactly."""

    def __init__(self, x0):
        self.x0 = np.atleast_1d(np.asarray(x0, dtype=float))

    def transform(self, u):
        """Map a standard-Gaussian d-block to an initial state (constant)."""
        return self.x0


class GaussianInitial:
    """Gaussian initial-state law X_0 ~ N(mean, cov), reparameterised so the
    draw is a deterministic transform of a standard-Gaussian d-block."""

    def __init__(self, mean, cov):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.sqrt_cov = _linalg.psd_sqrt(np.atleast_2d(np.asarray(cov, dtype=float)))

    def transform(self, u):
        return self.mean + self.sqrt_cov @ np.asarray(u, dtype=float)
