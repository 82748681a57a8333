"""Bridge-proposal particle filter.

Produces an unbiased estimate of the observed-data likelihood under the
Euler discretisation as a deterministic function of a fixed block of
auxiliary standard-Gaussian variates, which is what lets a Crank-Nicolson
kernel correlate successive estimates.  Structure per observation interval:
systematic resampling (one uniform obtained by the Gaussian CDF from the
interval's resampling variate), noisy-endpoint bridge propagation toward
the next observation, importance weighting

    w = p(y_{t+1} | x_{t+1}) p_e(path) / g(path)

in log space, and (optionally) greedy Euclidean sorting of the (state,
weight) pairs so that resampling keeps like innovations paired with like
particles across correlated runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _linalg, backends
from .errors import DegenerateWeights
from .sde import as_natural


@dataclass
class AuxiliaryVariates:
    """All randomness one filter evaluation consumes, in a fixed layout.

    init: (N, d) blocks mapped through the initial-state law; prop:
    (n, N, m, d) propagation innovations (interval-major, then particle,
    then substep, then component); resamp: (n,) variates mapped to the
    systematic-resampling uniforms.
    """

    init: np.ndarray
    prop: np.ndarray
    resamp: np.ndarray

    @classmethod
    def draw(cls, grid, n_particles, d, rng):
        return cls(
            init=rng.standard_normal((n_particles, d)),
            prop=rng.standard_normal((grid.n, n_particles, grid.m, d)),
            resamp=rng.standard_normal(grid.n),
        )

    @property
    def n_particles(self):
        return self.prop.shape[1]

    @property
    def count(self):
        return self.init.size + self.prop.size + self.resamp.size

    def crank_nicolson(self, rho, fresh):
        """rho * self + sqrt(1 - rho^2) * fresh, elementwise over all blocks."""
        c = math.sqrt(1.0 - rho * rho)
        return AuxiliaryVariates(
            init=rho * self.init + c * fresh.init,
            prop=rho * self.prop + c * fresh.prop,
            resamp=rho * self.resamp + c * fresh.resamp,
        )


def systematic_resample(weights, gaussian_variate):
    """Ancestor indices from one Gaussian variate.

    The variate maps to a uniform through the standard normal CDF; index i
    gets the smallest j whose cumulative weight reaches (i + uniform) / N.
    Expected offspring of particle j is N * w_j within one.
    """
    weights = np.asarray(weights, dtype=float)
    if not np.all(np.isfinite(weights)) or np.any(weights < 0) or weights.sum() <= 0.0:
        raise DegenerateWeights("resampling needs nonnegative weights with positive sum")
    n = len(weights)
    cum = np.cumsum(weights)
    cum /= cum[-1]
    positions = (np.arange(n) + _linalg.norm_cdf(gaussian_variate)) / n
    return np.searchsorted(cum, positions, side="left").astype(np.int64)


def euclidean_sort(particles):
    """Greedy nearest-neighbour permutation (see backends.greedy_sort)."""
    return backends.greedy_sort(particles)


def _obs_logdens_batch(y_t, x, obs):
    """log N(y_t; F^T x_i, Sigma) for all particle rows at once."""
    lam, q = _linalg.sym_eig(obs.Sigma)
    lam = _linalg.jittered_eigs(lam)
    z = (y_t - x @ obs.F) @ q
    return -0.5 * (obs.d_o * _linalg.LOG_2PI + np.log(lam).sum() + (z * z / lam).sum(axis=1))


def run_filter(model, obs, data, theta, grid, u, initial, sort_enabled=True, pool=None):
    """Log-likelihood estimate from one pass over y_{1:n}.

    data: (n, d_o) observations at times 1..n; u: AuxiliaryVariates shaped
    for (n, N, m, d); initial: initial-state law with a Gaussian
    reparameterisation.  Returns -inf (no exception) if every particle
    weight vanishes at some step.  Deterministic in (theta, u) and in the
    worker count: innovations are pre-assigned per particle slot and all
    reductions run in a fixed order.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    theta_nat = as_natural(theta)
    n_particles = u.n_particles
    x = np.stack([initial.transform(u.init[i]) for i in range(n_particles)])
    weights = np.full(n_particles, 1.0 / n_particles)
    loglik = 0.0
    for t in range(grid.n):
        ancestors = systematic_resample(weights, u.resamp[t])
        x = x[ancestors]

        if pool is None or pool.workers == 1:
            x, logw = backends.noisy_interval_propagate(
                model, obs, theta_nat, x, data[t], u.prop[t], grid.delta_tau
            )
        else:
            x_cur, u_cur = x, u.prop[t]

            def chunk_fn(slices, x_cur=x_cur, u_cur=u_cur, y_t=data[t]):
                return [
                    backends.noisy_interval_propagate(
                        model, obs, theta_nat, x_cur[s], y_t, u_cur[s], grid.delta_tau
                    )
                    for s in slices
                ]

            parts = pool.map_chunks(chunk_fn, _particle_chunks(n_particles, pool.workers))
            x = np.concatenate([p[0] for p in parts])
            logw = np.concatenate([p[1] for p in parts])

        logw = logw + _obs_logdens_batch(data[t], x, obs)
        hi = np.max(logw)
        if not np.isfinite(hi):
            return -np.inf
        w = np.exp(logw - hi)
        total = w.sum()
        loglik += hi + math.log(total) - math.log(n_particles)
        weights = w / total
        if sort_enabled:
            perm = backends.greedy_sort(x)
            x = x[perm]
            weights = weights[perm]
    return loglik


def _particle_chunks(n, workers):
    k = max(1, min(workers, n))
    bounds = [round(i * n / k) for i in range(k + 1)]
    return [slice(bounds[i], bounds[i + 1]) for i in range(k) if bounds[i] < bounds[i + 1]]
