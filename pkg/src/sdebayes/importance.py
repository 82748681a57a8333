"""Per-interval importance-sampling estimators of the discretised
transition densities p^(m)(x_{t+1} | x_t, theta).

Each unit interval gets an unbiased estimate

    (1/N) sum_i  p_e(x^i_{(t,t+1]} | x_t, theta) / g(x^i_{(t,t+1)} | x_t, x_{t+1}, theta)

from N exact-endpoint bridges driven by the interval's innovation block;
with the convention x^i_{t+1} = x_{t+1} the weight includes the final Euler
factor.  The initial interval draws x_0 through the initial-state law's
Gaussian reparameterisation (its density cancels from the weight), so the
estimate is a deterministic function of (theta, endpoints, u).

Innovation layout (fixed so Crank-Nicolson updates correlate like with
like): one (N, m, d) block per interval; interval 0 uses sample slot 0 for
the x_0 draw and slots 1..m-1 for the bridge; intervals t >= 1 use slots
0..m-2 and ignore the last slot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import backends
from ._linalg import logsumexp
from .sde import as_natural


@dataclass(frozen=True)
class TransitionEstimate:
    """One interval's log estimate; -inf when all bridges fail."""

    log_value: float
    interval: int
    n_samples: int


def estimate_transition(model, x_t, x_next, theta, u_t, grid):
    """Estimate p^(m)(x_{t+1} | x_t, theta) from u_t of shape (N, m-1, d)."""
    u_t = np.asarray(u_t, dtype=float)
    if u_t.ndim != 3 or u_t.shape[1] != grid.m - 1 or u_t.shape[2] != model.d:
        raise ValueError(f"u_t must have shape (N, m-1, d); got {u_t.shape}")
    n_samples = u_t.shape[0]
    x_starts = np.broadcast_to(np.asarray(x_t, dtype=float), (n_samples, model.d))
    logw = backends.exact_interval_logw(
        model, as_natural(theta), x_starts, np.asarray(x_next, dtype=float), u_t, grid.delta_tau
    )
    return TransitionEstimate(logsumexp(logw) - math.log(n_samples), -1, n_samples)


def estimate_initial(model, initial, x_1, theta, u_0, grid):
    """Estimate p^(m)(x_1 | theta); u_0 has shape (N, m, d) with slot 0 the
    reparameterised x_0 draw."""
    u_0 = np.asarray(u_0, dtype=float)
    if u_0.ndim != 3 or u_0.shape[1] != grid.m or u_0.shape[2] != model.d:
        raise ValueError(f"u_0 must have shape (N, m, d); got {u_0.shape}")
    n_samples = u_0.shape[0]
    x_starts = np.stack([initial.transform(u_0[i, 0]) for i in range(n_samples)])
    logw = backends.exact_interval_logw(
        model, as_natural(theta), x_starts, np.asarray(x_1, dtype=float), u_0[:, 1:], grid.delta_tau
    )
    return TransitionEstimate(logsumexp(logw) - math.log(n_samples), 0, n_samples)


def interval_log_estimate(model, initial, theta, u_block, grid, x_end, x_start=None):
    """Log estimate for one interval from its (N, m, d) innovation block.

    With x_start given, slots 0..m-2 drive an exact-endpoint bridge from
    x_start to x_end; without it (the initial interval), slot 0 is the
    reparameterised x_0 draw and slots 1..m-1 drive the bridge.
    """
    u_block = np.asarray(u_block, dtype=float)
    n_samples = u_block.shape[0]
    if x_start is None:
        x_starts = np.stack([initial.transform(u_block[i, 0]) for i in range(n_samples)])
        u_bridge = u_block[:, 1:, :]
    else:
        x_starts = np.broadcast_to(np.asarray(x_start, dtype=float), (n_samples, model.d))
        u_bridge = u_block[:, : grid.m - 1, :]
    logw = backends.exact_interval_logw(
        model, as_natural(theta), x_starts, np.asarray(x_end, dtype=float), u_bridge, grid.delta_tau
    )
    return logsumexp(logw) - math.log(n_samples)


def _interval_log_estimate(model, initial, x_o, theta_nat, u, t_index, grid):
    """Log estimate for interval t_index from the (n, N, m, d) storage."""
    if t_index == 0:
        return interval_log_estimate(model, initial, theta_nat, u[0], grid, x_end=x_o[0])
    return interval_log_estimate(
        model, initial, theta_nat, u[t_index], grid, x_end=x_o[t_index], x_start=x_o[t_index - 1]
    )


def estimate_joint(model, initial, x_o, theta, u, grid, intervals=None, pool=None):
    """Per-interval log estimates.

    x_o: (n, d) latent states at times 1..n; u: (n, N, m, d) innovation
    storage.  Returns an array of log estimates for the requested interval
    indices (default all of 0..n-1); the joint log estimate is their sum.
    Intervals are independent, so the work is chunked over the optional pool
    with a fixed gather order.
    """
    x_o = np.atleast_2d(np.asarray(x_o, dtype=float))
    theta_nat = as_natural(theta)
    if intervals is None:
        intervals = range(grid.n)
    intervals = list(intervals)

    def chunk_fn(idx_chunk):
        return [
            _interval_log_estimate(model, initial, x_o, theta_nat, u, t, grid) for t in idx_chunk
        ]

    if pool is None or len(intervals) == 1:
        values = chunk_fn(intervals)
    else:
        values = pool.map_chunks(chunk_fn, intervals)
    return np.asarray(values, dtype=float)
