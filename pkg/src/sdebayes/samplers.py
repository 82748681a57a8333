"""Pseudo-marginal MCMC schemes.

Three samplers over the Euler-discretised posterior:

* ``pmmh_run``  — particle-filter pseudo-marginal MH with fresh auxiliary
  variates every iteration;
* ``cpmmh_run`` — the correlated variant: auxiliary variates move through a
  Crank-Nicolson kernel, and (state, weight) pairs are greedily sorted after
  propagation so resampling does not destroy the induced correlation;
* ``acpmmh_run`` — the augmented variant: the latent states x^o at the
  observation times join the target, the likelihood factorises into
  per-interval importance-sampling estimates (no resampling), and a Gibbs
  sweep updates theta, then x_t for odd t, then even t, then the endpoint
  x_n jointly with the two adjacent innovation blocks.

With N=1 and rho=0 the augmented scheme reduces to the classic modified
innovation scheme: each theta-update acceptance ratio equals the product of
Euler density ratios times the bridge-density Jacobian ratio (the
change of variables between paths and innovations).

Random-walk proposals are symmetric, so their density ratio is omitted.
All randomness per iteration is drawn on the driver thread in a fixed
order before updates execute; sweep members touch disjoint state slices,
so chains are bit-identical for any worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _linalg, importance
from .errors import InitFailure
from .filter import AuxiliaryVariates, run_filter
from .sde import ParamVector, obs_log_density


@dataclass(frozen=True)
class CnKernel:
    """Crank-Nicolson proposal u' = rho u + sqrt(1 - rho^2) xi."""

    rho: float

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")

    def combine(self, u, fresh):
        return self.rho * u + math.sqrt(1.0 - self.rho * self.rho) * fresh


def cn_propose(kernel, u, rng):
    """Draw u' ~ K(.|u); leaves the standard Gaussian law invariant."""
    u = np.asarray(u, dtype=float)
    return kernel.combine(u, rng.standard_normal(u.shape))


class RwmProposal:
    """Symmetric Gaussian random walk with a fixed covariance."""

    def __init__(self, cov):
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        self.cov = cov
        self.factor = _linalg.psd_sqrt(cov)

    @property
    def dim(self):
        return self.cov.shape[0]

    def propose(self, center, z):
        return np.asarray(center, dtype=float) + self.factor @ z

    def scaled(self, s):
        return RwmProposal(self.cov * float(s))


class PerTimeRwm:
    """One symmetric Gaussian random walk per observation time."""

    def __init__(self, covs):
        covs = np.asarray(covs, dtype=float)
        if covs.ndim == 2:  # same covariance at every time
            covs = np.broadcast_to(covs, (1,) + covs.shape)
        self.covs = covs
        self.factors = np.stack([_linalg.psd_sqrt(c) for c in covs])

    @classmethod
    def constant(cls, cov, n):
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        return cls(np.broadcast_to(cov, (n,) + cov.shape).copy())

    def propose(self, row, center, z):
        idx = min(row, len(self.factors) - 1)
        return np.asarray(center, dtype=float) + self.factors[idx] @ z

    def scaled(self, s):
        return PerTimeRwm(self.covs * float(s))


@dataclass
class ChainState:
    """Current (theta, x^o, u) of the augmented sampler plus caches.

    interval_logest[t] is the log importance-sampling estimate for interval
    t (the initial-interval estimate at t=0); obs_logdens[t-1] is the
    observation log-density at time t.  Caches always equal recomputation
    from (theta, x_o, u); see recompute_caches.
    """

    theta: ParamVector
    x_o: np.ndarray
    u: np.ndarray
    log_prior: float
    interval_logest: np.ndarray
    obs_logdens: np.ndarray

    def log_target(self):
        """Log joint target up to the Gaussian innovation prior p(u)."""
        return self.log_prior + self.interval_logest.sum() + self.obs_logdens.sum()

    def log_estimate(self):
        """Log of the augmented likelihood part (estimate + observation)."""
        return float(self.interval_logest.sum() + self.obs_logdens.sum())

    def copy(self):
        return ChainState(
            theta=self.theta,
            x_o=self.x_o.copy(),
            u=self.u.copy(),
            log_prior=self.log_prior,
            interval_logest=self.interval_logest.copy(),
            obs_logdens=self.obs_logdens.copy(),
        )


@dataclass
class ChainOutput:
    """Sampler output: natural-scale theta draws, per-iteration likelihood
    values, acceptance counters by update type, optional x^o draws."""

    thetas: np.ndarray
    logliks: np.ndarray
    accepts: dict
    x_o: np.ndarray = None
    final_state: ChainState = None
    seconds: float = 0.0

    def acceptance_rates(self):
        return {k: (a / max(1, t)) for k, (a, t) in self.accepts.items()}


def odd_even_schedule(n):
    """(odd sweep, even sweep, endpoint flag) covering times 1..n.

    Interior times 1..n-1 are split by parity; time n is handled by the
    endpoint update.  Works for odd n by letting the even sweep run to n-1.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    return list(range(1, n, 2)), list(range(2, n, 2)), True


def recompute_caches(model, obs, data, grid, initial, log_prior, state, pool=None):
    """Caches recomputed from scratch for ChainState auditing."""
    est = importance.estimate_joint(model, initial, state.x_o, state.theta, state.u, grid, pool=pool)
    obs_ld = np.array(
        [obs_log_density(data[t], state.x_o[t], obs) for t in range(grid.n)]
    )
    return est, obs_ld, log_prior(state.theta.working)


def init_chain_state(
    model, obs, data, grid, log_prior, theta0, x_o0, n_samples, rng, initial, pool=None, max_retries=100
):
    """Build a ChainState, redrawing u until the joint estimate is finite."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    x_o0 = np.atleast_2d(np.asarray(x_o0, dtype=float)).copy()
    lp = log_prior(theta0.working)
    if not np.isfinite(lp):
        raise InitFailure("initial theta outside the prior support")
    for t in range(grid.n):
        if not model.in_domain(x_o0[t]):
            raise InitFailure(f"initial x at time {t + 1} outside the state domain")
    for _ in range(max_retries):
        u = rng.standard_normal((grid.n, n_samples, grid.m, model.d))
        est = importance.estimate_joint(model, initial, x_o0, theta0, u, grid, pool=pool)
        if np.all(np.isfinite(est)):
            obs_ld = np.array([obs_log_density(data[t], x_o0[t], obs) for t in range(grid.n)])
            return ChainState(theta0, x_o0, u, lp, est, obs_ld)
    raise InitFailure(f"joint estimate stayed -inf after {max_retries} innovation redraws")


# --- augmented-scheme update steps -----------------------------------------
#
# The internal _*_step functions take pre-drawn randomness so the run loop
# (and the public per-update ops below) fully control draw order.


def _theta_step(state, model, obs, data, grid, initial, log_prior, proposal, z, log_accept_u, pool=None):
    w_new = proposal.propose(state.theta.working, z)
    lp_new = log_prior(w_new)
    if not np.isfinite(lp_new):
        return False, -np.inf
    theta_new = ParamVector.from_working(w_new, state.theta.log_mask)
    est_new = importance.estimate_joint(
        model, initial, state.x_o, theta_new, state.u, grid, pool=pool
    )
    # The observation density does not depend on theta here (F, Sigma fixed),
    # so its ratio is zero; the innovation prior cancels because u is reused.
    log_ratio = (lp_new - state.log_prior) + (est_new.sum() - state.interval_logest.sum())
    accepted = log_ratio >= 0.0 or log_accept_u < log_ratio
    if accepted:
        state.theta = theta_new
        state.log_prior = lp_new
        state.interval_logest = est_new
    return accepted, float(log_ratio)


def _x_interior_step(
    state, model, obs, data, grid, initial, x_proposal, kernel, t, z, xi_pair, log_accept_u
):
    """Joint (x_t, u_{t-1}, u_t) update at interior time t in 1..n-1."""
    row = t - 1
    x_new = x_proposal.propose(row, state.x_o[row], z)
    u_prev = kernel.combine(state.u[t - 1], xi_pair[0])
    u_cur = kernel.combine(state.u[t], xi_pair[1])
    if not model.in_domain(x_new):
        return False, -np.inf
    theta = state.theta
    if t == 1:
        est_prev = importance.interval_log_estimate(model, initial, theta, u_prev, grid, x_end=x_new)
    else:
        est_prev = importance.interval_log_estimate(
            model, initial, theta, u_prev, grid, x_end=x_new, x_start=state.x_o[row - 1]
        )
    est_cur = importance.interval_log_estimate(
        model, initial, theta, u_cur, grid, x_end=state.x_o[row + 1], x_start=x_new
    )
    obs_new = obs_log_density(data[row], x_new, obs)
    log_ratio = (
        (est_prev - state.interval_logest[t - 1])
        + (est_cur - state.interval_logest[t])
        + (obs_new - state.obs_logdens[row])
    )
    accepted = log_ratio >= 0.0 or log_accept_u < log_ratio
    if accepted:
        state.x_o[row] = x_new
        state.u[t - 1] = u_prev
        state.u[t] = u_cur
        state.interval_logest[t - 1] = est_prev
        state.interval_logest[t] = est_cur
        state.obs_logdens[row] = obs_new
    return accepted, float(log_ratio)


def _x_endpoint_step(state, model, obs, data, grid, initial, x_proposal, kernel, z, xi, log_accept_u):
    """Joint (x_n, u_{n-1}) update."""
    n = grid.n
    row = n - 1
    x_new = x_proposal.propose(row, state.x_o[row], z)
    u_last = kernel.combine(state.u[n - 1], xi)
    if not model.in_domain(x_new):
        return False, -np.inf
    if n == 1:
        est_last = importance.interval_log_estimate(
            model, initial, state.theta, u_last, grid, x_end=x_new
        )
    else:
        est_last = importance.interval_log_estimate(
            model, initial, state.theta, u_last, grid, x_end=x_new, x_start=state.x_o[row - 1]
        )
    obs_new = obs_log_density(data[row], x_new, obs)
    log_ratio = (est_last - state.interval_logest[n - 1]) + (obs_new - state.obs_logdens[row])
    accepted = log_ratio >= 0.0 or log_accept_u < log_ratio
    if accepted:
        state.x_o[row] = x_new
        state.u[n - 1] = u_last
        state.interval_logest[n - 1] = est_last
        state.obs_logdens[row] = obs_new
    return accepted, float(log_ratio)


# --- public per-update operations (draw from rng, then delegate) -----------


def acpmmh_theta_update(state, model, obs, data, grid, initial, log_prior, proposal, rng, pool=None):
    z = rng.standard_normal(proposal.dim)
    log_u = math.log(rng.random())
    return _theta_step(state, model, obs, data, grid, initial, log_prior, proposal, z, log_u, pool)


def acpmmh_xt_update(state, model, obs, data, grid, initial, x_proposal, kernel, t, rng):
    if not 1 <= t <= grid.n - 1:
        raise ValueError("interior updates need 1 <= t <= n-1")
    z = rng.standard_normal(model.d)
    xi = rng.standard_normal((2,) + state.u.shape[1:])
    log_u = math.log(rng.random())
    return _x_interior_step(
        state, model, obs, data, grid, initial, x_proposal, kernel, t, z, xi, log_u
    )


def acpmmh_endpoint_update(state, model, obs, data, grid, initial, x_proposal, kernel, rng):
    z = rng.standard_normal(model.d)
    xi = rng.standard_normal(state.u.shape[1:])
    log_u = math.log(rng.random())
    return _x_endpoint_step(
        state, model, obs, data, grid, initial, x_proposal, kernel, z, xi, log_u
    )


def acpmmh_run(
    model,
    obs,
    data,
    grid,
    log_prior,
    theta_proposal,
    x_proposal,
    kernel,
    n_samples,
    n_iters,
    rng,
    initial,
    theta0=None,
    x_o0=None,
    init_state=None,
    pool=None,
    store_x=True,
):
    """Augmented correlated pseudo-marginal Gibbs sampler.

    Per iteration: theta update (all intervals re-estimated with the same u),
    interior sweeps over odd then even times (each a joint x_t and
    Crank-Nicolson innovation move on the two adjacent intervals), endpoint
    update.  Members of one sweep touch disjoint caches and may run on the
    worker pool; all randomness is pre-drawn per block on the driver thread,
    so output is independent of the worker count.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if init_state is not None:
        state = init_state.copy()
    else:
        state = init_chain_state(
            model, obs, data, grid, log_prior, theta0, x_o0, n_samples, rng, initial, pool=pool
        )
    n, d, p = grid.n, model.d, state.theta.p
    odd, even, _ = odd_even_schedule(n)
    thetas = np.empty((n_iters, p))
    logliks = np.empty(n_iters)
    x_store = np.empty((n_iters, n, d)) if store_x else None
    acc_theta = acc_int = acc_end = 0

    def run_sweep(ts, Z, XI, LU):
        def chunk_fn(items):
            hits = 0
            for j, t in items:
                ok, _ = _x_interior_step(
                    state, model, obs, data, grid, initial, x_proposal, kernel, t, Z[j], XI[j], LU[j]
                )
                hits += ok
            return [hits]

        if pool is None:
            return sum(chunk_fn(list(enumerate(ts))))
        return sum(pool.map_chunks(chunk_fn, list(enumerate(ts))))

    for i in range(n_iters):
        z_th = rng.standard_normal(p)
        lu_th = math.log(rng.random())
        ok, _ = _theta_step(
            state, model, obs, data, grid, initial, log_prior, theta_proposal, z_th, lu_th, pool
        )
        acc_theta += ok
        for ts in (odd, even):
            if not ts:
                continue
            Z = rng.standard_normal((len(ts), d))
            XI = rng.standard_normal((len(ts), 2, state.u.shape[1], grid.m, d))
            LU = np.log(rng.random(len(ts)))
            acc_int += run_sweep(ts, Z, XI, LU)
        z_end = rng.standard_normal(d)
        xi_end = rng.standard_normal(state.u.shape[1:])
        lu_end = math.log(rng.random())
        ok, _ = _x_endpoint_step(
            state, model, obs, data, grid, initial, x_proposal, kernel, z_end, xi_end, lu_end
        )
        acc_end += ok
        thetas[i] = state.theta.natural
        logliks[i] = state.log_estimate()
        if store_x:
            x_store[i] = state.x_o
    accepts = {
        "theta": (acc_theta, n_iters),
        "x_interior": (acc_int, n_iters * (len(odd) + len(even))),
        "x_endpoint": (acc_end, n_iters),
    }
    return ChainOutput(thetas, logliks, accepts, x_o=x_store, final_state=state)


# --- particle-filter pseudo-marginal drivers --------------------------------


def cpmmh_run(
    model,
    obs,
    data,
    grid,
    log_prior,
    proposal,
    kernel,
    n_particles,
    n_iters,
    rng,
    initial,
    theta0,
    sort_enabled=True,
    pool=None,
    max_init_retries=100,
):
    """Correlated pseudo-marginal MH: joint (theta, u) accept/reject with the
    likelihood estimated by the bridge particle filter."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    w = theta0.working
    lp = log_prior(w)
    if not np.isfinite(lp):
        raise InitFailure("initial theta outside the prior support")
    theta = theta0
    u = None
    for _ in range(max_init_retries):
        u = AuxiliaryVariates.draw(grid, n_particles, model.d, rng)
        ll = run_filter(model, obs, data, theta, grid, u, initial, sort_enabled, pool)
        if np.isfinite(ll):
            break
    else:
        raise InitFailure(f"likelihood estimate stayed -inf after {max_init_retries} redraws")
    p = theta.p
    thetas = np.empty((n_iters, p))
    logliks = np.empty(n_iters)
    accepted = 0
    for i in range(n_iters):
        z = rng.standard_normal(p)
        fresh = AuxiliaryVariates.draw(grid, n_particles, model.d, rng)
        log_accept_u = math.log(rng.random())
        w_new = proposal.propose(theta.working, z)
        lp_new = log_prior(w_new)
        u_new = u.crank_nicolson(kernel.rho, fresh)
        if np.isfinite(lp_new):
            theta_new = ParamVector.from_working(w_new, theta.log_mask)
            ll_new = run_filter(model, obs, data, theta_new, grid, u_new, initial, sort_enabled, pool)
            log_ratio = (lp_new + ll_new) - (lp + ll)
            if log_ratio >= 0.0 or log_accept_u < log_ratio:
                theta, lp, ll, u = theta_new, lp_new, ll_new, u_new
                accepted += 1
        thetas[i] = theta.natural
        logliks[i] = ll
    return ChainOutput(thetas, logliks, {"theta": (accepted, n_iters)})


def pmmh_run(
    model,
    obs,
    data,
    grid,
    log_prior,
    proposal,
    n_particles,
    n_iters,
    rng,
    initial,
    theta0,
    pool=None,
):
    """Plain pseudo-marginal MH: the correlated driver with rho=0 (fresh u
    every iteration) and sorting off."""
    return cpmmh_run(
        model,
        obs,
        data,
        grid,
        log_prior,
        proposal,
        CnKernel(0.0),
        n_particles,
        n_iters,
        rng,
        initial,
        theta0,
        sort_enabled=False,
        pool=pool,
    )
