"""Chain diagnostics and tuning calculators.

Effective sample size uses the autoregressive spectral estimator: fit AR(k)
by Yule-Walker with AIC order selection, take the spectral density at
frequency zero sigma^2 / (1 - sum phi)^2, and set ESS = L * var / spec0,
clamped to [1, L].  A batch-means estimator is kept as a cross-check.

Particle-count rules: for the uncorrelated scheme pick the smallest N whose
log-likelihood estimate has standard deviation <= 1.5 at a central theta;
for correlated schemes pick the smallest N with Var(delta log-likelihood)
<= 1 under Crank-Nicolson-coupled variates.  The random-walk proposal rule
of thumb is Omega = (2.56^2 / p) * posterior covariance estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import importance
from .errors import TuningFailure
from .filter import AuxiliaryVariates, run_filter
from .samplers import CnKernel

SD_TARGET_UNCORRELATED = 1.5
VAR_TARGET_CORRELATED = 1.0
RWM_SCALE = 2.56**2


@dataclass
class EssReport:
    """Per-chain effective sample sizes plus timing-normalised summaries."""

    ess_theta: np.ndarray
    ess_x: np.ndarray
    min_ess: float
    seconds: float
    acceptance_rates: dict
    degenerate: list

    @property
    def mess_per_second(self):
        if self.seconds <= 0.0:
            return float("nan")
        return self.min_ess / self.seconds


def _autocovariances(x, max_lag):
    x = x - x.mean()
    L = len(x)
    c = np.empty(max_lag + 1)
    for k in range(max_lag + 1):
        c[k] = np.dot(x[: L - k], x[k:]) / L
    return c


def ar_spectrum0(chain, order_max=None):
    """(spectral density at frequency zero, selected AR order).

    Yule-Walker fits of increasing order via Levinson-Durbin; the order
    minimises AIC = L log(sigma2) + 2 order.
    """
    x = np.asarray(chain, dtype=float)
    L = len(x)
    if order_max is None:
        order_max = min(L - 2, int(10.0 * math.log10(L)))
    order_max = max(0, order_max)
    c = _autocovariances(x, order_max)
    if c[0] <= 0.0:
        return 0.0, 0
    sigma2 = c[0]
    best_aic = L * math.log(sigma2) + 0.0
    best = (sigma2, np.empty(0), 0)
    phi = np.empty(0)
    for k in range(1, order_max + 1):
        num = c[k] - (phi @ c[k - 1 : 0 : -1] if k > 1 else 0.0)
        kappa = num / sigma2
        phi = np.append(phi - kappa * phi[::-1], kappa)
        sigma2 = sigma2 * (1.0 - kappa * kappa)
        if sigma2 <= 0.0:
            break
        aic = L * math.log(sigma2) + 2.0 * k
        if aic < best_aic:
            best_aic = aic
            best = (sigma2, phi.copy(), k)
    sigma2, phi, order = best
    denom = (1.0 - phi.sum()) ** 2
    if denom <= 0.0:
        return float("inf"), order
    return sigma2 / denom, order


def effective_sample_size(chain):
    """AR-spectral ESS of a scalar chain, clamped to [1, L].

    A constant chain is degenerate and reports ESS = L; callers that need
    the flag should check np.var(chain) == 0 (EssReport does).
    """
    x = np.asarray(chain, dtype=float)
    L = len(x)
    if L < 10:
        raise ValueError("need a chain of length >= 10")
    var = float(np.dot(x - x.mean(), x - x.mean()) / L)
    if var == 0.0:
        return float(L)
    spec0, _ = ar_spectrum0(x)
    if spec0 <= 0.0 or not np.isfinite(spec0):
        return 1.0 if spec0 > 0 else float(L)
    return float(min(max(L * var / spec0, 1.0), L))


def batch_means_ess(chain, n_batches=30):
    """Batch-means cross-check of the spectral ESS (not the reported number)."""
    x = np.asarray(chain, dtype=float)
    L = len(x)
    b = L // n_batches
    if b < 2:
        raise ValueError("chain too short for the requested batch count")
    trimmed = x[L - b * n_batches :]
    means = trimmed.reshape(n_batches, b).mean(axis=1)
    var_b = means.var(ddof=1)
    var = trimmed.var()
    if var_b == 0.0:
        return float(L)
    return float(min(max(L * var / (b * var_b), 1.0), L))


def ess_report(theta_chains, x_chains=None, seconds=0.0, acceptance_rates=None):
    """EssReport over theta columns and (optionally) flattened x^o chains."""
    theta_chains = np.atleast_2d(np.asarray(theta_chains, dtype=float))
    if theta_chains.shape[0] == 1 and theta_chains.shape[1] > 1:
        theta_chains = theta_chains.T
    degenerate = []
    ess_t = np.empty(theta_chains.shape[1])
    for j in range(theta_chains.shape[1]):
        ess_t[j] = effective_sample_size(theta_chains[:, j])
        if np.var(theta_chains[:, j]) == 0.0:
            degenerate.append(f"theta[{j}]")
    ess_x = np.empty(0)
    if x_chains is not None and x_chains.size:
        flat = x_chains.reshape(x_chains.shape[0], -1)
        ess_x = np.empty(flat.shape[1])
        for j in range(flat.shape[1]):
            ess_x[j] = effective_sample_size(flat[:, j])
            if np.var(flat[:, j]) == 0.0:
                degenerate.append(f"x[{j}]")
    pool = np.concatenate([ess_t, ess_x]) if ess_x.size else ess_t
    return EssReport(ess_t, ess_x, float(pool.min()), seconds, acceptance_rates or {}, degenerate)


def rwm_variance(posterior_cov_estimate, p):
    """Random-walk innovation covariance (2.56^2 / p) * cov estimate."""
    cov = np.atleast_2d(np.asarray(posterior_cov_estimate, dtype=float))
    return (RWM_SCALE / p) * cov


def _smallest_passing_n(passes, max_n):
    """Doubling search then bisection for the smallest N with passes(N)."""
    n, prev = 1, 0
    while True:
        if passes(n):
            break
        if n >= max_n:
            raise TuningFailure(f"no N <= {max_n} met the tuning target")
        prev, n = n, min(2 * n, max_n)
    lo, hi = prev, n
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if passes(mid):
            hi = mid
        else:
            lo = mid
    return hi


def tune_N_pmmh(model, obs, data, theta_center, grid, max_N, rng, initial, n_reps=50):
    """Smallest N with sd(log-likelihood estimate) <= 1.5 at theta_center."""
    data = np.atleast_2d(np.asarray(data, dtype=float))

    def passes(n):
        child = np.random.default_rng(rng.integers(2**63))
        lls = np.empty(n_reps)
        for r in range(n_reps):
            u = AuxiliaryVariates.draw(grid, n, model.d, child)
            lls[r] = run_filter(model, obs, data, theta_center, grid, u, initial, sort_enabled=False)
        if not np.all(np.isfinite(lls)):
            return False
        return lls.std(ddof=1) <= SD_TARGET_UNCORRELATED

    return _smallest_passing_n(passes, max_N)


def tune_N_cpmmh(model, obs, data, theta_center, rho, grid, max_N, rng, initial, n_reps=50):
    """Smallest N with Var(log p_hat' - log p_hat) <= 1 under CN coupling."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    kernel = CnKernel(rho)

    def passes(n):
        child = np.random.default_rng(rng.integers(2**63))
        deltas = np.empty(n_reps)
        for r in range(n_reps):
            u = AuxiliaryVariates.draw(grid, n, model.d, child)
            fresh = AuxiliaryVariates.draw(grid, n, model.d, child)
            u2 = u.crank_nicolson(kernel.rho, fresh)
            a = run_filter(model, obs, data, theta_center, grid, u, initial, sort_enabled=True)
            b = run_filter(model, obs, data, theta_center, grid, u2, initial, sort_enabled=True)
            deltas[r] = b - a
        if not np.all(np.isfinite(deltas)):
            return False
        return deltas.var(ddof=1) <= VAR_TARGET_CORRELATED

    return _smallest_passing_n(passes, max_N)


def tune_N_acpmmh(model, obs, data, theta_center, x_o, rho, grid, max_N, rng, initial, n_reps=50):
    """CPMMH variance rule applied to the augmented joint estimator at fixed
    (theta, x^o): smallest N with Var(delta log estimate) <= 1."""
    kernel = CnKernel(rho)
    x_o = np.atleast_2d(np.asarray(x_o, dtype=float))

    def passes(n):
        child = np.random.default_rng(rng.integers(2**63))
        deltas = np.empty(n_reps)
        for r in range(n_reps):
            u = child.standard_normal((grid.n, n, grid.m, model.d))
            u2 = kernel.combine(u, child.standard_normal(u.shape))
            a = importance.estimate_joint(model, initial, x_o, theta_center, u, grid).sum()
            b = importance.estimate_joint(model, initial, x_o, theta_center, u2, grid).sum()
            deltas[r] = b - a
        if not np.all(np.isfinite(deltas)):
            return False
        return deltas.var(ddof=1) <= VAR_TARGET_CORRELATED

    return _smallest_passing_n(passes, max_N)
