"""Linear noise approximation: Gaussian filtering, smoothing and MH.

The state is split as X_t = eta_t + R_t with a deterministic mean path and
a linearised residual, giving X_t | X_s Gaussian with moments driven by the
coupled ODE system

    deta/dt = alpha(eta, theta)
    dm/dt   = H m                      (skipped: m stays 0 when r0_hat = 0)
    dV/dt   = V H^T + beta(eta, theta) + H V
    dP/dt   = H P,   P(interval start) = I_d

where H is the drift Jacobian at eta.  The forward filter restarts the ODEs
from each posterior (a_t, C_t), accumulating the tractable marginal
likelihood; the backward sampler draws latent states at the observation
times conditionally on the stored filter quantities.  A random-walk MH on
this marginal likelihood gives cheap posterior moments for initialising and
tuning the exact samplers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _linalg, backends
from .errors import NonFiniteJacobian, SingularCovariance, StepFailure
from .sde import ParamVector, as_natural


@dataclass
class LnaState:
    """Mean path, residual mean, residual covariance, fundamental matrix."""

    eta: np.ndarray
    m_resid: np.ndarray
    V: np.ndarray
    P: np.ndarray
    t: float = 0.0


def lna_ode_rhs(model, state, theta):
    """Time derivatives (deta, dm, dV, dP) of the coupled system."""
    th = as_natural(theta)
    eta = np.asarray(state.eta, dtype=float)
    alpha = np.asarray(model.drift(eta, th), dtype=float)
    beta = np.atleast_2d(np.asarray(model.diffusion(model.clip_to_domain(eta), th), dtype=float))
    H = model.drift_jacobian(eta, th)
    if not np.all(np.isfinite(H)):
        raise NonFiniteJacobian(f"drift Jacobian non-finite at eta={eta}")
    dV = state.V @ H.T + beta + H @ state.V
    return alpha, H @ state.m_resid, 0.5 * (dV + dV.T), H @ state.P


def integrate_lna(model, theta, a, C, steps=20, span=1.0):
    """Fixed-step RK4 over one interval from eta=a, V=C, P=I.

    Returns (eta, V, P) at the interval end; raises StepFailure on
    non-finite intermediates.  The residual-mean ODE is skipped since the
    filter always restarts with zero residual mean.
    """
    eta, V, P, _ = backends.lna_integrate(
        model, as_natural(theta), np.asarray(a, dtype=float), np.atleast_2d(np.asarray(C, float)), steps, span
    )
    return eta, V, P


@dataclass
class FilterRecord:
    """Stored filter quantities, one row per observation time 1..n.

    eta/V/P rows hold the predictive quantities *for* that time, so row 0
    (time 1, seeded directly by the Gaussian prior) is unused by the
    backward pass.
    """

    a: np.ndarray
    C: np.ndarray
    eta: np.ndarray
    V: np.ndarray
    P: np.ndarray
    loglik_increments: np.ndarray
    clamp_count: int = 0

    @property
    def n(self):
        return self.a.shape[0]


def default_time1_prior(x0, scale=1e-6):
    """(a, C) for a point-mass initial condition: mean x0, tiny diagonal."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    return x0, scale * np.eye(len(x0))


def propagated_time1_prior(model, theta, x0, steps=20):
    """(a, C) obtained by integrating the mean/covariance ODEs over [0, 1]
    from (x0, 0) — the model-implied law of X_1 for a known X_0."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    eta, V, _ = integrate_lna(model, theta, x0, np.zeros((len(x0), len(x0))), steps)
    return eta, V


def _gaussian_update(mean, cov, F, Sigma, y):
    """Conditioning of N(mean, cov) on y = F^T x + N(0, Sigma).

    Returns (posterior mean, posterior cov, forecast log-density).
    """
    S = F.T @ cov @ F + Sigma
    resid = y - F.T @ mean
    lam, q = _linalg.sym_eig(S)
    try:
        lam = _linalg.jittered_eigs(lam)
    except SingularCovariance as exc:
        raise SingularCovariance(f"singular forecast covariance: {exc}") from exc
    z = q.T @ resid
    ll = -0.5 * (len(z) * _linalg.LOG_2PI + np.log(lam).sum() + float(np.sum(z * z / lam)))
    gain = cov @ F @ (q * (1.0 / lam)) @ q.T
    mean_post = mean + gain @ resid
    cov_post = cov - gain @ F.T @ cov
    return mean_post, 0.5 * (cov_post + cov_post.T), ll


def lna_forward_filter(model, obs, data, theta, prior, steps=20):
    """Forward filter: (log marginal likelihood, FilterRecord).

    prior is the (a, C) Gaussian law of X_1; each subsequent time gets its
    predictive law by restarting the ODEs from the previous posterior.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n = data.shape[0]
    d = model.d
    th = as_natural(theta)
    a_prior, C_prior = prior
    a_prior = np.atleast_1d(np.asarray(a_prior, dtype=float))
    C_prior = np.atleast_2d(np.asarray(C_prior, dtype=float))
    rec = FilterRecord(
        a=np.empty((n, d)),
        C=np.empty((n, d, d)),
        eta=np.full((n, d), np.nan),
        V=np.full((n, d, d), np.nan),
        P=np.full((n, d, d), np.nan),
        loglik_increments=np.empty(n),
    )
    a, C, ll0 = _gaussian_update(a_prior, C_prior, obs.F, obs.Sigma, data[0])
    rec.a[0], rec.C[0], rec.loglik_increments[0] = a, C, ll0
    clamps = 0
    for t in range(1, n):
        eta, V, P, c = backends.lna_integrate(model, th, a, C, steps, 1.0)
        clamps += c
        a, C, ll = _gaussian_update(eta, V, obs.F, obs.Sigma, data[t])
        rec.eta[t], rec.V[t], rec.P[t] = eta, V, P
        rec.a[t], rec.C[t], rec.loglik_increments[t] = a, C, ll
    rec.clamp_count = clamps
    return float(rec.loglik_increments.sum()), rec


def lna_backward_sampler(record, rng):
    """One draw of the latent states at times 1..n given the filter record.

    x_n ~ N(a_n, C_n); backwards, x_t | x_{t+1} ~ N(a_hat_t, C_hat_t) with

        a_hat_t = a_t + C_t P_{t+1}^T V_{t+1}^{-1} (x_{t+1} - eta_{t+1})
        C_hat_t = C_t - C_t P_{t+1}^T V_{t+1}^{-1} P_{t+1} C_t.
    """
    n, d = record.a.shape
    x = np.empty((n, d))
    x[n - 1] = record.a[n - 1] + _linalg.psd_sqrt(record.C[n - 1]) @ rng.standard_normal(d)
    for t in range(n - 2, -1, -1):
        PC = record.P[t + 1] @ record.C[t]
        try:
            W = _linalg.solve_psd(record.V[t + 1], PC)  # V^{-1} P C
        except SingularCovariance as exc:
            raise SingularCovariance(f"singular predictive covariance V: {exc}") from exc
        a_hat = record.a[t] + W.T @ (x[t + 1] - record.eta[t + 1])
        C_hat = record.C[t] - PC.T @ W
        x[t] = a_hat + _linalg.psd_sqrt(0.5 * (C_hat + C_hat.T)) @ rng.standard_normal(d)
    return x


def smoothing_moments(record, x_next, t):
    """(a_hat_t, C_hat_t) conditional on x_{t+1}; exposed for testing."""
    PC = record.P[t + 1] @ record.C[t]
    W = _linalg.solve_psd(record.V[t + 1], PC)
    a_hat = record.a[t] + W.T @ (np.asarray(x_next, dtype=float) - record.eta[t + 1])
    C_hat = record.C[t] - PC.T @ W
    return a_hat, 0.5 * (C_hat + C_hat.T)


@dataclass
class LnaMhOutput:
    """MH draws under the LNA marginal likelihood plus per-draw latent
    samples; thetas are stored on the working scale."""

    thetas_working: np.ndarray
    logliks: np.ndarray
    x_samples: np.ndarray
    accepted: int
    n_iters: int
    log_mask: np.ndarray

    @property
    def thetas_natural(self):
        w = self.thetas_working
        return np.where(self.log_mask, np.exp(w), w)

    def acceptance_rate(self):
        return self.accepted / max(1, self.n_iters)


def lna_mh_run(model, obs, data, log_prior, proposal, theta0, n_iters, rng, prior_x1, thin=10, steps=20):
    """Random-walk MH on the LNA marginal posterior.

    For every `thin`-th theta draw one latent sample x^o is drawn with the
    backward sampler; the output carries everything needed to compute
    posterior moment estimates for initialisation and proposal tuning.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    w = theta0.working
    lp = log_prior(w)
    if not np.isfinite(lp):
        raise StepFailure("initial theta outside the prior support")
    theta = theta0
    ll, rec = lna_forward_filter(model, obs, data, theta, prior_x1, steps)
    p = theta.p
    thetas = np.empty((n_iters, p))
    logliks = np.empty(n_iters)
    x_samples = []
    accepted = 0
    for i in range(n_iters):
        z = rng.standard_normal(p)
        log_u = math.log(rng.random())
        w_new = proposal.propose(theta.working, z)
        lp_new = log_prior(w_new)
        if np.isfinite(lp_new):
            theta_new = ParamVector.from_working(w_new, theta.log_mask)
            try:
                ll_new, rec_new = lna_forward_filter(model, obs, data, theta_new, prior_x1, steps)
            except (SingularCovariance, StepFailure):
                ll_new = -np.inf
                rec_new = None
            log_ratio = (lp_new + ll_new) - (lp + ll)
            if np.isfinite(log_ratio) and (log_ratio >= 0.0 or log_u < log_ratio):
                theta, lp, ll, rec = theta_new, lp_new, ll_new, rec_new
                accepted += 1
        thetas[i] = theta.working
        logliks[i] = ll
        if (i + 1) % thin == 0:
            x_samples.append(lna_backward_sampler(rec, rng))
    x_samples = np.stack(x_samples) if x_samples else np.empty((0, data.shape[0], model.d))
    return LnaMhOutput(thetas, logliks, x_samples, accepted, n_iters, theta0.log_mask)
