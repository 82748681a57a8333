"""Modified diffusion bridge constructs.

Both variants propose one interval's path through Gaussian steps

    x_{k+1} = x_k + mu_k * dtau + sqrt(Psi_k * dtau) u_k,   u_k ~ N(0, I_d).

Noisy endpoint (particle filter): conditions on the next observation
y_{t+1} through (F, Sigma), with Delta_k = t+1 - tau_k,

    mu_k  = alpha_k + beta_k F (F^T beta_k F Delta_k + Sigma)^{-1}
            {y_{t+1} - F^T (x_k + alpha_k Delta_k)}
    Psi_k = beta_k - beta_k F (F^T beta_k F Delta_k + Sigma)^{-1} F^T beta_k dtau

and the endpoint x_{t+1} is generated (m innovation rows).

Exact endpoint (importance sampler): conditions on a known x_{t+1}; the
Sigma = 0 reduction gives

    mu_k  = (x_{t+1} - x_k) / Delta_k
    Psi_k = ((t+1 - tau_{k+1}) / Delta_k) * beta_k

and only the m-1 interior points are generated.

Square roots of Psi use the spectral decomposition so the rank-deficient
final-substep case (Sigma -> 0) needs no pivoting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _linalg
from .errors import SingularCovariance, SingularInnovation
from .sde import as_natural


@dataclass(frozen=True)
class BridgeKind:
    """Tagged bridge variant; use the noisy()/exact() constructors."""

    exact_endpoint: bool

    @classmethod
    def noisy(cls):
        return cls(exact_endpoint=False)

    @classmethod
    def exact(cls):
        return cls(exact_endpoint=True)

    def innovation_rows(self, m):
        """Innovation rows consumed per interval: m noisy, m-1 exact."""
        return m - 1 if self.exact_endpoint else m


def innovation_block(kind, m, d, rng=None):
    """Standard-Gaussian innovations with the shape the construct consumes."""
    rows = kind.innovation_rows(m)
    if rng is None:
        return np.zeros((rows, d))
    return rng.standard_normal((rows, d))


def check_innovation_shape(kind, u, m, d):
    u = np.asarray(u, dtype=float)
    want = (kind.innovation_rows(m), d)
    if u.shape != want:
        raise ValueError(f"innovation block has shape {u.shape}, expected {want}")
    if not np.all(np.isfinite(u)):
        raise ValueError("innovation block contains non-finite entries")
    return u


def mdb_noisy_params(model, obs, x_k, y_next, theta, tau_k, t_next, delta_tau):
    """(mu, Psi) of the noisy-endpoint construct at grid time tau_k."""
    x_k = np.asarray(x_k, dtype=float)
    th = as_natural(theta)
    delta_k = t_next - tau_k
    if delta_k <= 0.0:
        raise ValueError("tau_k must precede the interval endpoint")
    alpha = np.asarray(model.drift(x_k, th), dtype=float)
    beta = np.atleast_2d(np.asarray(model.diffusion(x_k, th), dtype=float))
    bf = beta @ obs.F  # (d, d_o)
    inner = obs.F.T @ bf * delta_k + obs.Sigma
    resid = np.asarray(y_next, dtype=float) - obs.F.T @ (x_k + alpha * delta_k)
    try:
        sol = _linalg.solve_psd(inner, np.column_stack([resid, bf.T]))
    except SingularCovariance as exc:
        raise SingularInnovation(str(exc)) from exc
    mu = alpha + bf @ sol[:, 0]
    psi = beta - bf @ sol[:, 1:] * delta_tau
    return mu, 0.5 * (psi + psi.T)


def mdb_exact_params(model, x_k, x_next, theta, tau_k, t_next, delta_tau):
    """(mu, Psi) of the exact-endpoint construct at grid time tau_k."""
    x_k = np.asarray(x_k, dtype=float)
    th = as_natural(theta)
    delta_k = t_next - tau_k
    if delta_k <= 0.0:
        raise ValueError("tau_k must precede the interval endpoint")
    beta = np.atleast_2d(np.asarray(model.diffusion(x_k, th), dtype=float))
    mu = (np.asarray(x_next, dtype=float) - x_k) / delta_k
    psi = ((t_next - (tau_k + delta_tau)) / delta_k) * beta
    return mu, psi


def propagate(kind, model, x_start, target, theta, t_left, grid, u, obs=None):
    """Run one interval's bridge from its innovations.

    Returns (segment, log_g): the generated points as an array of
    innovation_rows(m) rows (interior points, plus the endpoint for the
    noisy construct) and the proposal log-density of the segment.
    Deterministic in (x_start, target, theta, u).
    """
    m, dtau = grid.m, grid.delta_tau
    u = check_innovation_shape(kind, u, m, model.d)
    if kind.exact_endpoint:
        target = np.asarray(target, dtype=float)
    elif obs is None:
        raise ValueError("the noisy-endpoint construct needs an observation model")
    t_next = t_left + 1.0
    x = np.asarray(x_start, dtype=float)
    segment = np.empty((u.shape[0], model.d))
    log_g = 0.0
    for k in range(u.shape[0]):
        tau_k = t_left + k * dtau
        if kind.exact_endpoint:
            mu, psi = mdb_exact_params(model, x, target, theta, tau_k, t_next, dtau)
        else:
            mu, psi = mdb_noisy_params(model, obs, x, target, theta, tau_k, t_next, dtau)
        mean = x + mu * dtau
        lam, q = _linalg.sym_eig(psi * dtau)
        lam = _linalg.jittered_eigs(lam)
        x = mean + (q * np.sqrt(lam)) @ (q.T @ u[k])
        # log N(x; mean, q lam q^T) with x = mean + q sqrt(lam) q^T u:
        # the quadratic form collapses to |u_k|^2.
        log_g -= 0.5 * (model.d * _linalg.LOG_2PI + np.log(lam).sum() + float(u[k] @ u[k]))
        segment[k] = x
    return segment, log_g
