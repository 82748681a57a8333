"""Initialisation and proposal tuning for the augmented sampler.

Option 1 runs a cheap MH pilot under the linear noise approximation and
takes posterior moment estimates from it; option 2 runs a short augmented
pilot initialised at the data (all components observed) or at recursively
drawn bridge paths (partial observation).  Either way the result carries
initial values for (theta, x^o) and random-walk covariances from the
(2.56^2 / p) rule.

Pilots run in segments; between segments the diagonal proposal scales move
toward a target acceptance rate and are then frozen, so the main run uses
fixed proposals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics, lna
from .bridge import BridgeKind, propagate
from .errors import ConfigError
from .samplers import CnKernel, PerTimeRwm, RwmProposal, acpmmh_run, init_chain_state
from .sde import ParamVector

THETA_ACCEPT_TARGET = 0.25
X_ACCEPT_TARGET = 0.25
N_PILOT_DEFAULT = 1
SEGMENTS = 8
DOMAIN_EPS = 1e-3


@dataclass
class TuningResult:
    """Initial values and proposal covariances for a main monitoring run."""

    theta_init: ParamVector
    x_o_init: np.ndarray
    omega_theta: np.ndarray
    omega_x: np.ndarray  # (n, d, d)
    n_selected: int
    pilot_iters: int
    acceptance: dict = field(default_factory=dict)

    def theta_proposal(self):
        return RwmProposal(self.omega_theta)

    def x_proposal(self):
        return PerTimeRwm(self.omega_x)

    def to_config_dict(self):
        return {
            "theta_init": self.theta_init.natural.tolist(),
            "x_o_init": self.x_o_init.tolist(),
            "omega_theta": self.omega_theta.tolist(),
            "omega_x": self.omega_x.tolist(),
            "N": self.n_selected,
            "pilot_iters": self.pilot_iters,
            "acceptance": self.acceptance,
        }


def _moments_to_result(w_samples, x_samples, log_mask, n_selected, pilot_iters, acceptance, model):
    """Posterior moment estimates -> initial values and RWM covariances."""
    p = w_samples.shape[1]
    w_mean = w_samples.mean(axis=0)
    w_cov = np.cov(w_samples, rowvar=False).reshape(p, p)
    # Guard against a degenerate pilot segment collapsing a variance to 0.
    floor = 1e-8 * (1.0 + np.abs(w_mean))
    w_cov[np.diag_indices(p)] = np.maximum(np.diag(w_cov), floor)
    theta_init = ParamVector.from_working(w_mean, log_mask)
    n, d = x_samples.shape[1], x_samples.shape[2]
    x_mean = x_samples.mean(axis=0)
    omega_x = np.empty((n, d, d))
    for t in range(n):
        cov_t = np.cov(x_samples[:, t, :], rowvar=False).reshape(d, d)
        cov_t[np.diag_indices(d)] = np.maximum(np.diag(cov_t), 1e-8)
        omega_x[t] = diagnostics.rwm_variance(cov_t, d)
    x_init = np.clip(
        x_mean,
        model.state_lower + DOMAIN_EPS * np.isfinite(model.state_lower),
        model.state_upper - DOMAIN_EPS * np.isfinite(model.state_upper),
    )
    return TuningResult(
        theta_init=theta_init,
        x_o_init=x_init,
        omega_theta=diagnostics.rwm_variance(w_cov, p),
        omega_x=omega_x,
        n_selected=n_selected,
        pilot_iters=pilot_iters,
        acceptance=acceptance,
    )


def _scale_update(scale, rate, target):
    """Move a proposal scale toward the target acceptance rate (bounded)."""
    return float(np.clip(scale * math.exp(rate - target), 1e-4, 1e4))


def tune_option1(model, obs, data, grid, log_prior, theta0, pilot_iters, rng, prior_x1=None, lna_steps=20, thin=10):
    """LNA-pilot initialisation.

    Runs a segmented random-walk MH under the LNA marginal likelihood,
    adapting a diagonal theta proposal toward the target acceptance rate,
    then converts second-half moments into a TuningResult.
    """
    if pilot_iters < SEGMENTS * 2:
        raise ConfigError("pilot_iters too small (need at least 2 per segment)")
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if prior_x1 is None:
        raise ConfigError("tune_option1 needs the time-1 Gaussian prior (a, C)")
    p = theta0.p
    scale = 0.1
    w_all, x_all = [], []
    theta = theta0
    accepted = attempts = 0
    seg_len = pilot_iters // SEGMENTS
    for seg in range(SEGMENTS):
        proposal = RwmProposal(scale * np.eye(p))
        out = lna.lna_mh_run(
            model, obs, data, log_prior, proposal, theta, seg_len, rng, prior_x1, thin=thin, steps=lna_steps
        )
        theta = ParamVector.from_working(out.thetas_working[-1], theta0.log_mask)
        rate = out.acceptance_rate()
        scale = _scale_update(scale, rate, THETA_ACCEPT_TARGET)
        accepted += out.accepted
        attempts += seg_len
        if seg >= SEGMENTS // 2:
            w_all.append(out.thetas_working)
            x_all.append(out.x_samples)
    w_samples = np.concatenate(w_all)
    x_samples = np.concatenate(x_all)
    if not len(x_samples):
        raise ConfigError("pilot produced no latent samples; lower thin or raise pilot_iters")
    return _moments_to_result(
        w_samples,
        x_samples,
        theta0.log_mask,
        N_PILOT_DEFAULT,
        pilot_iters,
        {"theta": accepted / max(1, attempts)},
        model,
    )


def data_based_x_init(model, obs, data, grid, theta, initial, rng):
    """Latent initialisation at the data.

    All components observed: solve y = F^T x and clamp into the domain
    (boundary + epsilon).  Partial observation: recursively draw the
    noisy-endpoint bridge across intervals, keeping the values at the
    observation times.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n = data.shape[0]
    lo = model.state_lower + DOMAIN_EPS * np.isfinite(model.state_lower)
    hi = model.state_upper - DOMAIN_EPS * np.isfinite(model.state_upper)
    if obs.d_o == model.d:
        x = np.linalg.solve(obs.F.T, data.T).T
        return np.clip(x, lo, hi)
    kind = BridgeKind.noisy()
    x = np.empty((n, model.d))
    cur = np.clip(initial.transform(np.zeros(model.d)), lo, hi)
    for t in range(n):
        u = rng.standard_normal((grid.m, model.d))
        segment, _ = propagate(kind, model, cur, data[t], theta, float(t), grid, u, obs=obs)
        cur = np.clip(segment[-1], lo, hi)
        x[t] = cur
    return x


def tune_option2(
    model,
    obs,
    data,
    grid,
    log_prior,
    theta0,
    pilot_iters,
    rng,
    initial,
    n_pilot=N_PILOT_DEFAULT,
    rho=0.99,
    x_accept_target=X_ACCEPT_TARGET,
    pool=None,
):
    """Augmented-pilot initialisation from the data.

    A short augmented run starts at x^o = data (or bridge draws when some
    components are unobserved) with diagonal proposals auto-scaled toward
    the target acceptance rates, then second-half moments give the
    TuningResult.
    """
    if pilot_iters < SEGMENTS * 2:
        raise ConfigError("pilot_iters too small (need at least 2 per segment)")
    data = np.atleast_2d(np.asarray(data, dtype=float))
    p = theta0.p
    x_o0 = data_based_x_init(model, obs, data, grid, theta0, initial, rng)
    state = init_chain_state(
        model, obs, data, grid, log_prior, theta0, x_o0, n_pilot, rng, initial, pool=pool
    )
    kernel = CnKernel(rho)
    theta_scale = 0.1
    x_scale = float(np.mean(np.diag(np.atleast_2d(obs.Sigma)))) + 0.1
    w_all, x_all = [], []
    acc = {}
    seg_len = pilot_iters // SEGMENTS
    for seg in range(SEGMENTS):
        out = acpmmh_run(
            model,
            obs,
            data,
            grid,
            log_prior,
            RwmProposal(theta_scale * np.eye(p)),
            PerTimeRwm.constant(x_scale * np.eye(model.d), grid.n),
            kernel,
            n_pilot,
            seg_len,
            rng,
            initial,
            init_state=state,
            pool=pool,
            store_x=True,
        )
        state = out.final_state
        acc = out.acceptance_rates()
        theta_scale = _scale_update(theta_scale, acc["theta"], THETA_ACCEPT_TARGET)
        x_scale = _scale_update(x_scale, acc["x_interior"], x_accept_target)
        if seg >= SEGMENTS // 2:
            w = out.thetas.copy()
            mask = np.asarray(theta0.log_mask, dtype=bool)
            w[:, mask] = np.log(w[:, mask])
            w_all.append(w)
            x_all.append(out.x_o)
    return _moments_to_result(
        np.concatenate(w_all),
        np.concatenate(x_all),
        theta0.log_mask,
        n_pilot,
        pilot_iters,
        acc,
        model,
    )
