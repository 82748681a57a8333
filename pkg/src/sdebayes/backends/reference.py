"""Pure-numpy reference implementation of the hot kernels.

Semantics shared with the compiled backend (see backends/__init__.py for the
kernel contracts):

* inside estimators, numerical trouble (non-finite drift, singular
  covariance after the jitter ladder, domain exit) maps to a -inf
  log-weight for that sample, never an exception;
* square roots are symmetric spectral roots, and each step's sampling
  factor and proposal density use the same jittered eigenvalues, so
  log g collapses to -0.5 (d log 2pi + log|cov| + |u|^2);
* beta is always evaluated at the current (in-domain) point.
"""

from __future__ import annotations

import numpy as np

from .. import _linalg
from ..errors import SingularCovariance, StepFailure

IMPL = "reference"


def _beta_eigs(model, x, th):
    """(alpha, beta, jittered lam, Q) at x, or None on failure.

    The raw beta feeds the bridge algebra; the jittered eigenvalues feed
    density evaluation and sampling factors.
    """
    alpha = np.asarray(model.drift(x, th), dtype=float)
    beta = np.atleast_2d(np.asarray(model.diffusion(x, th), dtype=float))
    if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta))):
        return None
    lam, q = _linalg.sym_eig(beta)
    try:
        lam = _linalg.jittered_eigs(lam)
    except SingularCovariance:
        return None
    return alpha, beta, lam, q


def exact_interval_logw(model, theta, x_starts, x_next, u, dtau):
    """Log importance weights p_e/g for exact-endpoint bridges.

    x_starts: (N, d) per-sample starting states; x_next: (d,) shared endpoint;
    u: (N, m-1, d) innovations. Returns (N,) log-weights.
    """
    x_starts = np.atleast_2d(np.asarray(x_starts, dtype=float))
    x_next = np.asarray(x_next, dtype=float)
    u = np.asarray(u, dtype=float)
    n_samples, d = x_starts.shape
    m = u.shape[1] + 1
    lo, hi = model.state_lower, model.state_upper
    logw = np.full(n_samples, -np.inf)
    for i in range(n_samples):
        x = x_starts[i]
        if np.any(x < lo) or np.any(x > hi):
            continue
        lw = 0.0
        ok = True
        for k in range(m - 1):
            ev = _beta_eigs(model, x, theta)
            if ev is None:
                ok = False
                break
            alpha, _, lam, q = ev
            frac = (m - k - 1.0) / (m - k)  # Psi = frac * beta
            delta_k = (m - k) * dtau
            mean_g = x + (x_next - x) * (dtau / delta_k)
            w = q.T @ u[i, k]
            x_new = mean_g + q @ (np.sqrt(frac * lam * dtau) * w)
            lw -= 0.5 * (d * _linalg.LOG_2PI + np.sum(np.log(frac * lam * dtau)) + u[i, k] @ u[i, k])
            z = q.T @ (x_new - x - alpha * dtau)
            lw -= 0.5 * (d * _linalg.LOG_2PI + np.sum(np.log(lam * dtau)) + np.sum(z * z / (lam * dtau)))
            x = x_new
            if np.any(x < lo) or np.any(x > hi):
                ok = False
                break
        if not ok:
            continue
        ev = _beta_eigs(model, x, theta)
        if ev is None:
            continue
        alpha, _, lam, q = ev
        z = q.T @ (x_next - x - alpha * dtau)
        lw -= 0.5 * (d * _linalg.LOG_2PI + np.sum(np.log(lam * dtau)) + np.sum(z * z / (lam * dtau)))
        logw[i] = lw
    return logw


def noisy_interval_propagate(model, obs, theta, x_starts, y_next, u, dtau):
    """Propagate noisy-endpoint bridges for one interval.

    x_starts: (N, d); y_next: (d_o,); u: (N, m, d).  Returns (x_end (N, d),
    logw (N,)) where logw = log p_e - log g (the observation density is added
    by the caller).
    """
    x_starts = np.atleast_2d(np.asarray(x_starts, dtype=float))
    y_next = np.asarray(y_next, dtype=float)
    u = np.asarray(u, dtype=float)
    n_particles, d = x_starts.shape
    m = u.shape[1]
    lo, hi = model.state_lower, model.state_upper
    F, Sigma = obs.F, obs.Sigma
    x_end = np.array(x_starts, copy=True)
    logw = np.full(n_particles, -np.inf)
    for i in range(n_particles):
        x = x_starts[i]
        if np.any(x < lo) or np.any(x > hi):
            continue
        lw = 0.0
        ok = True
        for k in range(m):
            ev = _beta_eigs(model, x, theta)
            if ev is None:
                ok = False
                break
            alpha, beta, lam, q = ev
            delta_k = (m - k) * dtau
            g_mat = beta @ F
            inner = F.T @ g_mat * delta_k + Sigma
            resid = y_next - F.T @ (x + alpha * delta_k)
            try:
                sol = _linalg.solve_psd(inner, np.column_stack([resid, g_mat.T]))
            except SingularCovariance:
                ok = False
                break
            mu = alpha + g_mat @ sol[:, 0]
            psi = beta - g_mat @ sol[:, 1:] * dtau
            lam_p, q_p = _linalg.sym_eig(psi)
            try:
                lam_p = _linalg.jittered_eigs(lam_p)
            except SingularCovariance:
                ok = False
                break
            mean_g = x + mu * dtau
            x_new = mean_g + q_p @ (np.sqrt(lam_p * dtau) * (q_p.T @ u[i, k]))
            lw -= 0.5 * (d * _linalg.LOG_2PI + np.sum(np.log(lam_p * dtau)) + u[i, k] @ u[i, k])
            z = q.T @ (x_new - x - alpha * dtau)
            lw -= 0.5 * (d * _linalg.LOG_2PI + np.sum(np.log(lam * dtau)) + np.sum(z * z / (lam * dtau)))
            x = x_new
            if np.any(x < lo) or np.any(x > hi):
                ok = False
                break
        if ok:
            x_end[i] = x
            logw[i] = lw
    return x_end, logw


def lna_integrate(model, theta, eta0, V0, steps, span=1.0):
    """Fixed-step RK4 for the coupled mean/covariance/fundamental-matrix ODEs

        deta/dt = alpha(eta),  dV/dt = V H^T + beta(eta) + H V,  dP/dt = H P

    over `span` time units.  beta is evaluated with eta clamped to the state
    domain; returns (eta, V, P, clamp_count).
    """
    d = model.d
    h = span / steps
    eta = np.asarray(eta0, dtype=float).copy()
    V = np.atleast_2d(np.asarray(V0, dtype=float)).copy()
    P = np.eye(d)
    lo, hi = model.state_lower, model.state_upper
    clamps = 0

    def rhs(eta_s, V_s, P_s):
        nonlocal clamps
        eta_b = np.clip(eta_s, lo, hi)
        if not np.array_equal(eta_b, eta_s):
            clamps += 1
        alpha = np.asarray(model.drift(eta_s, theta), dtype=float)
        beta = np.atleast_2d(np.asarray(model.diffusion(eta_b, theta), dtype=float))
        H = model.drift_jacobian(eta_s, theta)
        dV = V_s @ H.T + beta + H @ V_s
        return alpha, 0.5 * (dV + dV.T), H @ P_s

    for _ in range(steps):
        k1 = rhs(eta, V, P)
        k2 = rhs(eta + 0.5 * h * k1[0], V + 0.5 * h * k1[1], P + 0.5 * h * k1[2])
        k3 = rhs(eta + 0.5 * h * k2[0], V + 0.5 * h * k2[1], P + 0.5 * h * k2[2])
        k4 = rhs(eta + h * k3[0], V + h * k3[1], P + h * k3[2])
        eta = eta + (h / 6.0) * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        V = V + (h / 6.0) * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        P = P + (h / 6.0) * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        V = 0.5 * (V + V.T)
        if not (np.all(np.isfinite(eta)) and np.all(np.isfinite(V)) and np.all(np.isfinite(P))):
            raise StepFailure("non-finite LNA state during integration")
    return eta, V, P, clamps


def greedy_sort(states):
    """Greedy nearest-neighbour ordering of particle states.

    The first particle minimises the first state component; each subsequent
    one is the unsorted particle closest (full-state Euclidean distance) to
    the previously chosen.  Ties break on the original index (strict <).
    Returns the permutation as an int64 array.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    n = states.shape[0]
    perm = np.empty(n, dtype=np.int64)
    remaining = np.arange(n)
    pick = int(np.argmin(states[:, 0]))
    perm[0] = pick
    remaining = remaining[remaining != pick]
    for j in range(1, n):
        diffs = states[remaining] - states[perm[j - 1]]
        pick = int(np.argmin(np.einsum("ij,ij->i", diffs, diffs)))
        perm[j] = remaining[pick]
        remaining = np.delete(remaining, pick)
    return perm
