"""Shared dense linear algebra for small (d <= ~10) symmetric matrices.

All Gaussian densities go through the spectral decomposition so that
rank-deficient covariances (e.g. the noisy bridge variance at the final
substep as Sigma -> 0) are handled by one jitter policy everywhere:
additive jitter JITTER_REL * trace/d, escalated by factors of 10 up to
3 orders of magnitude, then SingularCovariance.

The compiled backend mirrors these constants; test_backends pins the two
implementations against each other on near-singular cases.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import SingularCovariance

LOG_2PI = math.log(2.0 * math.pi)

# Additive jitter relative to mean eigenvalue, and the escalation ladder.
JITTER_REL = 1e-10
JITTER_LADDER = (1.0, 10.0, 100.0, 1000.0)
# Eigenvalue floor (relative to the largest) below which a matrix is treated
# as numerically singular for density evaluation.
EIG_FLOOR_REL = 1e-12


def sym_eig(a):
    """Eigendecomposition of a symmetric matrix, symmetrising first."""
    a = np.asarray(a, dtype=float)
    if a.shape == (1, 1):
        return a[0, :1].copy(), np.ones((1, 1))
    return np.linalg.eigh(0.5 * (a + a.T))


def jittered_eigs(lam):
    """Eigenvalues shifted by the jitter ladder until numerically SPD.

    Raises SingularCovariance when the ladder is exhausted (e.g. trace <= 0).
    """
    lam = np.asarray(lam, dtype=float)
    lam_max = float(lam.max(initial=0.0))
    if lam.min() > EIG_FLOOR_REL * lam_max and lam_max > 0.0:
        return lam
    base = JITTER_REL * float(lam.sum()) / len(lam)
    if base > 0.0:
        for mult in JITTER_LADDER:
            j = base * mult
            if lam.min() + j > EIG_FLOOR_REL * (lam_max + j):
                return lam + j
    raise SingularCovariance("covariance not positive definite after jitter ladder")


def psd_sqrt(a):
    """Symmetric PSD square root via the spectral decomposition.

    Negative eigenvalues (roundoff) are clamped to zero, so rank-deficient
    inputs are valid; use this for sampling factors, not densities.
    """
    lam, q = sym_eig(a)
    return (q * np.sqrt(np.clip(lam, 0.0, None))) @ q.T


def mvn_logpdf(x, mean, cov):
    """log N(x; mean, cov) with the shared jitter policy."""
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    lam, q = sym_eig(cov)
    lam = jittered_eigs(lam)
    z = q.T @ (x - mean)
    return -0.5 * (len(lam) * LOG_2PI + np.log(lam).sum() + float(np.sum(z * z / lam)))


def mvn_logpdf_diag(x, mean, var):
    """log N(x; mean, diag(var)) for scalar/diagonal covariances."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    var = np.atleast_1d(np.asarray(var, dtype=float))
    if np.any(var <= 0.0):
        raise SingularCovariance("nonpositive variance")
    z = x - mean
    return -0.5 * float(np.sum(LOG_2PI + np.log(var) + z * z / var))


def solve_psd(a, b):
    """Solve a @ x = b for symmetric PSD a via the jittered spectrum."""
    lam, q = sym_eig(a)
    lam = jittered_eigs(lam)
    return q @ ((q.T @ b).T / lam).T


def norm_cdf(z):
    """Standard normal CDF (scalar)."""
    return 0.5 * (1.0 + math.erf(float(z) / math.sqrt(2.0)))


def logsumexp(logv):
    """Max-subtracted logsumexp; all -inf maps to -inf."""
    logv = np.asarray(logv, dtype=float)
    hi = np.max(logv)
    if not np.isfinite(hi):
        return float(hi) if hi < 0 else float("inf")
    return float(hi + np.log(np.sum(np.exp(logv - hi))))
