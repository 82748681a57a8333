"""Kernel backend selection.

Two interchangeable implementations of the hot kernels exist:

* ``reference`` — pure numpy, always available;
* ``compiled``  — Cython extension (``_core``) with C-level dispatch for the
  models that declare a ``kernel_id``; it transparently delegates other
  models to the reference implementation.

The compiled backend is picked automatically when the extension imported;
set ``SDEBAYES_BACKEND=reference`` or ``=compiled`` to force one.  ``use()``
switches at runtime (tests, benchmarks).

Kernel contract (shared by both backends):

    exact_interval_logw(model, theta, x_starts, x_next, u, dtau) -> (N,) logw
    noisy_interval_propagate(model, obs, theta, x_starts, y_next, u, dtau)
        -> (x_end (N, d), logw (N,))
    lna_integrate(model, theta, eta0, V0, steps, span=1.0)
        -> (eta, V, P, clamp_count)
    greedy_sort(states) -> int64 permutation

Inside the weight kernels every numerical failure (non-finite model output,
singular covariance after the jitter ladder, domain exit) yields a -inf
log-weight for the affected sample rather than an exception, and the
results are deterministic functions of their arguments.
"""

from __future__ import annotations

import os

from ..errors import ConfigError
from . import reference

try:
    from . import compiled
except ImportError:  # extension not built
    compiled = None

_BACKENDS = {"reference": reference}
if compiled is not None:
    _BACKENDS["compiled"] = compiled


def _initial_backend():
    forced = os.environ.get("SDEBAYES_BACKEND", "").strip().lower()
    if forced:
        if forced not in _BACKENDS:
            raise ConfigError(
                f"SDEBAYES_BACKEND={forced!r} unavailable; built backends: {sorted(_BACKENDS)}"
            )
        return _BACKENDS[forced]
    return _BACKENDS.get("compiled", reference)


_active = _initial_backend()


def available_backends():
    return sorted(_BACKENDS)


def active_name():
    return _active.IMPL


def use(name):
    """Select a backend by name; returns the previously active name."""
    global _active
    if name not in _BACKENDS:
        raise ConfigError(f"unknown backend {name!r}; built backends: {sorted(_BACKENDS)}")
    previous = _active.IMPL
    _active = _BACKENDS[name]
    return previous


def exact_interval_logw(model, theta, x_starts, x_next, u, dtau):
    return _active.exact_interval_logw(model, theta, x_starts, x_next, u, dtau)


def noisy_interval_propagate(model, obs, theta, x_starts, y_next, u, dtau):
    return _active.noisy_interval_propagate(model, obs, theta, x_starts, y_next, u, dtau)


def lna_integrate(model, theta, eta0, V0, steps, span=1.0):
    return _active.lna_integrate(model, theta, eta0, V0, steps, span)


def greedy_sort(states):
    return _active.greedy_sort(states)
