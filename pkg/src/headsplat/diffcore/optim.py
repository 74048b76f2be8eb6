"""Adam with per-name learning-rate overrides."""

from __future__ import annotations

import numpy as np


class AdamState:
    """Moment buffers keyed by parameter name, lazily created."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}


def adam_step(state, store, lr, lr_overrides=None, only=None):
    """One bias-corrected Adam update over ``store``.

    ``lr_overrides`` maps name prefixes to learning rates; the longest
    matching prefix wins. ``only`` (if given) restricts the update to names
    matching one of its prefixes, leaving everything else frozen. Gradients
    are left untouched; the caller zeroes them. NaN or inf in a gradient is
    an error naming the parameter.
    """
    prefixes = sorted(lr_overrides or {}, key=len, reverse=True)
    for name in store.names():
        if only is not None and not any(name.startswith(p) for p in only):
            continue
        g = store.grad(name)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
        rate = lr
        for p in prefixes:
            if name.startswith(p):
                rate = lr_overrides[p]
                break
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
            state.t[name] = 0
        state.t[name] += 1
        t = state.t[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        store._values[name] -= rate * m_hat / (np.sqrt(v_hat) + state.eps)
    store.version += 1
