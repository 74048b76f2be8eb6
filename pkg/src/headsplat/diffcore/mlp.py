"""Small dense networks on top of the engine.

Layers are registered in a ParamStore under ``{prefix}.w{i}`` / ``{prefix}.b{i}``
with weights shaped (fan_in, fan_out), so a batch forward is ``x @ w + b``.
"""

from __future__ import annotations

import numpy as np

from . import engine


def init_mlp(store, prefix, sizes, rng, sigma=0.01, zero_final=False):
    """Register an MLP: ``sizes`` = (in, hidden..., out).

    Weights are N(0, sigma^2), biases zero. ``zero_final`` zeroes the last
    layer so the net starts as the zero function (used for offset heads that
    must not perturb the model at step 0).
    """
    for i in range(len(sizes) - 1):
        w = rng.normal(0.0, sigma, size=(sizes[i], sizes[i + 1]))
        if zero_final and i == len(sizes) - 2:
            w[...] = 0.0
        store.add(f"{prefix}.w{i}", w)
        store.add(f"{prefix}.b{i}", np.zeros(sizes[i + 1]))


def n_layers(store, prefix) -> int:
    i = 0
    while f"{prefix}.w{i}" in store:
        i += 1
    if i == 0:
        raise KeyError(f"no MLP registered under prefix {prefix!r}")
    return i


def mlp_forward(store, prefix, x, final_activation=None):
    """Run ``x`` (Var or array, shape (N, in)) through the named MLP.

    Hidden activations are silu; ``final_activation`` is an engine op or
    None for a linear head.
    """
    if not isinstance(x, engine.Var):
        x = engine.constant(x)
    depth = n_layers(store, prefix)
    h = x
    for i in range(depth):
        h = engine.matmul(h, store.leaf(f"{prefix}.w{i}")) + store.leaf(f"{prefix}.b{i}")
        if i < depth - 1:
            h = engine.silu(h)
    if final_activation is not None:
        h = final_activation(h)
    return h


def mlp_value(store, prefix, x):
    """Value-only ``mlp_forward`` (linear head): no graph, same arithmetic."""
    depth = n_layers(store, prefix)
    h = np.asarray(x)
    for i in range(depth):
        h = h @ store.value(f"{prefix}.w{i}") + store.value(f"{prefix}.b{i}")
        if i < depth - 1:
            h = h * engine._sigmoid(h)
    return h


def posenc(x, n_bands):
    """Sinusoidal input lift: [x, sin(2^k x), cos(2^k x)] for k < n_bands.

    Input (N, D) maps to (N, D * (1 + 2 * n_bands)).
    """
    if not isinstance(x, engine.Var):
        x = engine.constant(x)
    parts = [x]
    for k in range(n_bands):
        xk = x * float(2 ** k)
        parts.append(engine.sin(xk))
        parts.append(engine.cos(xk))
    return engine.concat(parts, axis=-1)


def posenc_dim(d, n_bands) -> int:
    return d * (1 + 2 * n_bands)
