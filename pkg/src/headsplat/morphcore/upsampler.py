"""Lightweight convolutional upsampler: F-channel feature map to 2x RGB."""

from __future__ import annotations

import numpy as np

from ..diffcore import engine


def init_upsampler(store, fdim, rng, sigma=0.05):
    store.add("ups.w0", rng.normal(0.0, sigma, size=(fdim, fdim, 3, 3)))
    store.add("ups.b0", np.zeros(fdim))
    store.add("ups.w1", rng.normal(0.0, sigma, size=(3, fdim, 3, 3)))
    store.add("ups.b1", np.zeros(3))


def bypass_weights(fdim):
    """Weights that make the upsampler copy channels 0..2 of its input.

    Used with activation="none": first conv = per-channel identity,
    second conv = channel selector.
    """
    w0 = np.zeros((fdim, fdim, 3, 3))
    for c in range(fdim):
        w0[c, c, 1, 1] = 1.0
    w1 = np.zeros((3, fdim, 3, 3))
    for c in range(3):
        w1[c, c, 1, 1] = 1.0
    return w0, np.zeros(fdim), w1, np.zeros(3)


def upsample(store, feat, activation="silu"):
    """(F, H, W) feature Var to (3, 2H, 2W) RGB Var.

    Nearest 2x upsample, 3x3 conv with a smooth activation, 3x3 conv to RGB.
    ``activation="none"`` makes the stack purely linear (bypass tests).
    """
    if not isinstance(feat, engine.Var):
        feat = engine.constant(feat)
    up = engine.upsample2x(feat)
    h = engine.conv2d(up, store.leaf("ups.w0"), store.leaf("ups.b0"),
                      stride=1, pad=1)
    if activation == "silu":
        h = engine.silu(h)
    elif activation != "none":
        raise ValueError(f"unknown activation {activation!r}")
    return engine.conv2d(h, store.leaf("ups.w1"), store.leaf("ups.b1"),
                         stride=1, pad=1)
