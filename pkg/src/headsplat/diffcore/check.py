"""Finite-difference verification of backward passes."""

from __future__ import annotations

import numpy as np

from . import engine


def finite_diff_check(loss_fn, store, h=1e-5, tolerance=1e-6, names=None,
                      max_coords=16, seed=0):
    """Compare analytic grads from ``loss_fn`` against central differences.

    ``loss_fn()`` must rebuild the graph from the store's current values and
    return a scalar Var. The closure is evaluated twice up front; any
    mismatch means it is not deterministic and the check refuses to run.

    Blocks larger than ``max_coords`` are probed at a random coordinate
    subset. Per block the reported figure is
    max|a - f| / max(max|a|, max|f|, 1e-12) over probed coordinates.

    Returns {name: {"rel_err": float, "ok": bool}} plus "__all_ok__".
    """
    l0 = float(loss_fn().value)
    l1 = float(loss_fn().value)
    if l0 != l1:
        raise RuntimeError(
            f"loss closure is not deterministic: {l0!r} != {l1!r}")

    if names is None:
        names = store.names()
    store.zero_grads()
    engine.backward(loss_fn())
    analytic = {n: store.grad(n).copy() for n in names}
    store.zero_grads()

    rng = np.random.default_rng(seed)
    report = {}
    all_ok = True
    for name in names:
        val = store._values[name]
        flat = val.reshape(-1)
        n = flat.size
        coords = (np.arange(n) if n <= max_coords
                  else np.sort(rng.choice(n, size=max_coords, replace=False)))
        a = analytic[name].reshape(-1)[coords]
        f = np.empty_like(a)
        for k, c in enumerate(coords):
            keep = flat[c]
            flat[c] = keep + h
            store.version += 1
            lp = float(loss_fn().value)
            flat[c] = keep - h
            store.version += 1
            lm = float(loss_fn().value)
            flat[c] = keep
            store.version += 1
            f[k] = (lp - lm) / (2.0 * h)
        denom = max(np.abs(a).max(initial=0.0), np.abs(f).max(initial=0.0), 1e-12)
        rel = float(np.abs(a - f).max(initial=0.0) / denom)
        ok = rel < tolerance
        all_ok = all_ok and ok
        report[name] = {"rel_err": rel, "ok": ok}
    report["__all_ok__"] = all_ok
    return report
