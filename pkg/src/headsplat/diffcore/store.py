"""Named parameter groups with gradient accumulators and checkpoint IO.

Checkpoints are a JSON manifest next to a flat little-endian float32 blob.
Values live in float64 in memory; saving quantizes to float32. Loading a
checkpoint and saving it again reproduces the blob bit for bit.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import engine


class ParamStore:
    """Flat dict of named float64 arrays plus matching grad buffers.

    ``version`` counts in-place updates. Tapes capture the version at leaf
    creation; a backward pass over a tape older than the latest update is
    refused, since its saved activations no longer match the parameters.
    """

    def __init__(self):
        self._values: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}
        self.meta: dict[str, object] = {}
        self.version = 0

    # -- registration / access ------------------------------------------

    def add(self, name: str, value) -> np.ndarray:
        if name in self._values:
            raise ValueError(f"duplicate parameter name: {name}")
        v = np.array(value, dtype=np.float64)
        self._values[name] = v
        self._grads[name] = np.zeros_like(v)
        return v

    def __contains__(self, name):
        return name in self._values

    def names(self):
        return sorted(self._values)

    def value(self, name: str) -> np.ndarray:
        return self._values[name]

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def set_value(self, name: str, value):
        v = np.asarray(value, dtype=np.float64)
        if v.shape != self._values[name].shape:
            raise ValueError(
                f"shape mismatch for {name}: {v.shape} vs {self._values[name].shape}")
        self._values[name][...] = v
        self.version += 1

    def leaf(self, name: str) -> engine.Var:
        """Differentiable handle; backward accumulates into this store."""
        return engine.Var(self._values[name],
                          param_ref=(self, name, self.version))

    def _accumulate(self, name, g, version):
        if version != self.version:
            raise RuntimeError(
                f"stale tape: parameter {name} was captured at version "
                f"{version} but the store is now at {self.version}")
        if g.shape != self._grads[name].shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        self._grads[name] += g

    def zero_grads(self):
        for g in self._grads.values():
            g[...] = 0.0

    def grad_norm(self) -> float:
        total = 0.0
        for g in self._grads.values():
            total += float((g * g).sum())
        return float(np.sqrt(total))

    def n_params(self) -> int:
        return int(sum(v.size for v in self._values.values()))

    # -- checkpoint IO ---------------------------------------------------

    def save(self, path: str):
        """Write ``path`` (JSON manifest) and ``path + '.bin'`` (f32 blob)."""
        names = self.names()
        entries = []
        offset = 0
        chunks = []
        for name in names:
            v = self._values[name].astype("<f4")
            entries.append({
                "name": name,
                "shape": list(v.shape),
                "dtype": "float32",
                "offset": offset,
            })
            offset += v.size
            chunks.append(v.reshape(-1))
        blob = (np.concatenate(chunks) if chunks
                else np.zeros(0, dtype="<f4"))
        manifest = {"format": "headsplat-checkpoint-v1",
                    "meta": self.meta,
                    "params": entries}
        tmp = path + ".tmp"
        with open(tmp, "w") as f:
            json.dump(manifest, f, indent=1, sort_keys=True)
        os.replace(tmp, path)
        with open(path + ".bin", "wb") as f:
            f.write(blob.tobytes())

    @classmethod
    def load(cls, path: str) -> "ParamStore":
        with open(path) as f:
            manifest = json.load(f)
        if manifest.get("format") != "headsplat-checkpoint-v1":
            raise ValueError(f"not a checkpoint manifest: {path}")
        blob = np.fromfile(path + ".bin", dtype="<f4")
        store = cls()
        store.meta = dict(manifest.get("meta", {}))
        for ent in manifest["params"]:
            n = int(np.prod(ent["shape"])) if ent["shape"] else 1
            chunk = blob[ent["offset"]:ent["offset"] + n]
            store.add(ent["name"],
                      chunk.reshape(ent["shape"]).astype(np.float64))
        return store

    def quantize(self):
        """Round every value to float32 in place (matches a save/load trip)."""
        for v in self._values.values():
            v[...] = v.astype(np.float32).astype(np.float64)
        self.version += 1
