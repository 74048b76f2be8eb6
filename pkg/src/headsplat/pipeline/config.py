"""Training configuration with dotted-key overrides."""

from dataclasses import dataclass, field, asdict

from ..losses import LossWeights

STAGES = ("guide", "gaussian")

DEFAULT_STEPS = {"guide": 3000, "gaussian": 5000}


@dataclass
class TrainConfig:
    stage: str = "guide"
    steps: int = None            # stage-dependent default, see DEFAULT_STEPS
    lr_nets: float = 1e-3
    lr_codes: float = 1e-3
    lr_mean: float = 5e-4
    batch: int = 4
    seed: int = 0
    fdim: int = 8
    d_id: int = 32
    d_exp: int = 16
    lattice_res: int = 48
    sdf_pretrain_steps: int = 300
    deterministic: bool = True
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights.from_dict(self.weights)
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.steps is None:
            self.steps = DEFAULT_STEPS[self.stage]
        for name in ("steps", "sdf_pretrain_steps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("lr_nets", "lr_codes", "lr_mean"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("batch", "fdim", "d_id", "d_exp", "lattice_res"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def to_dict(self):
        d = asdict(self)
        d["weights"] = self.weights.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


def apply_overrides(config: TrainConfig, overrides: dict) -> TrainConfig:
    """Apply dotted-key string overrides (e.g. {"weights.lap": "50"}).

    Values are coerced to the type of the field they replace; unknown keys
    are rejected.
    """
    d = config.to_dict()
    for key, raw in overrides.items():
        parts = key.split(".")
        node = d
        for p in parts[:-1]:
            if not isinstance(node, dict) or p not in node:
                raise ValueError(f"unknown config key: {key}")
            node = node[p]
        leaf = parts[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise ValueError(f"unknown config key: {key}")
        node[leaf] = _coerce(raw, node[leaf], key)
    return TrainConfig.from_dict(d)


def _coerce(raw, current, key):
    if isinstance(current, bool):
        if str(raw).lower() in ("1", "true", "yes"):
            return True
        if str(raw).lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"cannot parse boolean for {key}: {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, str):
        return str(raw)
    raise ValueError(f"cannot override structured key {key}")
