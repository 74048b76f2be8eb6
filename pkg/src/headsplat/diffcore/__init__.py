"""Reverse-mode autodiff engine, parameter store, MLPs, Adam, FD checking."""

from . import engine
from .check import finite_diff_check
from .engine import Var, backward, constant, grad, leaf
from .mlp import init_mlp, mlp_forward, mlp_value, posenc, posenc_dim
from .optim import AdamState, adam_step
from .store import ParamStore

__all__ = [
    "engine", "Var", "backward", "constant", "grad", "leaf",
    "ParamStore", "init_mlp", "mlp_forward", "mlp_value", "posenc", "posenc_dim",
    "AdamState", "adam_step", "finite_diff_check",
]
