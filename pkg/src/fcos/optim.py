"""SGD-with-momentum and Adam parameter updates."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, UsageError
from .graph import ModelGraph

METHODS = ("sgd-momentum", "adam")


@dataclass
class OptimizerState:
    lr: float
    method: str = "adam"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    slots: dict = field(default_factory=dict)  # (node id, name) -> moment buffers

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.method not in METHODS:
            raise ConfigError(f"unknown optimizer {self.method!r}; expected one of {METHODS}")


def optimize_step(state: OptimizerState, model: ModelGraph) -> None:
    """Applies one update to every trainable parameter and clears grads."""
    state.step_count += 1
    t = state.step_count
    for node in model.nodes:
        for name, param in node.trainable_params():
            if param.grad is None:
                raise UsageError(
                    f"parameter {node.id}.{name} has no gradient; run backward() first"
                )
            key = (node.id, name)
            g = param.grad
            if state.method == "sgd-momentum":
                v = state.slots.get(key)
                if v is None:
                    v = np.zeros_like(param.data)
                v = state.momentum * v + g
                state.slots[key] = v
                param.data -= (state.lr * v).astype(param.data.dtype, copy=False)
            else:  # adam
                m, v = state.slots.get(key, (None, None))
                if m is None:
                    m = np.zeros_like(param.data)
                    v = np.zeros_like(param.data)
                m = state.beta1 * m + (1.0 - state.beta1) * g
                v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
                state.slots[key] = (m, v)
                mhat = m / (1.0 - state.beta1**t)
                vhat = v / (1.0 - state.beta2**t)
                step = state.lr * mhat / (np.sqrt(vhat) + state.eps)
                param.data -= step.astype(param.data.dtype, copy=False)
            param.zero_grad()
