"""Adam and SGD over the dense engine's parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .nn import SequentialModel, Tensor

ADAM = "adam"
SGD = "sgd"


@dataclass
class OptimizerConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    algo: str = ADAM

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be >= 0")
        if not (0.0 < self.beta1 < 1.0 and 0.0 < self.beta2 < 1.0):
            raise ValidationError("beta1/beta2 must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValidationError("epsilon must be positive")
        if self.algo not in (ADAM, SGD):
            raise ValidationError(f"unknown optimizer algo {self.algo!r}")


class AdamState:
    """First/second moment tensors mirroring a parameter set, plus step count."""

    def __init__(self, params: dict[str, Tensor]):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step_count = 0


def _check_shapes(params: dict[str, Tensor], grads: dict[str, Tensor], state: AdamState) -> None:
    if set(params) != set(grads):
        raise ValidationError("params and grads carry different keys")
    for k, p in params.items():
        if grads[k].shape != p.shape or state.m[k].shape != p.shape:
            raise ValidationError(f"shape mismatch for parameter {k!r}")


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, Tensor],
    state: AdamState,
    cfg: OptimizerConfig,
) -> None:
    """Standard bias-corrected Adam update, applied to `params` in place."""
    _check_shapes(params, grads, state)
    state.step_count += 1
    t = state.step_count
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    for k, p in params.items():
        g = grads[k]
        state.m[k] = cfg.beta1 * state.m[k] + (1.0 - cfg.beta1) * g
        state.v[k] = cfg.beta2 * state.v[k] + (1.0 - cfg.beta2) * (g * g)
        m_hat = state.m[k] / c1
        v_hat = state.v[k] / c2
        p -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)


def sgd_step(
    params: dict[str, Tensor],
    grads: dict[str, Tensor],
    state: AdamState,
    cfg: OptimizerConfig,
) -> None:
    """Plain gradient step p <- p - lr * g (moments untouched)."""
    _check_shapes(params, grads, state)
    state.step_count += 1
    for k, p in params.items():
        p -= cfg.learning_rate * grads[k]


class Optimizer:
    """Optimizer bound to one model segment.

    Parameter arrays are shared with the model's layers, so steps mutate the
    live model. Each step bumps the owning layers' version counters.
    """

    def __init__(self, model: SequentialModel, cfg: OptimizerConfig):
        self.model = model
        self.cfg = cfg
        self._params = {
            f"{i}.{name}": p
            for i, layer in enumerate(model.layers)
            for name, p in layer.params().items()
        }
        self.state = AdamState(self._params)

    def step(self, param_grads: list[dict[str, Tensor]]) -> None:
        if len(param_grads) != len(self.model.layers):
            raise ValidationError("gradient list does not match model layers")
        grads = {
            f"{i}.{name}": g
            for i, layer_grads in enumerate(param_grads)
            for name, g in layer_grads.items()
        }
        if self.cfg.algo == SGD:
            sgd_step(self._params, grads, self.state, self.cfg)
        else:
            adam_step(self._params, grads, self.state, self.cfg)
        for layer in self.model.layers:
            if layer.params():
                layer.version += 1
