"""
Plain-numpy optimizers over lists of parameter arrays: SGD, SGD with
momentum and Adam, plus the step-decay learning-rate schedule.
"""
from dataclasses import dataclass, field
import logging

import numpy as np

from .exceptions import AbortStepError, DimensionMismatchError, InvalidConfigError

logger = logging.getLogger("rectification")

OPTIMIZERS = ("sgd", "sgd_momentum", "adam")


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moments: list = field(default_factory=list)
    second_moments: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise InvalidConfigError(f"unknown optimizer {self.kind!r}")
        if not self.learning_rate > 0:
            raise InvalidConfigError(f"learning rate must be positive, got {self.learning_rate}")

    @classmethod
    def create(cls, kind, params, learning_rate, **kwargs):
        state = cls(kind=kind, learning_rate=learning_rate, **kwargs)
        state.first_moments = [np.zeros_like(p) for p in params]
        if kind == "adam":
            state.second_moments = [np.zeros_like(p) for p in params]
        return state


@dataclass(frozen=True)
class StepDecaySchedule:
    """Multiply the base rate by `gamma` every `every_epochs` epochs"""

    base_rate: float
    gamma: float = 0.7
    every_epochs: int = 20

    def rate_for(self, epoch):
        return self.base_rate * self.gamma ** (epoch // self.every_epochs)


def _check_gradients(params, grads):
    if len(params) != len(grads):
        raise DimensionMismatchError("optimizer gradients", len(params), len(grads))
    bad = {}
    for index, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise DimensionMismatchError(f"gradient {index}", p.shape, g.shape)
        nonfinite = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
        if nonfinite:
            bad[f"param_{index}"] = nonfinite
    if bad:
        logger.error(f"Refusing optimizer step with non-finite gradients: {bad}")
        raise AbortStepError("non-finite gradients", diagnostics=bad)


def optimizer_step(state, params, grads):
    """Return updated copies of `params`; `state` accumulators advance in place"""
    _check_gradients(params, grads)
    state.step_count += 1
    lr = state.learning_rate
    updated = []

    if state.kind == "sgd":
        for p, g in zip(params, grads):
            updated.append(p - lr * g)

    elif state.kind == "sgd_momentum":
        for index, (p, g) in enumerate(zip(params, grads)):
            velocity = state.momentum * state.first_moments[index] + g
            state.first_moments[index] = velocity
            updated.append(p - lr * velocity)

    else:
        correction1 = 1.0 - state.beta1 ** state.step_count
        correction2 = 1.0 - state.beta2 ** state.step_count
        for index, (p, g) in enumerate(zip(params, grads)):
            m = state.beta1 * state.first_moments[index] + (1.0 - state.beta1) * g
            v = state.beta2 * state.second_moments[index] + (1.0 - state.beta2) * g * g
            state.first_moments[index] = m
            state.second_moments[index] = v
            updated.append(p - lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps))

    return updated, state
