"""
SGD with momentum, Adam and RMSProp with the classifier's hyperparameters as defaults.

Update rules (g is the gradient, t the step count incremented before Adam's bias correction):

    sgd      v <- mu v + g;  w <- w - lr v
    adam     m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2;
             w <- w - lr m_hat / (sqrt(v_hat) + eps)
    rmsprop  s <- rho s + (1 - rho) g^2;  w <- w - lr g / (sqrt(s) + eps)

A parameter whose gradient is entirely zero is skipped: its value and moment
buffers stay untouched.
"""
from dataclasses import dataclass, field

import numpy as np

from hybridlab.errors import ConfigError

KINDS = ('sgd', 'adam', 'rmsprop')

DEFAULT_LR = {'sgd': 1e-4, 'adam': 1e-3, 'rmsprop': 1e-4}


@dataclass
class OptimizerConfig:
    kind: str = 'adam'
    lr: float = None
    momentum: float = 0.9
    beta1: float = 0.7
    beta2: float = 0.999
    rho: float = 0.8
    epsilon: float = 1e-7

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"Optimizer must be one of {', '.join(KINDS)}, got '{self.kind}'")
        if self.lr is None:
            self.lr = DEFAULT_LR[self.kind]
        if not self.lr > 0:
            raise ConfigError(f"Learning rate must be positive, got {self.lr}")
        for key in ('momentum', 'beta1', 'beta2', 'rho'):
            value = getattr(self, key)
            if not 0 <= value < 1:
                raise ConfigError(f"{key} must be in [0, 1), got {value}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")


@dataclass
class OptimizerState:
    """Per-parameter moment buffers keyed by parameter name, plus the step count."""
    buffers: dict = field(default_factory=dict)
    t: int = 0

    def buffer(self, param, key: str) -> np.ndarray:
        slots = self.buffers.setdefault(param.name, {})
        if key not in slots:
            slots[key] = np.zeros_like(param.value)
        return slots[key]


def sgd_momentum_step(param, state: OptimizerState, config: OptimizerConfig) -> None:
    v = state.buffer(param, 'velocity')
    v *= config.momentum
    v += param.grad
    param.value -= config.lr * v


def adam_step(param, state: OptimizerState, config: OptimizerConfig) -> None:
    m = state.buffer(param, 'm')
    v = state.buffer(param, 'v')
    g = param.grad
    m *= config.beta1
    m += (1 - config.beta1) * g
    v *= config.beta2
    v += (1 - config.beta2) * g * g
    m_hat = m / (1 - config.beta1 ** state.t)
    v_hat = v / (1 - config.beta2 ** state.t)
    param.value -= config.lr * m_hat / (np.sqrt(v_hat) + config.epsilon)


def rmsprop_step(param, state: OptimizerState, config: OptimizerConfig) -> None:
    s = state.buffer(param, 'mean_square')
    g = param.grad
    s *= config.rho
    s += (1 - config.rho) * g * g
    param.value -= config.lr * g / (np.sqrt(s) + config.epsilon)


STEPS = {'sgd': sgd_momentum_step, 'adam': adam_step, 'rmsprop': rmsprop_step}


class Optimizer:
    """Applies one optimizer to a named parameter collection, in sorted name order."""

    def __init__(self, config: OptimizerConfig, state: OptimizerState = None):
        self.config = config
        self.state = state or OptimizerState()
        self._step = STEPS[config.kind]

    def step(self, parameters: dict) -> None:
        self.state.t += 1
        for name in sorted(parameters):
            param = parameters[name]
            if param.trainable and np.any(param.grad):
                self._step(param, self.state, self.config)
