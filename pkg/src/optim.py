"""
Gradient-descent optimizer state and update rule.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

from .exceptions import ConfigError, UsageError
from .tensor import Tensor


@dataclass
class OptimState:
    """Learning rate, momentum buffers and step counter for a parameter list."""
    learning_rate: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    step_count: int = 0
    velocity: Dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")


def optim_step(params: Sequence[Tensor], state: OptimState) -> None:
    """Apply one update in place using the gradients stored on ``params``.

    Plain gradient descent when momentum is 0; heavy-ball momentum otherwise.
    Gradients are left untouched for the caller to clear.
    """
    missing = [p.name or str(i) for i, p in enumerate(params) if p.grad is None]
    if missing:
        raise UsageError(f"parameters without gradients: {missing[:5]}")
    for index, param in enumerate(params):
        grad = param.grad
        if state.weight_decay:
            grad = grad + state.weight_decay * param.data
        if state.momentum:
            buffer = state.velocity.get(index)
            if buffer is None or buffer.shape != param.data.shape:
                buffer = np.zeros_like(param.data)
            buffer = state.momentum * buffer + grad
            state.velocity[index] = buffer
            grad = buffer
        param.data -= state.learning_rate * grad
    state.step_count += 1


class SGD:
    """Stochastic gradient descent over a fixed parameter list."""

    def __init__(self, params: Sequence[Tensor], learning_rate: float, momentum: float = 0.0,
                 weight_decay: float = 0.0):
        self.params: List[Tensor] = list(params)
        self.state = OptimState(learning_rate=learning_rate, momentum=momentum, weight_decay=weight_decay)

    def step(self) -> None:
        optim_step(self.params, self.state)

    def zero_grad(self) -> None:
        for param in self.params:
            param.zero_grad()
