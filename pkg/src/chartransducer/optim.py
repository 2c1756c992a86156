"""Adam optimizer over a named parameter dict."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .autodiff import Tensor

__all__ = ["AdamState", "adam_step", "zero_grads", "MissingGradientError"]


class MissingGradientError(RuntimeError):
    """A parameter reached the optimizer without a populated gradient."""


@dataclass
class AdamState:
    """First/second moment accumulators, one array per parameter."""

    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.98
    epsilon: float = 1e-9
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, params: Mapping[str, Tensor], beta1: float = 0.9,
             beta2: float = 0.98, epsilon: float = 1e-9) -> "AdamState":
        return cls(
            step=0,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )

    def copy(self) -> "AdamState":
        return AdamState(
            step=self.step,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
        )


def adam_step(params: Mapping[str, Tensor], state: AdamState, lr: float) -> AdamState:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    if set(params.keys()) != set(state.m.keys()):
        raise ValueError("parameter names do not match optimizer state")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        if p.grad is None:
            raise MissingGradientError(f"parameter {name!r} has no gradient")
        g = p.grad
        if g.shape != p.data.shape:
            raise MissingGradientError(
                f"gradient shape {g.shape} does not match parameter {name!r} {p.data.shape}"
            )
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
    return state


def zero_grads(params: Mapping[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None
