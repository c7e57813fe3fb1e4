from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def like(cls, param: np.ndarray) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param))


def adam_step(state: AdamState, param: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    """One bias-corrected Adam update; mutates ``state`` and returns the new parameter."""
    if state.m.shape != param.shape:
        raise ValueError(f"optimizer state shape {state.m.shape} does not match {param.shape}")
    state.t += 1
    state.m = BETA1 * state.m + (1.0 - BETA1) * grad
    state.v = BETA2 * state.v + (1.0 - BETA2) * grad * grad
    m_hat = state.m / (1.0 - BETA1 ** state.t)
    v_hat = state.v / (1.0 - BETA2 ** state.t)
    return param - lr * m_hat / (np.sqrt(v_hat) + EPS)


@dataclass
class ParamGroup:
    params: list[Tensor]
    lr: float
    name: str = ""
    frozen: bool = False
    states: list[AdamState] = field(default_factory=list)


class Adam:
    """Adam over named parameter groups, each with its own learning rate."""

    def __init__(self):
        self.groups: dict[str, ParamGroup] = {}

    def add_group(self, name: str, params: list[Tensor], lr: float) -> ParamGroup:
        group = ParamGroup(list(params), lr, name, states=[AdamState.like(p.data) for p in params])
        self.groups[name] = group
        return group

    def zero_grad(self):
        for g in self.groups.values():
            for p in g.params:
                p.grad = None

    def step(self):
        for g in self.groups.values():
            if g.frozen:
                continue
            for p, st in zip(g.params, g.states):
                if p.grad is None:
                    continue
                p.data = adam_step(st, p.data, p.grad, g.lr)
