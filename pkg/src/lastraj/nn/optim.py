"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ArgumentError


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float = 1e-4, beta1: float = 0.5,
              beta2: float = 0.999, eps: float = 1e-8) -> tuple[dict, AdamState]:
    """One Adam update over name->array dicts; returns new params and the advanced state.

    Parameters without a gradient entry are left untouched.
    """
    state.step += 1
    t = state.step
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = p
            continue
        if np.shape(g) != np.shape(p):
            raise ArgumentError(f"{name}: gradient shape {np.shape(g)} != parameter shape {np.shape(p)}")
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        out[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return out, state


class Adam:
    """Adam bound to a :class:`ParamSet`; updates tensor values in place."""

    def __init__(self, params, lr: float = 1e-4, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def step(self, grads_by_name: dict) -> None:
        current = {name: t.value for name, t in self.params.items()}
        new, self.state = adam_step(current, grads_by_name, self.state, self.lr, self.beta1, self.beta2, self.eps)
        for name, t in self.params.items():
            t.value = new[name]
