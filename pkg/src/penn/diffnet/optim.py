from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0

    def to_arrays(self, prefix="adam"):
        out = {f"{prefix}.step": np.array(self.step)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"{prefix}.m{i}"] = m
            out[f"{prefix}.v{i}"] = v
        return out

    @classmethod
    def from_arrays(cls, arrays, lr, prefix="adam"):
        st = cls(lr=lr, step=int(arrays[f"{prefix}.step"]))
        i = 0
        while f"{prefix}.m{i}" in arrays:
            st.m.append(np.array(arrays[f"{prefix}.m{i}"], dtype=np.float64))
            st.v.append(np.array(arrays[f"{prefix}.v{i}"], dtype=np.float64))
            i += 1
        return st


def adam_step(params, grads, state):
    """Bias-corrected Adam update, in place on ``params`` (list of ndarrays)."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ValueError("optimizer state does not match parameter list")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


class Adam:
    """Adam over a list of leaf Tensors, reading their ``.grad``."""

    def __init__(self, params, lr=0.001, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step([p.data for p in self.params], [p.grad for p in self.params], self.state)
