"""Bias-corrected Adam over lists of parameter tensors."""

from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError


@dataclass
class AdamState:
    """First/second moment buffers mirroring the parameter shapes."""

    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls(m=[np.zeros_like(p.data) for p in params],
                   v=[np.zeros_like(p.data) for p in params])


def adam_step(params, grads, state, t=None, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
    """Apply one Adam update in place.

    ``grads`` holds arrays aligned with ``params``; ``None`` counts as zero.
    ``t`` defaults to ``state.t + 1`` and must equal it when given.
    """
    if t is None:
        t = state.t + 1
    if t < 1 or t != state.t + 1:
        raise ValueError(f"step counter must advance to {state.t + 1}, got {t}")
    if not (len(params) == len(grads) == len(state.m) == len(state.v)):
        raise ShapeError("params, grads and Adam state have different lengths")
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        if not (p.shape == g.shape == m.shape == v.shape):
            raise ShapeError(f"Adam shape mismatch: param {p.shape}, grad {g.shape}, state {m.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(p.dtype, copy=False)
    state.t = t
    return params, state


class Adam:
    """Constant learning-rate Adam bound to a fixed parameter list."""

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState.zeros_like(self.params)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, [p.grad for p in self.params], self.state,
                  lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)
