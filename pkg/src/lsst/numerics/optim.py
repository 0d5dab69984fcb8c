"""Adam optimizer over a named parameter mapping."""

import numpy as np

from ..errors import NonFiniteGradientError, ShapeError


class AdamState:
    """First/second moment accumulators plus the step counter.

    Created against a concrete parameter mapping so the moment shapes are
    pinned; the update is the standard bias-corrected rule.
    """

    def __init__(self, params, lr=4e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}


def adam_step(state, params, grads):
    """One in-place Adam update.  Deterministic given identical inputs.

    Raises NonFiniteGradientError naming the parameter if any gradient
    contains NaN/Inf, leaving all parameters untouched.
    """
    for name in params:
        g = grads[name]
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape "
                             f"{params[name].shape} for '{name}'")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params
