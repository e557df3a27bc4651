"""Adam updates and the relative-improvement learning-rate schedule."""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .tensor import Tensor


class AdamState:
    """First/second moment accumulators per parameter, plus the step count."""

    __slots__ = ("m", "v", "t", "beta1", "beta2", "eps")

    def __init__(self, params: dict[str, Tensor], beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = {name: np.zeros(p.shape) for name, p in params.items()}
        self.v = {name: np.zeros(p.shape) for name, p in params.items()}
        self.t = 0
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> dict[str, Tensor]:
    """One bias-corrected Adam update; returns fresh parameter tensors."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    updated = {}
    for name, p in params.items():
        g = grads[name]
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        updated[name] = Tensor._wrap(p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return updated


def lr_schedule(
    history,
    halve_threshold: float = 0.004,
    stop_threshold: float = 0.0005,
) -> str:
    """Action from the last two dev metrics: ``keep``, ``halve``, or ``stop``.

    Relative improvement is (prev - curr) / prev; falling below the stop
    threshold ends training, below the halve threshold halves the rate.
    """
    if len(history) < 2:
        raise ContractError("lr_schedule needs at least two epochs of history")
    prev, curr = float(history[-2]), float(history[-1])
    if prev <= 0.0:
        raise ContractError(f"dev metric must be positive, got {prev}")
    r = (prev - curr) / prev
    if r < stop_threshold:
        return "stop"
    if r < halve_threshold:
        return "halve"
    return "keep"
