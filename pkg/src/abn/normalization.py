"""Batch normalization over the valid frames of padded sequence batches.

Statistics are per feature, pooled over every valid frame of every
utterance in the mini-batch; padded frames never contribute. Training mode
standardizes with batch statistics and folds them into exponential running
averages; inference standardizes with the running averages. Outputs are
zeroed on padded frames so downstream consumers see no garbage there.
"""

from __future__ import annotations

import numpy as np

from . import tensor as tc
from .data import SequenceBatch
from .errors import DegenerateBatchError, ShapeError
from .tensor import Tensor


class BatchNormState:
    """Learnable scale/shift plus running statistics for one normalizer."""

    __slots__ = ("gamma", "beta", "running_mean", "running_var", "epsilon", "momentum")

    def __init__(self, gamma, beta, running_mean, running_var, epsilon, momentum):
        if epsilon <= 0:
            raise ShapeError(f"epsilon must be positive, got {epsilon}")
        if not 0.0 < momentum <= 1.0:
            raise ShapeError(f"momentum must lie in (0, 1], got {momentum}")
        p = gamma.shape[0]
        for name, t in (("beta", beta), ("running_mean", running_mean),
                        ("running_var", running_var)):
            if t.shape != (p,):
                raise ShapeError(f"{name} shape {t.shape} does not match gamma {gamma.shape}")
        if np.any(running_var.data < 0):
            raise ShapeError("running_var must be non-negative")
        self.gamma = gamma
        self.beta = beta
        self.running_mean = running_mean
        self.running_var = running_var
        self.epsilon = float(epsilon)
        self.momentum = float(momentum)

    @classmethod
    def fresh(cls, feature_dim: int, epsilon: float = 1e-5, momentum: float = 0.1):
        return cls(
            gamma=tc.ones(feature_dim),
            beta=tc.zeros(feature_dim),
            running_mean=tc.zeros(feature_dim),
            running_var=tc.ones(feature_dim),
            epsilon=epsilon,
            momentum=momentum,
        )

    @property
    def feature_dim(self) -> int:
        return self.gamma.shape[0]


def bn_statistics(batch: SequenceBatch) -> tuple[Tensor, Tensor]:
    """Per-feature mean and population variance over all valid frames.

    Differentiable with respect to the batch features; padded frames are
    excluded by mask multiplication so they receive zero gradient.
    """
    n = batch.valid_frames()
    if n < 2:
        raise DegenerateBatchError(
            f"need at least 2 valid frames for batch statistics, got {n}"
        )
    flat = tc.reshape(batch.features, (batch.batch_size * batch.max_frames, batch.dim))
    maskcol = Tensor._wrap(batch.flat_mask_column())
    masked = tc.mul(flat, maskcol)
    mu = tc.div(tc.tsum(masked, axis=0), float(n))
    centered = tc.mul(tc.sub(flat, mu), maskcol)
    var = tc.div(tc.tsum(tc.mul(centered, centered), axis=0), float(n))
    return mu, var


def bn_normalize(x: Tensor, mu: Tensor, var: Tensor, epsilon: float) -> Tensor:
    """Standardize per feature: (x - mu) / sqrt(var + epsilon)."""
    p = mu.shape[0]
    if var.shape != (p,) or x.shape[-1] != p:
        raise ShapeError(
            f"feature dims disagree: x {x.shape}, mu {mu.shape}, var {var.shape}"
        )
    return tc.div(tc.sub(x, mu), tc.sqrt(tc.add(var, epsilon)))


def bn_affine(xhat: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Learnable per-feature scale and shift: gamma * xhat + beta."""
    if gamma.shape != beta.shape or xhat.shape[-1] != gamma.shape[-1]:
        raise ShapeError(
            f"affine shapes disagree: xhat {xhat.shape}, gamma {gamma.shape}, beta {beta.shape}"
        )
    return tc.add(tc.mul(xhat, gamma), beta)


def standardize_batch(batch: SequenceBatch, state: BatchNormState, mode: str) -> Tensor:
    """Standardized (pre-affine) frames, flattened to [batch*frames, dim].

    Train mode uses batch statistics and updates the running averages in
    place; infer mode reads the running averages. The affine stage is left
    to the caller because generated scale/shift parameters substitute for
    the learned ones in the attention variants.
    """
    if mode not in ("train", "infer"):
        raise ShapeError(f"mode must be 'train' or 'infer', got {mode!r}")
    if batch.dim != state.feature_dim:
        raise ShapeError(
            f"batch feature dim {batch.dim} does not match state {state.feature_dim}"
        )
    flat = tc.reshape(batch.features, (batch.batch_size * batch.max_frames, batch.dim))
    if mode == "train":
        mu, var = bn_statistics(batch)
        m = state.momentum
        state.running_mean = Tensor._wrap(
            (1.0 - m) * state.running_mean.data + m * mu.data
        )
        state.running_var = Tensor._wrap(
            (1.0 - m) * state.running_var.data + m * var.data
        )
    else:
        mu, var = state.running_mean, state.running_var
    return bn_normalize(flat, mu, var, state.epsilon)


def mask_frames(flat: Tensor, batch: SequenceBatch) -> SequenceBatch:
    """Zero padded rows of a flattened result and restore batch layout."""
    masked = tc.mul(flat, Tensor._wrap(batch.flat_mask_column()))
    shaped = tc.reshape(masked, (batch.batch_size, batch.max_frames, flat.shape[-1]))
    return SequenceBatch(shaped, batch.lengths)


def bn_forward(batch: SequenceBatch, state: BatchNormState, mode: str) -> SequenceBatch:
    """Full batch-norm pass: standardize, scale/shift, re-zero padding."""
    xhat = standardize_batch(batch, state, mode)
    y = bn_affine(xhat, state.gamma, state.beta)
    return mask_frames(y, batch)
