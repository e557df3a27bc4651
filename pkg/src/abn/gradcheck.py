"""Whole-model gradient verification against finite differences."""

from __future__ import annotations

import numpy as np

from .ctc import LabelSequence, sequence_ctc_loss
from .data import SequenceBatch
from .errors import ContractError
from .recurrent import Model, ModelConfig, stack_forward
from .tensor import Tensor, finite_diff_check

DEFAULT_T_VALUES = (1, 2, 5, 7)


def _labels_for(length: int, vocab: int) -> LabelSequence:
    # Alternate tokens so no blank is forced between repeats; any sequence
    # up to `length` tokens then fits in `length` frames.
    n = max(1, length // 2)
    return LabelSequence([1 + (i % (vocab - 1)) for i in range(n)])


def model_gradient_check(
    variant: str,
    seed: int = 0,
    t_values=DEFAULT_T_VALUES,
    hidden: int = 4,
    features: int = 6,
    vocab: int = 3,
    h: float = 1e-4,
) -> float:
    """Max finite-difference error over every parameter of a small stack.

    The loss is the full pipeline: normalized BiLSTM layers, logits, CTC.
    Dropout stays off; its resampling would break the central differences.

    The step is wider than the single-op default on purpose: some
    parameters of a deep composite have gradients near the 1e-8 floor of
    the relative-error denominator, where central-difference roundoff
    (which shrinks with 1/h) dominates. h=1e-4 keeps that noise a decade
    under tolerance while truncation stays negligible.
    """
    if vocab < 3:
        raise ContractError("vocabulary must fit a blank plus two tokens")
    worst = 0.0
    for t_max in t_values:
        rng = np.random.default_rng([seed, t_max])
        model = Model(
            ModelConfig(
                2, hidden, features, vocab, variant,
                dropout=0.0, embed_dim=2, attn_dim=2,
            ),
            rng,
        )
        lengths = [t_max, max(1, (t_max + 1) // 2)]
        feats = Tensor(rng.normal(size=(2, t_max, features)))
        batch = SequenceBatch(feats, lengths)
        labels = [_labels_for(l, vocab) for l in lengths]

        for name, base in model.parameters().items():
            def f(theta, name=name, base=base):
                model.set_parameter(name, theta)
                try:
                    logits = stack_forward(batch, model, "train")
                    return sequence_ctc_loss(logits, labels)
                finally:
                    model.set_parameter(name, base)

            err = finite_diff_check(f, base, h=h)
            worst = max(worst, err)
    return worst
