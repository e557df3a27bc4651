"""CTC loss in log space, a path-enumeration oracle, decoding, and TER.

The blank symbol is index 0 everywhere (the checkpoint format records
this). ``ctc_loss`` consumes raw logits and applies the softmax itself so
the whole loss is one fused, numerically stable operation on the tape.
"""

from __future__ import annotations

import itertools
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import ContractError, ShapeError
from .tensor import Tensor, record_op

BLANK = 0

# Brute-force enumeration walks V**T paths; refuse anything bigger.
MAX_BRUTE_T = 8
MAX_BRUTE_V = 4


class LabelSequence:
    """Reference token indices; the blank never appears among them."""

    __slots__ = ("tokens",)

    def __init__(self, tokens: Sequence[int]):
        toks = [int(t) for t in tokens]
        for t in toks:
            if t == BLANK:
                raise ContractError(f"label tokens must not include the blank ({BLANK})")
            if t < 0:
                raise ContractError(f"label tokens must be nonnegative, got {t}")
        self.tokens = toks

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        if isinstance(other, LabelSequence):
            return self.tokens == other.tokens
        return NotImplemented

    def __hash__(self):
        return hash(tuple(self.tokens))

    def __repr__(self) -> str:
        return f"LabelSequence({self.tokens})"


def _extended(labels: LabelSequence) -> list[int]:
    """Blank-interleaved label sequence: (-, l1, -, l2, ..., -)."""
    ext = [BLANK]
    for t in labels.tokens:
        ext.append(t)
        ext.append(BLANK)
    return ext


def min_frames(labels: LabelSequence) -> int:
    """Fewest frames that can emit the labels (repeats force a blank between)."""
    repeats = sum(
        1 for a, b in zip(labels.tokens, labels.tokens[1:]) if a == b
    )
    return len(labels) + repeats


def ctc_feasible(t_frames: int, labels: LabelSequence) -> bool:
    return t_frames >= min_frames(labels)


def _check_labels(labels: LabelSequence, vocab: int) -> None:
    for t in labels.tokens:
        if t >= vocab:
            raise ContractError(f"label token {t} outside vocabulary of {vocab}")


def ctc_loss(logits: Tensor, labels: LabelSequence) -> Tensor:
    """Negative log probability of all alignments collapsing to ``labels``.

    ``logits`` is [frames, vocab], raw (pre-softmax). Infeasible instances
    (too few frames for the labels) yield +inf loss with a zero gradient;
    callers detect the condition by checking for an infinite value.
    """
    if logits.ndim != 2:
        raise ShapeError(f"logits must be [frames, vocab], got {logits.shape}")
    t_frames, vocab = logits.shape
    _check_labels(labels, vocab)

    if not ctc_feasible(t_frames, labels):
        out = Tensor._wrap(np.float64(np.inf))
        record_op(out, (logits,), lambda g: (np.zeros(logits.shape),))
        return out

    u = logits.data
    y_log = u - logsumexp(u, axis=1, keepdims=True)
    ext = _extended(labels)
    s_len = len(ext)

    # Forward recursion; alpha[t, s] includes the emission at frame t.
    alpha = np.full((t_frames, s_len), -np.inf)
    alpha[0, 0] = y_log[0, ext[0]]
    if s_len > 1:
        alpha[0, 1] = y_log[0, ext[1]]
    for t in range(1, t_frames):
        prev = alpha[t - 1]
        move = np.logaddexp(prev[1:], prev[:-1])
        acc = np.concatenate(([prev[0]], move))
        # Skip over a blank into a fresh token, unless it repeats.
        for s in range(2, s_len):
            if ext[s] != BLANK and ext[s] != ext[s - 2]:
                acc[s] = np.logaddexp(acc[s], prev[s - 2])
        alpha[t] = acc + y_log[t, ext]

    tail = [alpha[-1, -1]]
    if s_len > 1:
        tail.append(alpha[-1, -2])
    log_p = logsumexp(tail)
    out = Tensor._wrap(np.float64(-log_p))

    def vjp(g):
        # Backward recursion; beta[t, s] covers frames t+1.. (emission at t
        # itself lives in alpha), so alpha + beta scores paths through (t, s).
        beta = np.full((t_frames, s_len), -np.inf)
        beta[-1, -1] = 0.0
        if s_len > 1:
            beta[-1, -2] = 0.0
        for t in range(t_frames - 2, -1, -1):
            nxt = beta[t + 1] + y_log[t + 1, ext]
            move = np.logaddexp(nxt[:-1], nxt[1:])
            acc = np.concatenate((move, [nxt[-1]]))
            for s in range(s_len - 2):
                if ext[s + 2] != BLANK and ext[s + 2] != ext[s]:
                    acc[s] = np.logaddexp(acc[s], nxt[s + 2])
            beta[t] = acc

        occupancy = alpha + beta  # log P(paths through (t, s))
        grad = np.exp(y_log)
        for s, k in enumerate(ext):
            grad[:, k] -= np.exp(occupancy[:, s] - log_p)
        return (float(g) * grad,)

    record_op(out, (logits,), vjp)
    return out


def ctc_brute_force(logprobs, labels: LabelSequence) -> float:
    """Loss by exhaustive path enumeration; the oracle for ``ctc_loss``.

    ``logprobs`` is [frames, vocab] of LOG probabilities (rows already
    normalized); accepts a Tensor or a plain array so callers can pass
    -inf entries for impossible symbols.
    """
    lp = logprobs.data if isinstance(logprobs, Tensor) else np.asarray(logprobs, dtype=np.float64)
    if lp.ndim != 2:
        raise ShapeError(f"logprobs must be [frames, vocab], got {lp.shape}")
    t_frames, vocab = lp.shape
    if t_frames > MAX_BRUTE_T or vocab > MAX_BRUTE_V:
        raise ContractError(
            f"brute force limited to T <= {MAX_BRUTE_T}, V <= {MAX_BRUTE_V};"
            f" got T={t_frames}, V={vocab}"
        )
    _check_labels(labels, vocab)
    target = labels.tokens
    matches = []
    for path in itertools.product(range(vocab), repeat=t_frames):
        collapsed = []
        prev = None
        for sym in path:
            if sym != prev and sym != BLANK:
                collapsed.append(sym)
            prev = sym
        if collapsed == target:
            matches.append(sum(lp[t, sym] for t, sym in enumerate(path)))
    if not matches:
        return float("inf")
    return float(-logsumexp(matches))


def greedy_decode(logits: Tensor) -> LabelSequence:
    """Best-path decoding: per-frame argmax, collapse repeats, drop blanks."""
    if logits.ndim != 2:
        raise ShapeError(f"logits must be [frames, vocab], got {logits.shape}")
    picks = np.argmax(logits.data, axis=1)  # ties resolve to the lowest index
    out = []
    prev = None
    for sym in picks:
        if sym != prev and sym != BLANK:
            out.append(int(sym))
        prev = sym
    return LabelSequence(out)


def edit_distance(hyp: Sequence[int], ref: Sequence[int]) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs."""
    hyp, ref = list(hyp), list(ref)
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, start=1):
        curr = [i] + [0] * len(ref)
        for j, r in enumerate(ref, start=1):
            curr[j] = min(
                prev[j] + 1,          # delete h
                curr[j - 1] + 1,      # insert r
                prev[j - 1] + (h != r),
            )
        prev = curr
    return prev[-1]


class ErrorRate(NamedTuple):
    distance: int
    rate: float | None  # None when the reference is empty


def token_error_rate(hyp: LabelSequence, ref: LabelSequence) -> ErrorRate:
    """Edit distance over reference length; rate undefined for empty refs."""
    d = edit_distance(hyp.tokens, ref.tokens)
    if len(ref) == 0:
        return ErrorRate(d, None)
    return ErrorRate(d, d / len(ref))


def sequence_ctc_loss(logits_batch, labels: Sequence[LabelSequence]) -> Tensor:
    """Mean CTC loss over a batch of padded logit sequences.

    Only each utterance's valid frames enter its loss. Any infeasible
    utterance makes the batch loss infinite.
    """
    from . import tensor as tc

    if logits_batch.batch_size != len(labels):
        raise ShapeError(
            f"{logits_batch.batch_size} utterances but {len(labels)} label sequences"
        )
    total = None
    for b in range(logits_batch.batch_size):
        per_utt = tc.index_axis(logits_batch.features, 0, b)
        valid = tc.rows(per_utt, 0, int(logits_batch.lengths[b]))
        loss = ctc_loss(valid, labels[b])
        total = loss if total is None else tc.add(total, loss)
    return tc.div(total, float(len(labels)))
