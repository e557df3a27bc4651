"""BiLSTM layers fed by normalized inputs, and the full model stack.

Normalization happens BEFORE the input weight matrices of each LSTM layer:
the layer consumes BN(x) (or its attention-generated variant), never raw
activations. The input path has no bias of its own: standardization
cancels any constant offset, and the shift parameter plays that role.

The cell follows the peephole form where the output gate alone sees the
fresh cell state through a diagonal connection. Gate biases are included
(zero-initialized, forget bias +1) even though the normalized-input
formulation does not require them; with zero biases the cell reduces to
the bias-free equations exactly.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as tc
from .data import SequenceBatch
from .errors import ContractError, ShapeError
from .generators import VARIANTS, FrameAbnGenerator, UttAbnGenerator, abn_forward
from .normalization import BatchNormState
from .tensor import Tensor, dropout  # noqa: F401  (dropout re-exported for callers)


class LstmLayerParams:
    """Weights of one directional LSTM: recurrent, input, peephole, biases."""

    __slots__ = (
        "w_hi", "w_hf", "w_hc", "w_ho",
        "w_xi", "w_xf", "w_xc", "w_xo",
        "w_co", "b_i", "b_f", "b_c", "b_o",
    )

    def __init__(self, **fields):
        missing = set(self.__slots__) - set(fields)
        if missing:
            raise ShapeError(f"missing LSTM fields: {sorted(missing)}")
        n = fields["w_hi"].shape[0]
        p = fields["w_xi"].shape[1]
        for name in ("w_hi", "w_hf", "w_hc", "w_ho"):
            if fields[name].shape != (n, n):
                raise ShapeError(f"{name} must be square [{n}, {n}], got {fields[name].shape}")
        for name in ("w_xi", "w_xf", "w_xc", "w_xo"):
            if fields[name].shape != (n, p):
                raise ShapeError(f"{name} must be [{n}, {p}], got {fields[name].shape}")
        for name in ("w_co", "b_i", "b_f", "b_c", "b_o"):
            if fields[name].shape != (n,):
                raise ShapeError(f"{name} must be [{n}], got {fields[name].shape}")
        for name, value in fields.items():
            setattr(self, name, value)

    @classmethod
    def init(cls, hidden: int, input_dim: int, rng: np.random.Generator):
        sh = 1.0 / math.sqrt(hidden)
        sx = 1.0 / math.sqrt(input_dim)
        def rec():
            return Tensor(rng.normal(0.0, sh, size=(hidden, hidden)))
        def inp():
            return Tensor(rng.normal(0.0, sx, size=(hidden, input_dim)))
        return cls(
            w_hi=rec(), w_hf=rec(), w_hc=rec(), w_ho=rec(),
            w_xi=inp(), w_xf=inp(), w_xc=inp(), w_xo=inp(),
            w_co=tc.zeros(hidden),
            b_i=tc.zeros(hidden),
            b_f=tc.ones(hidden),  # positive forget bias keeps early memory open
            b_c=tc.zeros(hidden),
            b_o=tc.zeros(hidden),
        )

    @property
    def hidden(self) -> int:
        return self.w_hi.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_xi.shape[1]


class LstmState:
    """Hidden and cell vectors; either [n] or batched [batch, n]."""

    __slots__ = ("h", "c")

    def __init__(self, h: Tensor, c: Tensor):
        if h.shape != c.shape:
            raise ShapeError(f"h {h.shape} and c {c.shape} must match")
        self.h = h
        self.c = c

    @classmethod
    def zero(cls, hidden: int, batch: int | None = None):
        if batch is None:
            return cls(tc.zeros(hidden), tc.zeros(hidden))
        return cls(tc.zeros(batch, hidden), tc.zeros(batch, hidden))


def lstm_step(x_norm: Tensor, prev: LstmState, params: LstmLayerParams) -> LstmState:
    """One LSTM update on a normalized input frame (single or batched).

    Gates read the previous hidden state and the normalized input; the
    output gate additionally reads the fresh cell state elementwise.
    """
    if x_norm.shape[-1] != params.input_dim:
        raise ShapeError(
            f"input dim {x_norm.shape[-1]} does not match weights {params.input_dim}"
        )
    h, c = prev.h, prev.c
    i = tc.sigmoid(tc.add(tc.add(tc.linear(h, params.w_hi), tc.linear(x_norm, params.w_xi)),
                          params.b_i))
    f = tc.sigmoid(tc.add(tc.add(tc.linear(h, params.w_hf), tc.linear(x_norm, params.w_xf)),
                          params.b_f))
    c_new = tc.add(tc.mul(f, c),
                   tc.mul(i, tc.tanh(tc.add(tc.add(tc.linear(h, params.w_hc),
                                                   tc.linear(x_norm, params.w_xc)),
                                            params.b_c))))
    o = tc.sigmoid(tc.add(tc.add(tc.add(tc.linear(h, params.w_ho),
                                        tc.linear(x_norm, params.w_xo)),
                                 tc.mul(params.w_co, c_new)),
                          params.b_o))
    h_new = tc.mul(o, tc.tanh(c_new))
    return LstmState(h_new, c_new)


def _run_direction(batch: SequenceBatch, params: LstmLayerParams, reverse: bool):
    """Unroll one direction over time, freezing state on padded frames.

    The same ``t < length`` mask serves both directions: running backward,
    the state stays at its zero initialization through the padding and
    starts evolving at the utterance's last valid frame.
    """
    b, t_max = batch.batch_size, batch.max_frames
    mask = batch.frame_mask()
    state = LstmState.zero(params.hidden, batch=b)
    outputs: list[Tensor | None] = [None] * t_max
    order = range(t_max - 1, -1, -1) if reverse else range(t_max)
    for t in order:
        x_t = tc.index_axis(batch.features, 1, t)
        new = lstm_step(x_t, state, params)
        m = mask[:, t : t + 1]
        outputs[t] = tc.mul(new.h, Tensor._wrap(m.astype(np.float64)))
        state = LstmState(
            tc.where_mask(m, new.h, state.h),
            tc.where_mask(m, new.c, state.c),
        )
    return outputs


def bilstm_layer(
    batch: SequenceBatch, params_fwd: LstmLayerParams, params_bwd: LstmLayerParams
) -> SequenceBatch:
    """Bidirectional pass; per-frame outputs are [forward, backward] halves.

    Padded frames emit exact zeros in both halves.
    """
    if params_fwd.hidden != params_bwd.hidden:
        raise ShapeError(
            f"direction widths disagree: {params_fwd.hidden} vs {params_bwd.hidden}"
        )
    fwd = _run_direction(batch, params_fwd, reverse=False)
    bwd = _run_direction(batch, params_bwd, reverse=True)
    frames = [tc.concat([fwd[t], bwd[t]], axis=1) for t in range(batch.max_frames)]
    stacked = tc.stack(frames, axis=1)
    return SequenceBatch(stacked, batch.lengths)


class ModelConfig:
    """Shape and variant choices for the full stack."""

    __slots__ = (
        "num_layers", "hidden", "features", "vocab", "variants",
        "dropout", "embed_dim", "attn_dim", "bn_eps", "bn_momentum",
    )

    def __init__(
        self,
        num_layers: int,
        hidden: int,
        features: int,
        vocab: int,
        variants,
        dropout: float = 0.0,
        embed_dim: int = 2,
        attn_dim: int = 2,
        bn_eps: float = 1e-5,
        bn_momentum: float = 0.1,
    ):
        if num_layers < 1:
            raise ContractError(f"need at least one layer, got {num_layers}")
        if not 0.0 <= dropout < 1.0:
            raise ContractError(f"dropout must lie in [0, 1), got {dropout}")
        if isinstance(variants, str):
            variants = [variants] * num_layers
        variants = list(variants)
        if len(variants) != num_layers:
            raise ContractError(
                f"{len(variants)} variants given for {num_layers} layers"
            )
        for v in variants:
            if v not in VARIANTS:
                raise ContractError(f"unknown variant {v!r}; choose from {VARIANTS}")
        if vocab < 2:
            raise ContractError(f"vocabulary must have at least 2 symbols, got {vocab}")
        self.num_layers = num_layers
        self.hidden = hidden
        self.features = features
        self.vocab = vocab
        self.variants = variants
        self.dropout = dropout
        self.embed_dim = embed_dim
        self.attn_dim = attn_dim
        self.bn_eps = bn_eps
        self.bn_momentum = bn_momentum

    def layer_input_dim(self, layer: int) -> int:
        return self.features if layer == 0 else 2 * self.hidden


class Layer:
    """One stack stage: a normalizer (plus optional generator) and a BiLSTM."""

    __slots__ = ("variant", "norm", "gen", "fwd", "bwd")

    def __init__(self, variant, norm, gen, fwd, bwd):
        self.variant = variant
        self.norm = norm
        self.gen = gen
        self.fwd = fwd
        self.bwd = bwd


class Model:
    """Normalized BiLSTM stack with an affine projection to vocabulary logits."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        self.layers: list[Layer] = []
        for l in range(config.num_layers):
            dim = config.layer_input_dim(l)
            variant = config.variants[l]
            norm = BatchNormState.fresh(dim, config.bn_eps, config.bn_momentum)
            if variant == "abn-f":
                gen = FrameAbnGenerator.init(dim, config.embed_dim, rng)
            elif variant == "abn-u":
                gen = UttAbnGenerator.init(dim, config.attn_dim, rng)
            else:
                gen = None
            fwd = LstmLayerParams.init(config.hidden, dim, rng)
            bwd = LstmLayerParams.init(config.hidden, dim, rng)
            self.layers.append(Layer(variant, norm, gen, fwd, bwd))
        out_dim = 2 * config.hidden
        self.w_out = Tensor(rng.normal(0.0, 1.0 / math.sqrt(out_dim),
                                       size=(config.vocab, out_dim)))
        self.b_out = tc.zeros(config.vocab)
        self._registry = self._build_registry()

    def _build_registry(self):
        reg: dict[str, tuple[object, str]] = {}
        for l, layer in enumerate(self.layers):
            if layer.variant == "bn":
                reg[f"layer{l}.bn.gamma"] = (layer.norm, "gamma")
                reg[f"layer{l}.bn.beta"] = (layer.norm, "beta")
            elif layer.variant == "abn-f":
                for field in ("w_embed", "b_embed", "w_gamma", "b_gamma", "w_beta", "b_beta"):
                    reg[f"layer{l}.gen.{field}"] = (layer.gen, field)
            else:
                for field in ("w_key", "w_query", "w_value",
                              "w_gamma", "b_gamma", "w_beta", "b_beta"):
                    reg[f"layer{l}.gen.{field}"] = (layer.gen, field)
            for direction in ("fwd", "bwd"):
                obj = getattr(layer, direction)
                for field in LstmLayerParams.__slots__:
                    reg[f"layer{l}.{direction}.{field}"] = (obj, field)
        reg["out.w"] = (self, "w_out")
        reg["out.b"] = (self, "b_out")
        return reg

    def parameters(self) -> dict[str, Tensor]:
        """Trainable tensors by name, in stable order.

        Layers normalized by a generated variant contribute the generator's
        weights instead of the (unused) learned scale/shift.
        """
        return {name: getattr(obj, attr) for name, (obj, attr) in self._registry.items()}

    def set_parameter(self, name: str, value: Tensor) -> None:
        obj, attr = self._registry[name]
        current = getattr(obj, attr)
        if current.shape != value.shape:
            raise ShapeError(
                f"parameter {name} has shape {current.shape}, got {value.shape}"
            )
        setattr(obj, attr, value)

    def running_stats(self) -> dict[str, Tensor]:
        """Non-trainable normalizer state, for checkpointing."""
        out = {}
        for l, layer in enumerate(self.layers):
            out[f"layer{l}.bn.running_mean"] = layer.norm.running_mean
            out[f"layer{l}.bn.running_var"] = layer.norm.running_var
        return out

    def set_running_stat(self, name: str, value: Tensor) -> None:
        prefix, field = name.rsplit(".", 1)
        l = int(prefix.split(".")[0].removeprefix("layer"))
        norm = self.layers[l].norm
        if getattr(norm, field).shape != value.shape:
            raise ShapeError(f"stat {name} has shape {getattr(norm, field).shape},"
                             f" got {value.shape}")
        setattr(norm, field, value)

    def parameter_count(self) -> dict[str, int]:
        """Per-module and total trainable parameter counts."""
        counts: dict[str, int] = {}
        for name, t in self.parameters().items():
            module = name.split(".")[0] + "." + name.split(".")[1]
            counts[module] = counts.get(module, 0) + t.size
        counts["total"] = sum(t.size for t in self.parameters().values())
        return counts


def stack_forward(
    batch: SequenceBatch,
    model: Model,
    mode: str,
    rng: np.random.Generator | None = None,
) -> SequenceBatch:
    """Run the full stack; returns per-frame vocabulary logits.

    Each layer normalizes its input with its own variant (the generator is
    fed the same standardized activations), runs the BiLSTM, and applies
    dropout to the outputs in train mode. Logits on padded frames carry
    only the projection bias and must not be consumed.
    """
    cfg = model.config
    current = batch
    for layer in model.layers:
        normed = abn_forward(
            current, layer.norm, layer.gen, layer.variant, mode,
            dropout_rate=cfg.dropout, rng=rng,
        )
        out = bilstm_layer(normed, layer.fwd, layer.bwd)
        if cfg.dropout > 0.0 and mode == "train":
            dropped = dropout(out.features, cfg.dropout, rng, mode)
            out = SequenceBatch(dropped, out.lengths)
        current = out
    flat = tc.reshape(
        current.features,
        (batch.batch_size * batch.max_frames, 2 * cfg.hidden),
    )
    logits = tc.affine(flat, model.w_out, model.b_out)
    shaped = tc.reshape(logits, (batch.batch_size, batch.max_frames, cfg.vocab))
    return SequenceBatch(shaped, batch.lengths)
