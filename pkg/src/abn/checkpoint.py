"""Self-describing text checkpoints with lossless float64 roundtrips.

Layout: a version line, the model configuration, then one ``tensor`` or
``stat`` block per array (name, shape, and row-major values printed with
17 significant digits), closed by an ``end`` sentinel that catches
truncation. The blank symbol is index 0 by construction; the header
records that for consumers of decoded outputs.
"""

from __future__ import annotations

import numpy as np

from .errors import CheckpointError, ShapeError
from .recurrent import Model, ModelConfig
from .tensor import Tensor

FORMAT_LINE = "abn-checkpoint v1"

_CONFIG_FIELDS = (
    ("num_layers", int),
    ("hidden", int),
    ("features", int),
    ("vocab", int),
    ("dropout", float),
    ("embed_dim", int),
    ("attn_dim", int),
    ("bn_eps", float),
    ("bn_momentum", float),
)


def _format_values(t: Tensor) -> str:
    return " ".join(f"{v:.17g}" for v in t.values)


def save_checkpoint(model: Model, path: str) -> None:
    cfg = model.config
    lines = [FORMAT_LINE, "# blank symbol index: 0"]
    for name, _ in _CONFIG_FIELDS:
        lines.append(f"config {name} {getattr(cfg, name)}")
    lines.append(f"config variants {','.join(cfg.variants)}")
    for kind, table in (("tensor", model.parameters()), ("stat", model.running_stats())):
        for name, t in table.items():
            dims = " ".join(str(d) for d in t.shape)
            lines.append(f"{kind} {name} {dims}")
            lines.append(_format_values(t))
    lines.append("end")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_array(name: str, dims_text: list[str], values_line: str) -> Tensor:
    try:
        shape = tuple(int(d) for d in dims_text)
    except ValueError:
        raise CheckpointError(f"parameter {name}: malformed shape {dims_text}") from None
    try:
        flat = np.array([float(v) for v in values_line.split()])
    except ValueError:
        raise CheckpointError(f"parameter {name}: non-numeric value") from None
    expected = int(np.prod(shape)) if shape else 1
    if flat.size != expected:
        raise CheckpointError(
            f"parameter {name}: expected {expected} values for shape {shape},"
            f" found {flat.size}"
        )
    return Tensor._wrap(flat.reshape(shape))


def load_checkpoint(path: str, expect_variant: str | None = None) -> Model:
    """Rebuild a model from a checkpoint, bit-exact.

    ``expect_variant`` guards against mixing incompatible parameter sets:
    loading fails loudly if any layer was saved under a different variant.
    """
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != FORMAT_LINE:
        head = lines[0] if lines else "<empty file>"
        raise CheckpointError(f"not a recognized checkpoint (header {head!r})")

    raw_config: dict[str, str] = {}
    arrays: list[tuple[str, str, Tensor]] = []
    saw_end = False
    i = 1
    while i < len(lines):
        line = lines[i]
        i += 1
        if not line or line.startswith("#"):
            continue
        if line == "end":
            saw_end = True
            break
        parts = line.split()
        if parts[0] == "config" and len(parts) >= 3:
            raw_config[parts[1]] = line.split(None, 2)[2]
        elif parts[0] in ("tensor", "stat") and len(parts) >= 2:
            name = parts[1]
            if i >= len(lines):
                raise CheckpointError(f"parameter {name}: values missing (truncated file)")
            arrays.append((parts[0], name, _parse_array(name, parts[2:], lines[i])))
            i += 1
        else:
            raise CheckpointError(f"unrecognized checkpoint line: {line!r}")
    if not saw_end:
        raise CheckpointError("checkpoint truncated: no end marker")

    kwargs = {}
    for name, typ in _CONFIG_FIELDS:
        if name not in raw_config:
            raise CheckpointError(f"checkpoint missing config field {name}")
        try:
            kwargs[name] = typ(raw_config[name])
        except ValueError:
            raise CheckpointError(
                f"config field {name}: cannot parse {raw_config[name]!r}"
            ) from None
    if "variants" not in raw_config:
        raise CheckpointError("checkpoint missing config field variants")
    variants = raw_config["variants"].split(",")
    if expect_variant is not None and any(v != expect_variant for v in variants):
        raise CheckpointError(
            f"checkpoint was saved with variants {variants},"
            f" incompatible with requested {expect_variant!r}"
        )
    config = ModelConfig(variants=variants, **kwargs)
    model = Model(config, np.random.default_rng(0))

    expected_params = set(model.parameters())
    expected_stats = set(model.running_stats())
    seen = set()
    for kind, name, tensor in arrays:
        try:
            if kind == "tensor":
                model.set_parameter(name, tensor)
            else:
                model.set_running_stat(name, tensor)
        except ShapeError as exc:
            raise CheckpointError(f"parameter {name}: {exc}") from None
        except (KeyError, ValueError, IndexError, AttributeError):
            raise CheckpointError(f"parameter {name}: not part of this model") from None
        seen.add(name)
    missing = (expected_params | expected_stats) - seen
    if missing:
        raise CheckpointError(f"parameter {sorted(missing)[0]}: absent from checkpoint")
    return model
