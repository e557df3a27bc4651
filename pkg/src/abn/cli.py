"""Command-line front end: train, eval, decode, and verification tools."""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import sys

import numpy as np

from . import tensor as tc
from .batching import make_batches
from .checkpoint import load_checkpoint
from .config import default_config, load_config
from .ctc import LabelSequence, ctc_brute_force, ctc_loss, greedy_decode
from .errors import AbnError
from .gradcheck import model_gradient_check
from .recurrent import Model, stack_forward
from .synth import sorted_for_batching, synth_generate
from .tensor import Tensor
from .train import evaluate, run_training

GRADCHECK_TOLERANCE = 1e-4
ORACLE_TOLERANCE = 1e-9


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="abn",
        description="Attention-generated batch normalization in a BiLSTM-CTC kernel.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a model on the synthetic task")
    train.add_argument("--config", required=True, help="path to key=value config")
    train.add_argument("--variant", choices=("bn", "abn-f", "abn-u"), default="bn")
    train.add_argument("--seed", type=int, default=None, help="override the config seed")
    train.add_argument("--out-dir", required=True, help="metrics and checkpoint directory")

    ev = sub.add_parser("eval", help="evaluate a checkpoint on the dev split")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--config", required=True)

    dec = sub.add_parser("decode", help="greedy-decode synthetic utterances")
    dec.add_argument("--ckpt", required=True)
    dec.add_argument("--config", default=None, help="task parameters (defaults if omitted)")
    dec.add_argument("--count", type=int, default=5)
    dec.add_argument("--seed", type=int, default=3)

    gc = sub.add_parser("gradcheck", help="finite-difference check of the full stack")
    gc.add_argument("--variant", choices=("bn", "abn-f", "abn-u"), default=None,
                    help="single variant (default: all three)")
    gc.add_argument("--seed", type=int, default=0)

    oracle = sub.add_parser("ctc-oracle", help="CTC loss vs exhaustive enumeration")
    oracle.add_argument("--max-t", type=int, default=6)

    pc = sub.add_parser("param-count", help="per-module parameter counts")
    pc.add_argument("--config", required=True)
    pc.add_argument("--variant", choices=("bn", "abn-f", "abn-u"), default="bn")
    return parser


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    summary = run_training(cfg, args.variant, args.out_dir)
    print(
        f"variant={summary['variant']} epochs={summary['epochs_run']}"
        f" final_dev_loss={summary['final_dev_loss']:.6f}"
        f" final_dev_ter={summary['final_dev_ter']:.4f}"
    )
    return 0


def _cmd_eval(args) -> int:
    cfg = load_config(args.config)
    model = load_checkpoint(args.ckpt)
    dev = sorted_for_batching(synth_generate(cfg.task(), cfg.dev_utterances, seed=2))
    loss, ter = evaluate(model, make_batches(dev, cfg.max_frames_per_batch))
    print(f"dev_loss={loss:.6f} dev_ter={ter:.4f}")
    return 0


def _cmd_decode(args) -> int:
    cfg = load_config(args.config) if args.config else default_config()
    model = load_checkpoint(args.ckpt)
    if model.config.features != cfg.features or model.config.vocab != cfg.vocab:
        print(
            f"error: checkpoint expects features={model.config.features},"
            f" vocab={model.config.vocab}; task has features={cfg.features},"
            f" vocab={cfg.vocab}",
            file=sys.stderr,
        )
        return 1
    utts = synth_generate(cfg.task(), args.count, seed=args.seed)
    batches = make_batches(sorted_for_batching(utts), cfg.max_frames_per_batch)
    for batch in batches:
        logits = stack_forward(batch.features, model, "infer")
        for b, ref in enumerate(batch.labels):
            per_utt = tc.index_axis(logits.features, 0, b)
            valid = tc.rows(per_utt, 0, int(logits.lengths[b]))
            hyp = greedy_decode(valid)
            print(f"ref={' '.join(map(str, ref.tokens))}"
                  f" hyp={' '.join(map(str, hyp.tokens))}")
    return 0


def _cmd_gradcheck(args) -> int:
    variants = (args.variant,) if args.variant else ("bn", "abn-f", "abn-u")
    worst = 0.0
    for variant in variants:
        err = model_gradient_check(variant, seed=args.seed)
        print(f"{variant}: max relative error {err:.3e}")
        worst = max(worst, err)
    print(f"max relative error {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:.0e})")
    return 0 if worst < GRADCHECK_TOLERANCE else 1


def _all_labels(vocab: int, max_len: int):
    for length in range(max_len + 1):
        yield from (
            LabelSequence(list(c))
            for c in itertools.product(range(1, vocab), repeat=length)
        )


def _cmd_ctc_oracle(args) -> int:
    worst = 0.0
    cases = 0
    for vocab in (2, 3):
        rng = np.random.default_rng(1000 + vocab)
        for t_frames in range(1, args.max_t + 1):
            for labels in _all_labels(vocab, 3):
                logits = rng.normal(size=(t_frames, vocab))
                y_log = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
                expect = ctc_brute_force(y_log, labels)
                got = ctc_loss(Tensor(logits), labels).item()
                cases += 1
                if np.isinf(expect) or np.isinf(got):
                    if expect != got:
                        print(f"FAIL: T={t_frames} labels={labels.tokens}:"
                              f" {got} vs {expect}")
                        return 1
                    continue
                worst = max(worst, abs(got - expect))
    ok = worst <= ORACLE_TOLERANCE
    print(f"{'PASS' if ok else 'FAIL'}: {cases} cases,"
          f" max abs deviation {worst:.3e} (tolerance {ORACLE_TOLERANCE:.0e})")
    return 0 if ok else 1


def _cmd_param_count(args) -> int:
    cfg = load_config(args.config)
    model = Model(cfg.model_config(args.variant), np.random.default_rng(0))
    counts = model.parameter_count()
    total = counts.pop("total")
    for module, count in counts.items():
        print(f"{module:<16} {count}")
    print(f"{'total':<16} {total}")
    return 0


def cli(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "eval": _cmd_eval,
        "decode": _cmd_decode,
        "gradcheck": _cmd_gradcheck,
        "ctc-oracle": _cmd_ctc_oracle,
        "param-count": _cmd_param_count,
    }
    try:
        return handlers[args.command](args)
    except AbnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
