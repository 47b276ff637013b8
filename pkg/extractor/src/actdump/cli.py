"""Command line: `actdump vocab` and `actdump extract`."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .backends import CausalLMBackend, FreeEmbeddingBackend
from .dataset import DatasetError, read_dataset
from .extract import ExtractError, build_vocab_pass, extract_dataset


def _load_tokenizer_config(path: str | None):
    if path is None:
        return None
    with open(path) as f:
        return json.load(f)


def _make_backend(args):
    if args.backend == "free-embedding":
        return FreeEmbeddingBackend(vocab_size=args.vocab_size, dim=args.dim, seed=args.seed)
    if args.backend == "gpt2-random":
        return CausalLMBackend.random_gpt2(
            vocab_size=args.vocab_size, dim=args.dim, layers=args.layers, heads=args.heads,
            seed=args.seed, device=args.device,
        )
    if args.backend == "hf":
        import torch
        from transformers import AutoModelForCausalLM

        torch.manual_seed(args.seed)
        model = AutoModelForCausalLM.from_pretrained(args.model)
        return CausalLMBackend(model, device=args.device)
    raise ExtractError(f"unknown backend: {args.backend}")


def cmd_vocab(args) -> int:
    items = read_dataset(args.dataset, _load_tokenizer_config(args.tokenizer_config))
    vocab = build_vocab_pass(items)
    print(f"{len(vocab)} tokens")
    print(" ".join(str(t) for t in vocab))
    return 0


def cmd_extract(args) -> int:
    items = read_dataset(args.dataset, _load_tokenizer_config(args.tokenizer_config))
    backend = _make_backend(args)
    tdir, vdir = extract_dataset(
        items, backend, args.train_dir, args.valid_dir, batch_size=args.batch_size
    )
    print(f"training dump:  {tdir}")
    print(f"valuation dump: {vdir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="actdump", description=__doc__)
    parser.add_argument("--tokenizer-config", default=None, help="JSON tokenizer config for *_text items")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("vocab", help="print the dataset-restricted vocabulary")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_vocab)

    p = sub.add_parser("extract", help="two-pass extraction into dump directories")
    p.add_argument("dataset")
    p.add_argument("--train-dir", required=True)
    p.add_argument("--valid-dir", required=True)
    p.add_argument("--backend", choices=["free-embedding", "gpt2-random", "hf"], default="free-embedding")
    p.add_argument("--model", default=None, help="model name/path for --backend hf")
    p.add_argument("--vocab-size", type=int, default=128)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--device", default="cpu")
    p.add_argument("--batch-size", type=int, default=16)
    p.set_defaults(func=cmd_extract)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (DatasetError, ExtractError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
