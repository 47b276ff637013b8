"""Command-line surface: validate, score, rank, eval, detect, toy-verify, bench.

Exit codes are a stable scripting contract: 0 success, 1 domain failure
(bad data, unknown ids, failed verification), 2 environment or I/O failure
(unreadable directories, missing files). All numeric output uses shortest
round-trip decimal formatting so CSV diffs are meaningful across platforms.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import bench as benchmod
from . import verify as verifymod
from .dumpio import DumpError, parse_record, read_manifest
from .metrics import MetricError, evaluate
from .records import validate_record
from .valuation import (
    ValuationError,
    group_value,
    rank,
    read_scores_csv,
    run_valuation,
    write_scores_csv,
)

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_ENV = 2


def cmd_validate(args) -> int:
    try:
        manifest = read_manifest(args.dump_dir)
    except (FileNotFoundError, OSError, DumpError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ENV
    vocab = manifest.vocab()
    base = Path(args.dump_dir)
    bad = 0
    for entry in manifest.samples:
        path = base / entry.file
        problems: list[str] = []
        if not path.is_file():
            problems.append(f"missing file {entry.file}")
        else:
            data = path.read_bytes()
            if len(data) != entry.byte_length:
                problems.append(f"truncated: expected {entry.byte_length}, got {len(data)}")
            else:
                try:
                    rec = parse_record(data, vocab, entry=entry)
                except DumpError as e:
                    problems.append(str(e))
                else:
                    problems.extend(validate_record(rec, vocab).violations)
        if problems:
            bad += 1
            for p in problems:
                print(f"{entry.id}: {p}")
    if bad:
        print(f"{bad} of {len(manifest.samples)} samples invalid")
        return EXIT_DOMAIN
    print(f"{len(manifest.samples)} samples valid")
    return EXIT_OK


def cmd_score(args) -> int:
    for d in (args.train_dir, args.valid_dir):
        if not (Path(d) / "manifest.json").is_file():
            print(f"error: no manifest.json in {d}", file=sys.stderr)
            return EXIT_ENV
    start = time.perf_counter()
    table = run_valuation(
        args.train_dir,
        args.valid_dir,
        batch_size=args.batch_size,
        vocab_mode=args.vocab_mode,
        path=args.path,
        threads=args.threads,
        normalize=args.length_normalize,
    )
    elapsed = time.perf_counter() - start
    write_scores_csv(table, args.out)
    pairs = len(table.valuation_ids) * len(table.training_ids)
    rate = pairs / elapsed if elapsed > 0 else float("inf")
    print(f"scored {pairs} pairs in {elapsed:.3f} s ({rate:.1f} pairs/s) -> {args.out}")
    return EXIT_OK


def cmd_rank(args) -> int:
    table = read_scores_csv(args.scores_csv)
    try:
        ranked = rank(table, args.valuation_id)
    except KeyError as e:
        print(f"error: {e.args[0]}", file=sys.stderr)
        return EXIT_DOMAIN
    top = ranked[: args.top_k] if args.top_k else ranked
    for pos, (tid, score) in enumerate(top, start=1):
        print(f"{pos}\t{tid}\t{score!r}")
    return EXIT_OK


def _read_labels(path: str) -> tuple[dict[str, str], dict[str, bool]]:
    labels: dict[str, str] = {}
    clean: dict[str, bool] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        if len(parts) < 2:
            raise MetricError(f"labels line needs at least id and class: {raw!r}")
        labels[parts[0]] = parts[1]
        if len(parts) >= 3:
            clean[parts[0]] = parts[2] not in ("0", "false", "False")
    return labels, clean


def cmd_eval(args) -> int:
    if not Path(args.labels_file).is_file():
        print(f"error: labels file not found: {args.labels_file}", file=sys.stderr)
        return EXIT_ENV
    table = read_scores_csv(args.scores_csv)
    labels, clean = _read_labels(args.labels_file)
    report = evaluate(table, labels, mode=args.mode, clean_flags=clean if args.mode == "mislabel" else None)
    sys.stdout.write(report.to_text())
    print(f"AUC    {report.mean_auc:.4f} ± {report.std_auc:.4f} (n={report.n_valuation})")
    print(f"Recall {report.mean_recall:.4f} ± {report.std_recall:.4f} (n={report.n_valuation})")
    return EXIT_OK


def cmd_detect(args) -> int:
    table = read_scores_csv(args.scores_csv)
    values = group_value(table, list(table.valuation_ids))
    tids = np.array(table.training_ids)
    if args.threshold_mode == "bottom-fraction":
        if not 0.0 < args.param < 1.0:
            print("error: bottom-fraction must be in (0, 1)", file=sys.stderr)
            return EXIT_DOMAIN
        k = int(len(tids) * args.param)
        order = np.lexsort((tids, values))
        flagged = order[:k]
    else:
        flagged = np.nonzero(values < args.param)[0]
        flagged = flagged[np.lexsort((tids[flagged], values[flagged]))]
    for j in flagged:
        print(f"{tids[j]}\t{float(values[j])!r}")
    print(f"flagged {len(flagged)} of {len(tids)} training samples", file=sys.stderr)
    return EXIT_OK


def cmd_toy_verify(args) -> int:
    results = verifymod.run_battery(
        seed=args.seed,
        vocab_size=args.vocab_size,
        dim=args.dim,
        n_train=args.n_train,
        n_val=args.n_val,
        inject_fault=args.inject_fault,
    )
    failed = 0
    for r in results:
        status = "PASS" if r.ok else "FAIL"
        extra = f" {r.detail}" if r.detail else ""
        print(f"{status} {r.name}: residual={r.residual!r} tol={r.tolerance!r}{extra}")
        failed += 0 if r.ok else 1
    if failed:
        print(f"{failed} of {len(results)} properties failed")
        return EXIT_DOMAIN
    print(f"all {len(results)} properties passed")
    return EXIT_OK


def cmd_bench(args) -> int:
    failed = False
    ns = [int(x) for x in args.n.split(",")]
    report = benchmod.scaling_in_n(
        ns,
        n_val=args.n_val,
        seq_len=args.seq_len,
        dim=args.dim,
        vocab_size=args.vocab,
        threads=args.threads,
        repeats=args.repeats,
    )
    for p in report.points:
        print(f"n={p.size}\t{p.seconds:.4f} s\t{p.pairs_per_second:.1f} pairs/s")
    if len(report.points) >= 2:
        exp = report.exponent()
        print(f"exponent(time vs n) = {exp:.3f}")
        if args.check_scaling:
            in_band = 0.9 <= exp <= 1.3
            failed |= not in_band
            print(f"scaling in n: {'within' if in_band else 'OUTSIDE'} expected [0.9, 1.3]")
    if args.vocab_list:
        vocabs = [int(x) for x in args.vocab_list.split(",")]
        vreport = benchmod.scaling_in_vocab(
            vocabs,
            n_train=ns[-1],
            n_val=args.n_val,
            seq_len=args.seq_len,
            dim=args.dim,
            threads=args.threads,
            repeats=args.repeats,
        )
        for p in vreport.points:
            print(f"vocab={p.size}\t{p.seconds:.4f} s\t{p.pairs_per_second:.1f} pairs/s")
        if len(vreport.points) >= 2:
            vexp = vreport.exponent()
            print(f"exponent(time vs vocab) = {vexp:.3f}")
            if args.check_scaling:
                in_band = 0.8 <= vexp <= 1.4
                failed |= not in_band
                print(f"scaling in vocab: {'within' if in_band else 'OUTSIDE'} expected [0.8, 1.4]")
    return EXIT_DOMAIN if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fwdval", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check every sample of a dump directory")
    p.add_argument("dump_dir")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("score", help="score a valuation dump against a training dump")
    p.add_argument("train_dir")
    p.add_argument("valid_dir")
    p.add_argument("--out", required=True, help="output scores CSV path")
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--vocab-mode", choices=["batch_union", "dataset", "full_if_available"], default="batch_union")
    p.add_argument("--path", choices=["auto", "pairwise", "sketch"], default="auto")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--length-normalize", action="store_true")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("rank", help="top training samples for one valuation id")
    p.add_argument("scores_csv")
    p.add_argument("valuation_id")
    p.add_argument("--top-k", type=int, default=0, help="0 = all")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("eval", help="AUC/Recall of a scores CSV against class labels")
    p.add_argument("scores_csv")
    p.add_argument("labels_file", help="lines of: id class [clean 0/1]")
    p.add_argument("--mode", choices=["influence", "mislabel"], default="influence")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("detect", help="flag low-valued training samples")
    p.add_argument("scores_csv")
    p.add_argument("--threshold-mode", choices=["bottom-fraction", "value"], default="bottom-fraction")
    p.add_argument("--param", type=float, required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("toy-verify", help="run the exact-oracle property battery")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vocab-size", type=int, default=20)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--n-train", type=int, default=12)
    p.add_argument("--n-val", type=int, default=4)
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_toy_verify)

    p = sub.add_parser("bench", help="time the scoring kernels and fit scaling exponents")
    p.add_argument("--n", default="250,500,1000", help="comma-separated training counts")
    p.add_argument("--n-val", type=int, default=16)
    p.add_argument("--seq-len", type=int, default=16)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--vocab", type=int, default=256)
    p.add_argument("--vocab-list", default="", help="comma-separated vocab sizes for the second sweep")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument(
        "--check-scaling",
        action="store_true",
        help="exit 1 unless fitted exponents land in the near-linear bands",
    )
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ENV
    except (DumpError, ValuationError, MetricError, KeyError, ValueError) as e:
        msg = e.args[0] if e.args else e
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
