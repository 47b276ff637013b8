"""Timing harness for the scoring kernels.

Generates synthetic-but-valid records, times sketch building plus scoring
(generation excluded), and fits a log-log slope of runtime against the swept
dimension. The engine's cost model is linear in the training count and in
the restricted-vocabulary size at fixed everything else, so fitted exponents
near 1 are the expected outcome.

Measurement discipline: one discarded warmup run settles allocator and BLAS
state, and repeats are interleaved round-robin across the swept sizes so a
transient slowdown on the host inflates every size equally instead of
skewing the fit. Each size reports its fastest repeat.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .synth import random_records
from .valuation import run_valuation


@dataclass
class BenchPoint:
    size: int
    seconds: float
    pairs: int

    @property
    def pairs_per_second(self) -> float:
        return self.pairs / self.seconds if self.seconds > 0 else float("inf")


@dataclass
class BenchReport:
    swept: str
    points: list[BenchPoint] = field(default_factory=list)

    def exponent(self) -> float:
        """Least-squares slope of ln(seconds) against ln(size)."""
        if len(self.points) < 2:
            raise ValueError("need at least two sizes to fit an exponent")
        x = np.log([p.size for p in self.points])
        y = np.log([p.seconds for p in self.points])
        return float(np.polyfit(x, y, 1)[0])


def _score_once(train, val, threads: int, batch_size: int) -> float:
    start = time.perf_counter()
    run_valuation(
        train, val, batch_size=batch_size, vocab_mode="dataset", path="sketch", threads=threads
    )
    return time.perf_counter() - start


def timed_run(
    n_train: int,
    n_val: int,
    seq_len: int,
    dim: int,
    vocab_size: int,
    *,
    seed: int = 0,
    threads: int = 1,
    batch_size: int = 256,
    repeats: int = 3,
) -> BenchPoint:
    """Best-of-`repeats` wall time for scoring n_val x n_train pairs."""
    train = random_records(seed, n_train, seq_len, dim, vocab_size, role="training", id_prefix="t")
    val = random_records(seed + 1, n_val, seq_len, dim, vocab_size, role="valuation", id_prefix="v")
    best = min(_score_once(train, val, threads, batch_size) for _ in range(max(1, repeats)))
    return BenchPoint(size=n_train, seconds=best, pairs=n_train * n_val)


def _sweep(
    configs: list[tuple[int, int]],  # (swept size, n_train) pairs
    vocab_of: dict[int, int],
    *,
    n_val: int,
    seq_len: int,
    dim: int,
    seed: int,
    threads: int,
    batch_size: int,
    repeats: int,
    swept: str,
) -> BenchReport:
    datasets = {}
    for size, n_train in configs:
        p = vocab_of[size]
        datasets[size] = (
            random_records(seed, n_train, seq_len, dim, p, role="training", id_prefix="t"),
            random_records(seed + 1, n_val, seq_len, dim, p, role="valuation", id_prefix="v"),
        )
    # warmup on the largest configuration, discarded
    big = max(datasets)
    _score_once(*datasets[big], threads, batch_size)

    best = {size: float("inf") for size, _ in configs}
    for _ in range(max(1, repeats)):
        for size, _ in configs:
            t = _score_once(*datasets[size], threads, batch_size)
            best[size] = min(best[size], t)
    report = BenchReport(swept=swept)
    for size, n_train in configs:
        report.points.append(BenchPoint(size=size, seconds=best[size], pairs=n_train * n_val))
    return report


def scaling_in_n(
    ns: list[int],
    *,
    n_val: int = 16,
    seq_len: int = 16,
    dim: int = 32,
    vocab_size: int = 256,
    seed: int = 0,
    threads: int = 1,
    batch_size: int = 256,
    repeats: int = 3,
) -> BenchReport:
    return _sweep(
        [(n, n) for n in ns],
        {n: vocab_size for n in ns},
        n_val=n_val,
        seq_len=seq_len,
        dim=dim,
        seed=seed,
        threads=threads,
        batch_size=batch_size,
        repeats=repeats,
        swept="n",
    )


def scaling_in_vocab(
    vocab_sizes: list[int],
    *,
    n_train: int = 500,
    n_val: int = 16,
    seq_len: int = 16,
    dim: int = 32,
    seed: int = 0,
    threads: int = 1,
    batch_size: int = 256,
    repeats: int = 3,
) -> BenchReport:
    return _sweep(
        [(p, n_train) for p in vocab_sizes],
        {p: p for p in vocab_sizes},
        n_val=n_val,
        seq_len=seq_len,
        dim=dim,
        seed=seed,
        threads=threads,
        batch_size=batch_size,
        repeats=repeats,
        swept="vocab",
    )
