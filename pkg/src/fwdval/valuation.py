"""Influence scoring between valuation and training samples.

Two equivalent computation paths are kept side by side:

* ``score_pairwise`` evaluates the double sum over position pairs,
  alpha(k, k') * <h_v[k], h_i[k']>, where alpha is the inner product of the
  two positions' prediction-error vectors over the scoring vocabulary.
* ``score_sketch`` evaluates the same quantity as the Frobenius inner
  product of the two records' sketch matrices.

``run_valuation`` drives batched scoring over dumps, with three vocabulary
modes. In ``batch_union`` mode the scoring vocabulary of a valuation record
is the union of every training record's targets plus its own, so the result
is independent of how the training stream is split into batches; batch size
is purely a memory/parallelism knob. ``dataset`` scores everything over V_D,
and ``full_if_available`` additionally requires V_D to span the declared
global vocabulary (exact full-vocabulary scoring, as with oracle exports).

Scores are reported raw; a length-normalized variant (dividing by T_v * T_i)
sits behind an off-by-default flag because length bias is a practical
concern even though ranking raw values is the reference behavior.
"""

from __future__ import annotations

import io
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import dumpio
from .records import RestrictedVocab, SampleRecord, ScoreTable, Sketch
from .sketch import error_matrix, sketch_matrix

VOCAB_MODES = ("batch_union", "dataset", "full_if_available")
PATHS = ("auto", "pairwise", "sketch")

# Fixed valuation-chunk width for threaded scoring: every (chunk, batch) task
# has a shape independent of the worker count, so outputs are bit-identical
# for any --threads value.
_VAL_CHUNK = 32


class ValuationError(ValueError):
    """Incompatible inputs to the scoring engine."""


def score_pairwise(v: SampleRecord, i: SampleRecord, vocab: RestrictedVocab) -> float:
    """Double-sum score: sum_{k,k'} <err_v[k], err_i[k']> * <h_v[k], h_i[k']>."""
    if v.dim != i.dim:
        raise ValuationError(f"dimension mismatch: d={v.dim} vs d={i.dim}")
    ev = error_matrix(v, vocab)
    ei = error_matrix(i, vocab)
    alpha = ev @ ei.T
    hh = v.hidden.astype(np.float64) @ i.hidden.astype(np.float64).T
    return float(np.sum(alpha * hh))


def score_sketch(mv: Sketch, mi: Sketch) -> float:
    """Frobenius inner product of two sketches over the same vocabulary."""
    if mv.vocab != mi.vocab:
        raise ValuationError("vocab mismatch between sketches")
    if mv.dim != mi.dim:
        raise ValuationError(f"dimension mismatch: d={mv.dim} vs d={mi.dim}")
    return float(np.dot(mv.m.ravel(), mi.m.ravel()))


def restriction_bound(v: SampleRecord, i: SampleRecord, vocab: RestrictedVocab) -> float:
    """Upper bound on |score over `vocab` - score over the full vocabulary|.

    Dropping a token z from the vocabulary removes the cross term
    p_v(z) * p_i(z) from each alpha(k, k'); summed over the dropped tokens
    that is at most min(r_v[k], r_i[k']) with r the probability mass outside
    `vocab`. Requires both records' targets to be inside `vocab` (the
    indicator contributions must not be dropped).
    """
    for rec in (v, i):
        if not all(int(t) in vocab for t in rec.targets):
            raise ValuationError(f"restriction bound requires targets of {rec.id} inside the vocabulary")
    rv = _residual_outside(v, vocab)
    ri = _residual_outside(i, vocab)
    hh = np.abs(v.hidden.astype(np.float64) @ i.hidden.astype(np.float64).T)
    return float(np.sum(np.minimum.outer(rv, ri) * hh))


def _residual_outside(rec: SampleRecord, vocab: RestrictedVocab) -> np.ndarray:
    """Per-position probability mass outside `vocab` (float64, clipped at 0)."""
    cols = rec.vocab.locals_of(vocab.tokens)
    total = rec.probs.sum(axis=1, dtype=np.float64)
    inside = rec.probs[:, cols].sum(axis=1, dtype=np.float64)
    r = rec.residual_mass.astype(np.float64) + (total - inside)
    return np.maximum(r, 0.0)


# ---------------------------------------------------------------------------
# Batched scoring over dumps; sources are dump directories, record lists, or
# single records.


def _load_source(src) -> tuple[RestrictedVocab, list[SampleRecord]]:
    """Normalize a dump directory / record list / single record to memory."""
    if isinstance(src, (str, Path)):
        manifest, records = dumpio.load_records(src)
        return manifest.vocab(), records
    if isinstance(src, SampleRecord):
        return src.vocab, [src]
    records = list(src)
    if not records:
        return RestrictedVocab([]), []
    vocab = records[0].vocab
    for rec in records[1:]:
        if rec.vocab != vocab:
            raise ValuationError("records in one source must share a vocabulary")
    return vocab, records


def _train_stream(src, batch_size: int) -> Iterator[list[SampleRecord]]:
    """Yield training records in batches; directories stream from disk."""
    if isinstance(src, (str, Path)):
        _, stream = dumpio.read_dump(src)
        batch: list[SampleRecord] = []
        for rec in stream:
            batch.append(rec)
            if len(batch) == batch_size:
                yield batch
                batch = []
        if batch:
            yield batch
        return
    records = [src] if isinstance(src, SampleRecord) else list(src)
    for start in range(0, len(records), batch_size):
        yield records[start : start + batch_size]


def _train_meta(src) -> tuple[RestrictedVocab, list[str], set[int], int]:
    """One cheap pass over training: vocab, ids in order, target union, dim."""
    if isinstance(src, (str, Path)):
        manifest, stream = dumpio.read_dump(src)
        ids: list[str] = []
        union: set[int] = set()
        for rec in stream:
            ids.append(rec.id)
            union |= rec.target_set()
        return manifest.vocab(), ids, union, manifest.embedding_dim
    vocab, records = _load_source(src)
    ids = [r.id for r in records]
    union: set[int] = set()
    for r in records:
        union |= r.target_set()
    dim = records[0].dim if records else 0
    return vocab, ids, union, dim


def run_valuation(
    train,
    valuation,
    *,
    batch_size: int = 256,
    vocab_mode: str = "batch_union",
    path: str = "auto",
    threads: int = 1,
    normalize: bool = False,
) -> ScoreTable:
    """Score every valuation record against every training record.

    `train` and `valuation` each accept a dump directory, a record list, or
    a single record. Scores are invariant to batch_size and to the path
    flag; table rows preserve the input order of both sides.
    """
    if vocab_mode not in VOCAB_MODES:
        raise ValuationError(f"unknown vocab_mode: {vocab_mode}")
    if path not in PATHS:
        raise ValuationError(f"unknown path: {path}")
    if batch_size < 1:
        raise ValuationError("batch_size must be positive")

    train_vocab, train_ids, train_union, train_dim = _train_meta(train)
    val_vocab, val_records = _load_source(valuation)
    if not train_ids:
        raise ValuationError("empty training set")
    if not val_records:
        raise ValuationError("empty valuation set")
    if val_vocab != train_vocab:
        raise ValuationError("incompatible dumps: restricted vocabularies differ")
    val_dim = val_records[0].dim
    if train_dim != val_dim:
        raise ValuationError(f"incompatible dumps: d={train_dim} (training) vs d={val_dim} (valuation)")

    if vocab_mode == "full_if_available":
        manifest_global = None
        if isinstance(train, (str, Path)):
            manifest_global = dumpio.read_manifest(train).global_vocab_size
        if manifest_global is None or manifest_global != len(train_vocab):
            raise ValuationError(
                "full vocabulary unavailable: dump's restricted vocabulary does not span a declared global vocabulary"
            )

    n_v, n_t = len(val_records), len(train_ids)
    # auto: a record's sketch pays off as soon as it serves a second pair.
    use_sketch = path == "sketch" or (path == "auto" and n_v * n_t >= 2)
    scores = np.zeros((n_v, n_t), dtype=np.float64)

    if vocab_mode in ("dataset", "full_if_available"):
        row_vocabs = [train_vocab] * n_v
    else:
        row_vocabs = [
            RestrictedVocab.from_tokens(train_union | v.target_set()) for v in val_records
        ]

    if use_sketch:
        _score_sketch_path(scores, val_records, row_vocabs, train, train_vocab, batch_size, threads)
    else:
        _score_pairwise_path(scores, val_records, row_vocabs, train, batch_size, threads)

    if normalize:
        t_v = np.array([r.length for r in val_records], dtype=np.float64)
        t_i = np.array(_train_lengths(train), dtype=np.float64)
        scores /= np.outer(t_v, t_i)

    return ScoreTable(
        valuation_ids=tuple(r.id for r in val_records),
        training_ids=tuple(train_ids),
        scores=scores,
    )


def _train_lengths(src) -> list[int]:
    lengths: list[int] = []
    for batch in _train_stream(src, 256):
        lengths.extend(r.length for r in batch)
    return lengths


def _sketches_flat(records: list[SampleRecord], vocab: RestrictedVocab) -> np.ndarray:
    """(B, |vocab|*d) float64 sketch stack for records dense over `vocab`.

    Groups records of equal length so each group is one batched matrix
    product; avoids per-record Python overhead on large runs.
    """
    P, d = len(vocab), records[0].dim
    out = np.empty((len(records), P * d), dtype=np.float64)
    groups: dict[int, list[int]] = {}
    for j, rec in enumerate(records):
        if rec.vocab != vocab:
            raise ValuationError(f"sample {rec.id}: probs are dense over a different vocabulary")
        groups.setdefault(rec.length, []).append(j)
    for T, idxs in sorted(groups.items()):
        err = -np.stack([records[j].probs for j in idxs]).astype(np.float64)  # (B, T, P)
        hidden = np.stack([records[j].hidden for j in idxs]).astype(np.float64)  # (B, T, d)
        targets = np.stack([records[j].targets for j in idxs])
        locs = vocab.locals_of(targets.ravel()).reshape(targets.shape)
        b_idx = np.repeat(np.arange(len(idxs)), T)
        t_idx = np.tile(np.arange(T), len(idxs))
        err[b_idx, t_idx, locs.ravel()] += 1.0
        m = np.matmul(err.transpose(0, 2, 1), hidden)  # (B, P, d)
        out[idxs] = m.reshape(len(idxs), P * d)
    return out


def _score_sketch_path(scores, val_records, row_vocabs, train, train_vocab, batch_size, threads):
    """Sketch path: per-record sketches over V_D, rows gathered per valuation vocab."""
    shared = all(v == row_vocabs[0] for v in row_vocabs)
    if shared and row_vocabs[0] == train_vocab:
        # Fast path: one flat gemm per (valuation chunk, training batch).
        vmat = _sketches_flat(val_records, train_vocab)
        col = 0
        pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
        try:
            for batch in _train_stream(train, batch_size):
                bmat = _sketches_flat(batch, train_vocab)
                spans = [(s, min(s + _VAL_CHUNK, vmat.shape[0])) for s in range(0, vmat.shape[0], _VAL_CHUNK)]

                def task(span, col=col, bmat=bmat):
                    a, b = span
                    scores[a:b, col : col + bmat.shape[0]] = vmat[a:b] @ bmat.T

                if pool is None:
                    for span in spans:
                        task(span)
                else:
                    list(pool.map(task, spans))
                col += len(batch)
        finally:
            if pool is not None:
                pool.shutdown()
        return

    # General path: per-valuation-row vocabularies. Sketch rows depend only on
    # their token, so a batch sketch over V_D row-gathers to any sub-vocab.
    val_sketches = [sketch_matrix(r, vb).ravel() for r, vb in zip(val_records, row_vocabs)]
    selectors = [train_vocab.locals_of(vb.tokens) for vb in row_vocabs]
    P, d = len(train_vocab), val_records[0].dim
    col = 0
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for batch in _train_stream(train, batch_size):
            bten = _sketches_flat(batch, train_vocab).reshape(len(batch), P, d)

            def task(vi, col=col, bten=bten):
                sub = bten[:, selectors[vi], :].reshape(bten.shape[0], -1)
                scores[vi, col : col + bten.shape[0]] = sub @ val_sketches[vi]

            if pool is None:
                for vi in range(len(val_records)):
                    task(vi)
            else:
                list(pool.map(task, range(len(val_records))))
            col += len(batch)
    finally:
        if pool is not None:
            pool.shutdown()


def _score_pairwise_path(scores, val_records, row_vocabs, train, batch_size, threads):
    col = 0
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for batch in _train_stream(train, batch_size):
            def task(vi, col=col, batch=batch):
                v = val_records[vi]
                for j, rec in enumerate(batch):
                    scores[vi, col + j] = score_pairwise(v, rec, row_vocabs[vi])

            if pool is None:
                for vi in range(len(val_records)):
                    task(vi)
            else:
                list(pool.map(task, range(len(val_records))))
            col += len(batch)
    finally:
        if pool is not None:
            pool.shutdown()


# ---------------------------------------------------------------------------
# Aggregation, ranking, serialization


def group_value(table: ScoreTable, valuation_ids: Sequence[str]) -> np.ndarray:
    """Mean of the selected valuation rows, one value per training id."""
    ids = list(valuation_ids)
    if not ids:
        raise ValuationError("group_value requires a non-empty valuation subset")
    rows = [table.row(v) for v in ids]
    return np.mean(rows, axis=0)


def rank(table: ScoreTable, valuation_id: str) -> list[tuple[str, float]]:
    """Training ids by descending score; ties broken by ascending id."""
    row = table.row(valuation_id)
    tids = np.array(table.training_ids)
    order = np.lexsort((tids, -row))
    return [(str(tids[j]), float(row[j])) for j in order]


def write_scores_csv(table: ScoreTable, path: str | Path) -> None:
    """CSV contract: header + rows sorted by (valuation_id, rank).

    Scores are printed as the shortest decimal that round-trips the 64-bit
    value, so identical tables diff as identical files on any platform.
    """
    with open(path, "w", newline="") as f:
        _write_scores(table, f)


def scores_csv_text(table: ScoreTable) -> str:
    buf = io.StringIO()
    _write_scores(table, buf)
    return buf.getvalue()


def _write_scores(table: ScoreTable, f) -> None:
    f.write("valuation_id,training_id,score\n")
    for vid in sorted(table.valuation_ids):
        for tid, score in rank(table, vid):
            f.write(f"{vid},{tid},{score!r}\n")


def read_scores_csv(path: str | Path) -> ScoreTable:
    """Rebuild a ScoreTable from the CSV contract (any row order)."""
    by_vid: dict[str, dict[str, float]] = {}
    with open(path, newline="") as f:
        header = f.readline().strip()
        if header != "valuation_id,training_id,score":
            raise ValuationError(f"unexpected scores CSV header: {header!r}")
        for line in f:
            line = line.strip()
            if not line:
                continue
            vid, tid, score = line.split(",")
            by_vid.setdefault(vid, {})[tid] = float(score)
    if not by_vid:
        raise ValuationError("empty scores CSV")
    vids = sorted(by_vid)
    tids = sorted(next(iter(by_vid.values())))
    for vid, row in by_vid.items():
        if sorted(row) != tids:
            raise ValuationError(f"scores CSV rows disagree on training ids (valuation {vid})")
    scores = np.array([[by_vid[v][t] for t in tids] for v in vids], dtype=np.float64)
    return ScoreTable(valuation_ids=tuple(vids), training_ids=tuple(tids), scores=scores)


def emb_score(v: SampleRecord, i: SampleRecord) -> float:
    """Baseline score with every alpha forced to 1: <sum_k h_v[k], sum_k h_i[k]>."""
    if v.dim != i.dim:
        raise ValuationError(f"dimension mismatch: d={v.dim} vs d={i.dim}")
    hv = v.hidden.astype(np.float64).sum(axis=0)
    hi = i.hidden.astype(np.float64).sum(axis=0)
    return float(np.dot(hv, hi))


def run_emb_baseline(train, valuation) -> ScoreTable:
    """Embedding-sum baseline over the same sources run_valuation accepts."""
    _, train_records = _load_source(train)
    _, val_records = _load_source(valuation)
    if not train_records:
        raise ValuationError("empty training set")
    sums_t = np.stack([r.hidden.astype(np.float64).sum(axis=0) for r in train_records])
    sums_v = np.stack([r.hidden.astype(np.float64).sum(axis=0) for r in val_records])
    return ScoreTable(
        valuation_ids=tuple(r.id for r in val_records),
        training_ids=tuple(r.id for r in train_records),
        scores=sums_v @ sums_t.T,
    )
