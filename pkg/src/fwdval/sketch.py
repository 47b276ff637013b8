"""Prediction-error vectors and per-sample sketch matrices.

The sketch of a record over a vocabulary is m = sum_k err_k (outer) hidden_k
with err_k[z] = 1[z = target_k] - p(z | prefix) restricted to the vocabulary.
Two records' pair score is the Frobenius inner product of their sketches, so
the sketch is the reusable factored carrier of the whole engine.

Sketches are built over a caller-chosen vocabulary: the per-valuation union
vocabulary for production scoring, the dataset vocabulary (or the full model
vocabulary, when available) for verification. One code path serves both,
parameterized by RestrictedVocab.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .records import RecordError, RestrictedVocab, SampleRecord, Sketch


@dataclass(frozen=True, eq=False)
class ErrorRow:
    """One position's restricted prediction-error vector e_target - p."""

    vocab: RestrictedVocab
    values: np.ndarray  # (|vocab|,) float64

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)


def batch_vocab(records: list[SampleRecord], valuation: SampleRecord) -> RestrictedVocab:
    """Union of the batch's and the valuation sample's target-token sets."""
    tokens: set[int] = set(valuation.target_set())
    for rec in records:
        tokens |= rec.target_set()
    return RestrictedVocab.from_tokens(tokens)


def _columns(rec: SampleRecord, vocab: RestrictedVocab) -> np.ndarray:
    """Indices of `vocab`'s tokens inside the record's dense prob rows."""
    try:
        return rec.vocab.locals_of(vocab.tokens)
    except RecordError as e:
        raise RecordError(
            f"vocabulary token missing from probability rows of sample {rec.id} (corrupted input): {e}"
        ) from None


def error_matrix(rec: SampleRecord, vocab: RestrictedVocab) -> np.ndarray:
    """(T, |vocab|) float64 matrix of prediction-error rows over `vocab`."""
    cols = _columns(rec, vocab)
    err = -rec.probs[:, cols].astype(np.float64)
    for k, t in enumerate(rec.targets):
        t = int(t)
        if t in vocab:
            err[k, vocab.local(t)] += 1.0
    return err


def error_row(rec: SampleRecord, k: int, vocab: RestrictedVocab) -> ErrorRow:
    """Prediction-error vector at position k, restricted to `vocab`."""
    if not 0 <= k < rec.length:
        raise IndexError(f"position {k} out of range for record of length {rec.length}")
    cols = _columns(rec, vocab)
    values = -rec.probs[k, cols].astype(np.float64)
    t = int(rec.targets[k])
    if t in vocab:
        values[vocab.local(t)] += 1.0
    return ErrorRow(vocab=vocab, values=values)


def build_sketch(rec: SampleRecord, vocab: RestrictedVocab) -> Sketch:
    """Accumulate the record's sketch over `vocab` at float64.

    Summation order is fixed (ascending position, one matrix product), so
    repeated runs produce bit-identical sketches.
    """
    m = sketch_matrix(rec, vocab)
    if not np.all(np.isfinite(m)):
        raise RecordError(f"non-finite sketch accumulation for sample {rec.id} (corrupted input)")
    return Sketch(vocab=vocab, m=m)


def sketch_matrix(rec: SampleRecord, vocab: RestrictedVocab) -> np.ndarray:
    """Raw (|vocab|, d) float64 sketch matrix, without the wrapper."""
    err = error_matrix(rec, vocab)
    hidden = rec.hidden.astype(np.float64)
    return err.T @ hidden
