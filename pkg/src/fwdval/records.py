"""In-memory data model shared by every other module.

A sample is a (input, target-sequence) pair reduced to the tensors the
valuation engine needs: one hidden-state row per target position (row k is
the state that *predicts* target k), the target token ids, and the model's
next-token probability rows dense over the dataset vocabulary. All types are
immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

# Extractor outputs pass through half-precision softmax in practice; stricter
# bounds cause false rejections.
PROB_SUM_TOL = 1e-4

Role = str  # "training" | "valuation"
ROLES = ("training", "valuation")


class RecordError(ValueError):
    """Raised when a record or vocabulary violates a structural contract."""


def _frozen(a, dtype=None) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


class RestrictedVocab:
    """Ordered map between global token ids and dense local indices.

    Token ids are kept in ascending order (a determinism requirement: local
    index layout must not depend on insertion order), with the reverse map
    the exact inverse of the list.
    """

    __slots__ = ("tokens", "_index")

    def __init__(self, tokens: Sequence[int]):
        arr = np.asarray(tokens, dtype=np.int64)
        if arr.ndim != 1:
            raise RecordError("vocabulary must be a flat sequence of token ids")
        if arr.size and arr.min() < 0:
            raise RecordError("token ids must be non-negative")
        if arr.size > 1 and not np.all(arr[1:] > arr[:-1]):
            raise RecordError("vocabulary must be strictly ascending with no duplicates")
        self.tokens = _frozen(arr)
        self._index = {int(t): i for i, t in enumerate(arr)}

    @classmethod
    def from_tokens(cls, tokens: Iterable[int]) -> "RestrictedVocab":
        """Build from an arbitrary iterable: sorted, deduplicated."""
        return cls(sorted({int(t) for t in tokens}))

    def __len__(self) -> int:
        return int(self.tokens.size)

    def __iter__(self):
        return iter(int(t) for t in self.tokens)

    def __contains__(self, token) -> bool:
        return int(token) in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, RestrictedVocab) and np.array_equal(self.tokens, other.tokens)

    def __repr__(self) -> str:
        return f"RestrictedVocab({len(self)} tokens)"

    def local(self, token: int) -> int:
        """Dense local index of a global token id."""
        try:
            return self._index[int(token)]
        except KeyError:
            raise RecordError(f"token {token} not in restricted vocabulary") from None

    def locals_of(self, tokens: Sequence[int]) -> np.ndarray:
        """Vectorized local(); raises if any token is absent."""
        toks = np.asarray(tokens, dtype=np.int64)
        if toks.size == 0:
            return np.zeros(0, dtype=np.int64)
        idx = np.searchsorted(self.tokens, toks)
        bad = (idx >= len(self)) | (self.tokens[np.minimum(idx, len(self) - 1)] != toks)
        if np.any(bad):
            missing = toks[bad][0]
            raise RecordError(f"token {int(missing)} not in restricted vocabulary")
        return idx

    def token_at(self, local_index: int) -> int:
        return int(self.tokens[local_index])

    def is_subset_of(self, other: "RestrictedVocab") -> bool:
        return bool(np.all(np.isin(self.tokens, other.tokens)))


@dataclass(frozen=True, eq=False)
class ProbRow:
    """One next-token distribution dense over a vocabulary.

    `dense` holds the probability of each vocabulary token in vocabulary
    order; `residual_mass` is the probability of everything outside it.
    """

    vocab: RestrictedVocab
    dense: np.ndarray
    target: int
    residual_mass: float

    @property
    def target_prob(self) -> float:
        return float(self.dense[self.vocab.local(self.target)])

    def prob(self, token: int) -> float:
        return float(self.dense[self.vocab.local(token)])

    def entries(self) -> Mapping[int, float]:
        return {int(t): float(p) for t, p in zip(self.vocab.tokens, self.dense)}


@dataclass(frozen=True, eq=False)
class SampleRecord:
    """One sample's exported tensors.

    hidden[k] is the state that predicts targets[k] (the state after
    consuming the input and the first k target tokens); probs[k] is the
    model's distribution at that position, dense over `vocab` (the dataset
    vocabulary V_D), with residual_mass[k] the mass falling outside it.
    class_label and clean are metadata for the metrics module only; scoring
    never reads them.
    """

    id: str
    role: Role
    vocab: RestrictedVocab
    targets: np.ndarray          # (T,) global token ids
    hidden: np.ndarray           # (T, d)
    probs: np.ndarray            # (T, |vocab|)
    residual_mass: np.ndarray    # (T,)
    class_label: str | None = None
    clean: bool | None = None

    def __post_init__(self):
        object.__setattr__(self, "targets", _frozen(self.targets, np.int64))
        object.__setattr__(self, "hidden", _frozen(self.hidden))
        object.__setattr__(self, "probs", _frozen(self.probs))
        object.__setattr__(self, "residual_mass", _frozen(self.residual_mass))

    @property
    def length(self) -> int:
        return int(self.targets.size)

    @property
    def dim(self) -> int:
        return int(self.hidden.shape[-1]) if self.hidden.ndim == 2 else 0

    def prob_row(self, k: int) -> ProbRow:
        return ProbRow(
            vocab=self.vocab,
            dense=self.probs[k],
            target=int(self.targets[k]),
            residual_mass=float(self.residual_mass[k]),
        )

    def target_set(self) -> set[int]:
        return {int(t) for t in self.targets}


@dataclass(frozen=True, eq=False)
class Sketch:
    """Per-sample factored score carrier: m[z] = sum_k err_k[z] * hidden[k].

    Rows are indexed by the restricted vocabulary; a pair of records scores
    as the Frobenius inner product of their sketches over a shared vocab.
    """

    vocab: RestrictedVocab
    m: np.ndarray  # (|vocab|, d) float64

    def __post_init__(self):
        object.__setattr__(self, "m", _frozen(self.m, np.float64))
        if self.m.ndim != 2 or self.m.shape[0] != len(self.vocab):
            raise RecordError("sketch row count must equal vocabulary size")
        if not np.all(np.isfinite(self.m)):
            raise RecordError("non-finite sketch entry (corrupted input)")

    @property
    def dim(self) -> int:
        return int(self.m.shape[1])


@dataclass(frozen=True, eq=False)
class ScoreTable:
    """Dense (valuation x training) score matrix with id bookkeeping."""

    valuation_ids: tuple[str, ...]
    training_ids: tuple[str, ...]
    scores: np.ndarray  # (|valuation|, |training|) float64

    def __post_init__(self):
        object.__setattr__(self, "valuation_ids", tuple(self.valuation_ids))
        object.__setattr__(self, "training_ids", tuple(self.training_ids))
        object.__setattr__(self, "scores", _frozen(self.scores, np.float64))
        if self.scores.shape != (len(self.valuation_ids), len(self.training_ids)):
            raise RecordError("score matrix shape inconsistent with id lists")
        if not np.all(np.isfinite(self.scores)):
            raise RecordError("non-finite score")

    def row(self, valuation_id: str) -> np.ndarray:
        try:
            i = self.valuation_ids.index(valuation_id)
        except ValueError:
            raise KeyError(f"unknown valuation id: {valuation_id}") from None
        return self.scores[i]


@dataclass
class ValidationReport:
    """Every invariant a record violates; empty means valid."""

    record_id: str
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.ok:
            return f"{self.record_id}: ok"
        return f"{self.record_id}: " + "; ".join(self.violations)


def validate_record(rec: SampleRecord, vocab: RestrictedVocab) -> ValidationReport:
    """Check every record invariant against the dataset vocabulary.

    Validation never aborts: it collects all violations and leaves the
    decision to the caller.
    """
    report = ValidationReport(record_id=rec.id)
    v = report.violations

    if rec.role not in ROLES:
        v.append(f"unknown role: {rec.role!r}")
    if rec.vocab != vocab:
        v.append("vocabulary mismatch: record probs are dense over a different vocabulary")

    T = rec.length
    if T < 1:
        v.append("empty target sequence (T=0)")
    if rec.hidden.ndim != 2 or rec.hidden.shape[0] != T:
        v.append(f"dimension mismatch: hidden has shape {rec.hidden.shape}, expected ({T}, d)")
    if rec.probs.ndim != 2 or rec.probs.shape[0] != T:
        v.append(f"dimension mismatch: probs has shape {rec.probs.shape}, expected ({T}, |vocab|)")
    elif rec.probs.shape[1] != len(vocab):
        v.append(
            f"dimension mismatch: probs has {rec.probs.shape[1]} columns, vocabulary has {len(vocab)}"
        )
    if rec.residual_mass.shape != (T,):
        v.append(
            f"dimension mismatch: residual_mass has shape {rec.residual_mass.shape}, expected ({T},)"
        )

    for k, t in enumerate(rec.targets):
        if int(t) not in vocab:
            v.append(f"out-of-vocab target, position {k} (token {int(t)})")

    if not np.all(np.isfinite(rec.hidden)):
        v.append("non-finite entry: hidden")
    probs_finite = bool(np.all(np.isfinite(rec.probs)))
    resid_finite = bool(np.all(np.isfinite(rec.residual_mass)))
    if not probs_finite:
        v.append("non-finite entry: probs")
    if not resid_finite:
        v.append("non-finite entry: residual_mass")
    if probs_finite and resid_finite:
        if rec.probs.size and (rec.probs.min() < 0.0 or rec.probs.max() > 1.0 + PROB_SUM_TOL):
            v.append("probability outside [0, 1]")
        if rec.residual_mass.size and (
            rec.residual_mass.min() < -PROB_SUM_TOL or rec.residual_mass.max() > 1.0 + PROB_SUM_TOL
        ):
            v.append("residual mass outside [0, 1]")
        if rec.probs.shape == (T, len(vocab)) and rec.residual_mass.shape == (T,):
            # Accumulate at float64: rows are float32 on disk and drift otherwise.
            sums = rec.probs.sum(axis=1, dtype=np.float64) + rec.residual_mass.astype(np.float64)
            for k in np.nonzero(np.abs(sums - 1.0) > PROB_SUM_TOL)[0]:
                v.append(f"probability-sum drift, row {int(k)} (sum {sums[k]:.6f})")

    return report
