from __future__ import annotations

import numpy as np
import pytest

from fwdval.records import RestrictedVocab, SampleRecord


def make_record(
    rid: str = "r0",
    role: str = "training",
    vocab: RestrictedVocab | None = None,
    targets=None,
    hidden=None,
    probs=None,
    residual=None,
    seed: int = 0,
    T: int = 3,
    d: int = 4,
    vocab_size: int = 6,
    **meta,
) -> SampleRecord:
    """Small valid record with any field overridable."""
    rng = np.random.default_rng(seed)
    if vocab is None:
        vocab = RestrictedVocab(list(range(vocab_size)))
    P = len(vocab)
    if targets is None:
        targets = rng.integers(0, P, size=T)
        targets = vocab.tokens[targets]
    T = len(targets)
    if hidden is None:
        hidden = rng.normal(size=(T, d)).astype(np.float32)
    if probs is None:
        raw = rng.random((T, P))
        probs = (raw / raw.sum(axis=1, keepdims=True)).astype(np.float32)
    if residual is None:
        residual = np.zeros(T, dtype=np.float32)
    return SampleRecord(
        id=rid,
        role=role,
        vocab=vocab,
        targets=np.asarray(targets),
        hidden=np.asarray(hidden),
        probs=np.asarray(probs),
        residual_mass=np.asarray(residual),
        **meta,
    )


@pytest.fixture
def vocab6() -> RestrictedVocab:
    return RestrictedVocab([0, 1, 2, 3, 4, 5])
