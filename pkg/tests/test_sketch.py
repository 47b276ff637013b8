from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fwdval.records import RecordError, RestrictedVocab
from fwdval.sketch import batch_vocab, build_sketch, error_row

from conftest import make_record


def reference_sketch(rec, vocab):
    """Independent oracle: plain per-position outer-product accumulation."""
    m = np.zeros((len(vocab), rec.dim))
    for k in range(rec.length):
        err = np.zeros(len(vocab))
        for j, z in enumerate(vocab):
            err[j] = (1.0 if z == int(rec.targets[k]) else 0.0) - float(
                rec.probs[k, rec.vocab.local(z)]
            )
        for j in range(len(vocab)):
            for c in range(rec.dim):
                m[j, c] += err[j] * float(rec.hidden[k, c])
    return m


class TestBatchVocab:
    def test_union(self, vocab6):
        a = make_record("a", vocab=vocab6, targets=[3, 5])
        b = make_record("b", vocab=vocab6, targets=[5, 2])
        v = make_record("v", vocab=vocab6, targets=[2, 1])
        assert list(batch_vocab([a, b], v)) == [1, 2, 3, 5]

    def test_idempotent_when_batch_equals_valuation(self, vocab6):
        v = make_record("v", vocab=vocab6, targets=[4, 0])
        assert list(batch_vocab([v], v)) == [0, 4]

    def test_repeated_token_dedups(self, vocab6):
        v = make_record("v", vocab=vocab6, targets=[5, 5, 5])
        assert list(batch_vocab([], v)) == [5]


class TestErrorRow:
    def test_hand_values(self):
        vocab = RestrictedVocab([0, 1, 2])
        rec = make_record(
            "r", vocab=vocab, targets=[0], probs=np.array([[0.2, 0.3, 0.5]]), hidden=np.zeros((1, 2))
        )
        row = error_row(rec, 0, vocab)
        assert row.values == pytest.approx([0.8, -0.3, -0.5])

    def test_perfectly_confident_is_zero(self):
        vocab = RestrictedVocab([0, 1])
        rec = make_record(
            "r", vocab=vocab, targets=[1], probs=np.array([[0.0, 1.0]]), hidden=np.zeros((1, 2))
        )
        assert error_row(rec, 0, vocab).values == pytest.approx([0.0, 0.0])

    def test_uniform_probs(self):
        vocab = RestrictedVocab([0, 1, 2, 3])
        rec = make_record(
            "r", vocab=vocab, targets=[2], probs=np.full((1, 4), 0.25), hidden=np.zeros((1, 2))
        )
        assert error_row(rec, 0, vocab).values == pytest.approx([-0.25, -0.25, 0.75, -0.25])

    def test_subvocab_selects_columns(self, vocab6):
        rec = make_record("r", vocab=vocab6, targets=[3, 1], seed=5)
        sub = RestrictedVocab([1, 3])
        row = error_row(rec, 0, sub)
        expected = [-float(rec.probs[0, 1]), 1.0 - float(rec.probs[0, 3])]
        assert row.values == pytest.approx(expected)

    def test_vocab_outside_record_domain_raises(self, vocab6):
        rec = make_record("r", vocab=vocab6)
        with pytest.raises(RecordError, match="corrupted input"):
            error_row(rec, 0, RestrictedVocab([0, 17]))


class TestBuildSketch:
    def test_single_outer_product_by_hand(self):
        vocab = RestrictedVocab([0, 1, 2])
        rec = make_record(
            "r",
            vocab=vocab,
            targets=[0],
            probs=np.array([[0.2, 0.3, 0.5]]),
            hidden=np.array([[1.0, 2.0]]),
        )
        sk = build_sketch(rec, vocab)
        want = np.array([[0.8, 1.6], [-0.3, -0.6], [-0.5, -1.0]])
        assert np.allclose(sk.m, want, atol=1e-12)

    def test_confident_record_gives_zero_matrix(self):
        vocab = RestrictedVocab([0, 1])
        probs = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
        rec = make_record("r", vocab=vocab, targets=[0, 1], probs=probs, hidden=np.ones((2, 3)))
        assert np.all(build_sketch(rec, vocab).m == 0.0)

    def test_matches_reference_loop(self):
        vocab = RestrictedVocab([0, 1, 2, 3])
        rec = make_record("r", vocab=vocab, seed=7, T=2, d=3)
        got = build_sketch(rec, vocab).m
        want = reference_sketch(rec, vocab)
        assert got == pytest.approx(want, rel=1e-6)

    def test_linearity_over_positions(self, vocab6):
        rec = make_record("r", vocab=vocab6, seed=11, T=4, d=3)
        total = build_sketch(rec, vocab6).m
        partial = np.zeros_like(total)
        for k in range(rec.length):
            single = make_record(
                "s",
                vocab=vocab6,
                targets=[int(rec.targets[k])],
                hidden=np.asarray(rec.hidden)[k : k + 1],
                probs=np.asarray(rec.probs)[k : k + 1],
            )
            partial += build_sketch(single, vocab6).m
        assert partial == pytest.approx(total, rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(min_value=0, max_value=10_000), T=st.integers(min_value=1, max_value=5))
def test_error_row_sum_identity(seed, T):
    # Each error row sums to 1 - (row's probability mass inside the vocab).
    vocab = RestrictedVocab(list(range(5)))
    rec = make_record("r", vocab=vocab, seed=seed, T=T)
    for k in range(T):
        row = error_row(rec, k, vocab)
        assert row.values.sum() == pytest.approx(
            1.0 - rec.probs[k].sum(dtype=np.float64), abs=1e-9
        )


def test_vocab_input_order_irrelevant(vocab6):
    # from_tokens canonicalizes to ascending order, so any enumeration order
    # of the same token set yields the same vocabulary and the same sketch.
    rec = make_record("r", vocab=vocab6, seed=3)
    a = RestrictedVocab.from_tokens([5, 1, 3])
    b = RestrictedVocab.from_tokens([3, 5, 1])
    assert a == b
    assert np.array_equal(build_sketch(rec, a).m, build_sketch(rec, b).m)
