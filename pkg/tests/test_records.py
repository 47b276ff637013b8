from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fwdval.records import RecordError, RestrictedVocab, validate_record

from conftest import make_record


class TestRestrictedVocab:
    def test_rejects_unsorted(self):
        with pytest.raises(RecordError):
            RestrictedVocab([3, 1, 2])

    def test_rejects_duplicates(self):
        with pytest.raises(RecordError):
            RestrictedVocab([1, 1, 2])

    def test_from_tokens_sorts_and_dedups(self):
        v = RestrictedVocab.from_tokens([9, 3, 5, 3, 9])
        assert list(v) == [3, 5, 9]

    @given(st.sets(st.integers(min_value=0, max_value=10_000), min_size=0, max_size=40))
    def test_roundtrip_local_token(self, tokens):
        v = RestrictedVocab.from_tokens(tokens)
        for t in v:
            assert v.token_at(v.local(t)) == t
        locs = v.locals_of(list(v))
        assert np.array_equal(locs, np.arange(len(v)))

    def test_local_missing_raises(self):
        v = RestrictedVocab([1, 2])
        with pytest.raises(RecordError):
            v.local(7)


class TestValidateRecord:
    def test_valid_record_empty_report(self, vocab6):
        rec = make_record(vocab=vocab6, T=3, d=4)
        report = validate_record(rec, vocab6)
        assert report.ok
        assert report.violations == []

    def test_probability_sum_drift_names_row(self, vocab6):
        rec = make_record(vocab=vocab6, T=2)
        probs = np.asarray(rec.probs).copy()
        probs[0] *= 0.90
        bad = make_record(vocab=vocab6, targets=rec.targets, hidden=rec.hidden, probs=probs)
        report = validate_record(bad, vocab6)
        assert any("probability-sum drift, row 0" in v for v in report.violations)
        assert not any("row 1" in v for v in report.violations)

    def test_out_of_vocab_target(self, vocab6):
        rec = make_record(vocab=vocab6, targets=[0, 99, 2])
        report = validate_record(rec, vocab6)
        assert any("out-of-vocab target" in v for v in report.violations)

    def test_dimension_mismatch(self, vocab6):
        rec = make_record(vocab=vocab6, T=3)
        short = make_record(
            vocab=vocab6, targets=rec.targets, hidden=np.asarray(rec.hidden)[:2], probs=rec.probs
        )
        report = validate_record(short, vocab6)
        assert any("dimension mismatch" in v for v in report.violations)

    def test_non_finite_hidden(self, vocab6):
        rec = make_record(vocab=vocab6, T=2)
        hidden = np.asarray(rec.hidden).copy()
        hidden[0, 0] = np.nan
        bad = make_record(vocab=vocab6, targets=rec.targets, hidden=hidden, probs=rec.probs)
        report = validate_record(bad, vocab6)
        assert any("non-finite entry: hidden" in v for v in report.violations)

    def test_validation_collects_multiple_violations(self, vocab6):
        rec = make_record(vocab=vocab6, T=2)
        probs = np.asarray(rec.probs).copy() * 0.5
        bad = make_record(vocab=vocab6, targets=[0, 99], hidden=rec.hidden, probs=probs)
        report = validate_record(bad, vocab6)
        assert len(report.violations) >= 2


def test_record_arrays_immutable(vocab6):
    rec = make_record(vocab=vocab6)
    with pytest.raises(ValueError):
        rec.hidden[0, 0] = 1.0
    with pytest.raises(ValueError):
        rec.probs[0, 0] = 1.0


def test_prob_row_view(vocab6):
    rec = make_record(vocab=vocab6, T=2)
    row = rec.prob_row(0)
    assert row.target == int(rec.targets[0])
    assert row.target_prob == pytest.approx(float(rec.probs[0, vocab6.local(row.target)]))
    assert row.entries()[int(vocab6.tokens[1])] == pytest.approx(float(rec.probs[0, 1]))
