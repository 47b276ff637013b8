"""Extractor tests, including the dump-contract acceptance check.

The engine is exercised only through its external interfaces: the `fwdval`
command line and the dump directory format. Reference score values come from
the free-embedding backend's own closed-form math, computed here in float64
independently of the engine.
"""

from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest

from actdump.backends import CausalLMBackend, FreeEmbeddingBackend
from actdump.dataset import DatasetError, DatasetItem, read_dataset
from actdump.extract import ExtractError, build_vocab_pass, extract_dataset, extract_pass

ENGINE = [sys.executable, "-m", "fwdval"]


def engine(*args):
    return subprocess.run(ENGINE + [str(a) for a in args], capture_output=True, text=True)


def toy_items(vocab_size: int, n_train: int = 8, n_val: int = 3, seed: int = 0):
    """Items whose target tokens jointly cover the whole backend vocabulary."""
    rng = np.random.default_rng(seed)
    items = []
    covered = list(range(vocab_size))
    rng.shuffle(covered)
    for j in range(n_train + n_val):
        role = "training" if j < n_train else "valuation"
        T = int(rng.integers(3, 7))
        targets = [int(t) for t in rng.integers(0, vocab_size, size=T)]
        if covered:  # force full coverage so the dump vocabulary equals V
            take = min(len(targets), len(covered))
            targets[:take] = covered[:take]
            covered = covered[take:]
        items.append(
            DatasetItem(
                id=f"{role[:1]}{j:03d}",
                role=role,
                input_tokens=[0],
                target_tokens=targets,
                class_label=f"c{j % 3}",
                clean=bool(j % 2),
            )
        )
    assert not covered, "vocabulary not fully covered; enlarge the dataset"
    return items


def reference_score(backend: FreeEmbeddingBackend, v: DatasetItem, i: DatasetItem) -> float:
    """Closed-form pair score: Frobenius product of error-weighted outer sums."""

    def factored(item):
        T = len(item.target_tokens)
        H = np.stack([backend.context_embedding(item.id, k) for k in range(T)])
        logits = H @ backend.W.T
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        E = -p
        E[np.arange(T), item.target_tokens] += 1.0
        return E.T @ H

    return float(np.sum(factored(v) * factored(i)))


class TestVocabPass:
    def test_union(self):
        items = [
            DatasetItem("a", "training", [0], [3, 5]),
            DatasetItem("b", "training", [0], [5, 9]),
        ]
        assert build_vocab_pass(items) == [3, 5, 9]

    def test_empty_dataset(self):
        with pytest.raises(ExtractError, match="empty dataset"):
            build_vocab_pass([])

    def test_dedup_shrinks(self):
        items = [
            DatasetItem("a", "training", [0], [1, 2, 3]),
            DatasetItem("b", "training", [0], [2, 3, 4]),
        ]
        assert len(build_vocab_pass(items)) < 6


class TestDatasetFile:
    def test_reads_tokens_and_text(self, tmp_path):
        path = tmp_path / "data.jsonl"
        path.write_text(
            json.dumps({"id": "a", "role": "training", "input_tokens": [1], "target_tokens": [2, 3]})
            + "\n"
            + json.dumps({"id": "b", "role": "valuation", "input_text": "the cat", "target_text": "sat"})
            + "\n"
        )
        items = read_dataset(path, {"type": "whitespace_vocab", "vocab": {"the": 0, "cat": 1, "sat": 2}})
        assert items[0].target_tokens == [2, 3]
        assert items[1].input_tokens == [0, 1]
        assert items[1].target_tokens == [2]

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "data.jsonl"
        row = json.dumps({"id": "a", "input_tokens": [1], "target_tokens": [2]})
        path.write_text(row + "\n" + row + "\n")
        with pytest.raises(DatasetError, match="duplicate"):
            read_dataset(path)

    def test_empty_target_rejected(self, tmp_path):
        path = tmp_path / "data.jsonl"
        path.write_text(json.dumps({"id": "a", "input_tokens": [1], "target_tokens": []}) + "\n")
        with pytest.raises(DatasetError, match="empty target"):
            read_dataset(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "data.jsonl"
        path.write_text("\n")
        with pytest.raises(DatasetError, match="empty dataset"):
            read_dataset(path)


@pytest.fixture(scope="module")
def dumps(tmp_path_factory):
    base = tmp_path_factory.mktemp("toy_dumps")
    items = toy_items(vocab_size=24)
    backend = FreeEmbeddingBackend(vocab_size=24, dim=12, seed=3)
    tdir, vdir = extract_dataset(items, backend, base / "train", base / "valid", batch_size=4)
    return items, backend, tdir, vdir


@pytest.fixture(scope="module")
def backend():
    return CausalLMBackend.random_gpt2(vocab_size=128, dim=32, layers=2, heads=2, seed=0)


@pytest.fixture(scope="module")
def smoke_items():
    rng = np.random.default_rng(1)
    items = []
    for j in range(24):
        role = "training" if j < 20 else "valuation"
        items.append(
            DatasetItem(
                id=f"{role[:1]}{j:03d}",
                role=role,
                input_tokens=[int(t) for t in rng.integers(1, 128, size=int(rng.integers(2, 5)))],
                target_tokens=[int(t) for t in rng.integers(1, 128, size=int(rng.integers(3, 7)))],
            )
        )
    return items


class TestFreeEmbeddingContract:
    """A10, toy side: dumps validate and engine scores match the closed form."""

    def test_dumps_pass_engine_validate(self, dumps):
        _, _, tdir, vdir = dumps
        for d in (tdir, vdir):
            out = engine("validate", d)
            assert out.returncode == 0, out.stdout + out.stderr

    def test_engine_scores_match_reference(self, dumps, tmp_path):
        items, backend, tdir, vdir = dumps
        csv = tmp_path / "scores.csv"
        out = engine("score", tdir, vdir, "--out", csv, "--vocab-mode", "dataset")
        assert out.returncode == 0, out.stderr
        train = {i.id: i for i in items if i.role == "training"}
        valid = {i.id: i for i in items if i.role == "valuation"}
        checked = 0
        for line in csv.read_text().strip().splitlines()[1:]:
            vid, tid, score = line.split(",")
            want = reference_score(backend, valid[vid], train[tid])
            assert abs(float(score) - want) <= 1e-6 * max(1.0, abs(want))
            checked += 1
        assert checked == len(train) * len(valid)

    def test_extraction_deterministic(self, dumps, tmp_path):
        items, backend, tdir, _ = dumps
        again, _ = extract_dataset(
            items, FreeEmbeddingBackend(vocab_size=24, dim=12, seed=3),
            tmp_path / "train2", tmp_path / "valid2", batch_size=4,
        )
        for f in sorted(p.name for p in tdir.glob("*.fvd")):
            assert (tdir / f).read_bytes() == (again / f).read_bytes()
        assert (tdir / "manifest.json").read_text() == (again / "manifest.json").read_text()


class TestTransformerSmoke:
    """A10, real-model side: a true transformer forward pass conforms."""

    def test_prob_rows_normalized(self, backend, smoke_items):
        vocab = build_vocab_pass(smoke_items)
        cols = np.asarray(vocab)
        rows_checked = 0
        for acts in backend.run_batch(smoke_items):
            full_sums = acts.probs.sum(axis=1, dtype=np.float64)
            assert np.all(np.abs(full_sums - 1.0) <= 1e-4)
            dense = acts.probs[:, cols]
            residual = 1.0 - dense.sum(axis=1, dtype=np.float64)
            assert np.all(np.abs(dense.sum(axis=1, dtype=np.float64) + residual - 1.0) <= 1e-4)
            rows_checked += acts.probs.shape[0]
        assert rows_checked >= 20

    def test_dump_passes_engine_validate(self, backend, smoke_items, tmp_path):
        tdir, vdir = extract_dataset(smoke_items, backend, tmp_path / "t", tmp_path / "v", batch_size=8)
        for d in (tdir, vdir):
            out = engine("validate", d)
            assert out.returncode == 0, out.stdout + out.stderr

    def test_engine_scores_run_on_transformer_dump(self, backend, smoke_items, tmp_path):
        tdir, vdir = extract_dataset(smoke_items, backend, tmp_path / "t", tmp_path / "v", batch_size=8)
        csv = tmp_path / "scores.csv"
        out = engine("score", tdir, vdir, "--out", csv)
        assert out.returncode == 0, out.stderr
        assert len(csv.read_text().strip().splitlines()) == 1 + 20 * 4

    def test_alignment_rows_before_perturbed_target_unchanged(self, backend):
        item = DatasetItem("x", "training", [5, 9], [20, 30, 40, 50, 60])
        base = backend.run_batch([item])[0]
        k = 2
        perturbed_tokens = list(item.target_tokens)
        perturbed_tokens[k] = 77
        perturbed = backend.run_batch([DatasetItem("x", "training", [5, 9], perturbed_tokens)])[0]
        # row k's distribution conditions only on the prefix, so rows <= k are
        # identical; later rows consume the perturbed token and must move.
        assert np.array_equal(base.probs[: k + 1], perturbed.probs[: k + 1])
        assert np.array_equal(base.hidden[: k + 1], perturbed.hidden[: k + 1])
        assert not np.array_equal(base.probs[k + 1 :], perturbed.probs[k + 1 :])

    def test_items_without_input_are_skipped(self, backend, caplog):
        good = DatasetItem("g", "training", [3], [4, 5])
        bad = DatasetItem("b", "training", [], [4, 5])
        acts = backend.run_batch([good, bad])
        assert [a.item.id for a in acts] == ["g"]


class TestMemoryRetry:
    class FlakyBackend(FreeEmbeddingBackend):
        """Raises an allocator error once for any batch above one item."""

        def __init__(self):
            super().__init__(vocab_size=8, dim=4, seed=0)
            self.failures = 0

        def run_batch(self, items):
            if len(items) > 1:
                self.failures += 1
                raise RuntimeError("simulated out of memory")
            return super().run_batch(items)

    def test_batch_halved_and_retried(self, tmp_path):
        items = [
            DatasetItem(f"s{j}", "training", [0], [j % 8, (j + 1) % 8]) for j in range(4)
        ]
        backend = self.FlakyBackend()
        out = extract_pass(items, backend, list(range(8)), tmp_path / "d", batch_size=2)
        assert backend.failures == 2  # each 2-item batch failed once, halves succeeded
        assert len(list(out.glob("*.fvd"))) == 4
