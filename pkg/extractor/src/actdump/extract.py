"""Two-pass extraction: build the dataset vocabulary, then dump activations.

Pass one unions the target tokens of every item (training and valuation
together) into the dataset-restricted vocabulary. Pass two runs the model
under teacher forcing and writes, per item, the hidden rows aligned so row k
predicts target k, the vocabulary-restricted probability rows, and the
complementary residual mass. Probabilities must exist for every vocabulary
member at every position, which is why the vocabulary has to be known
before dumping.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .backends import ItemActivations
from .dataset import DatasetItem
from .dumpfmt import DumpSample, write_dump_dir

log = logging.getLogger("actdump")


class ExtractError(ValueError):
    pass


def build_vocab_pass(items: list[DatasetItem]) -> list[int]:
    """Ascending union of target token ids over the whole dataset."""
    if not items:
        raise ExtractError("empty dataset")
    tokens: set[int] = set()
    for item in items:
        tokens.update(int(t) for t in item.target_tokens)
    return sorted(tokens)


def _restrict(acts: ItemActivations, vocab: np.ndarray, local_index: dict[int, int]) -> DumpSample:
    dense = acts.probs[:, vocab].astype(np.float32)
    residual = np.clip(1.0 - dense.sum(axis=1, dtype=np.float64), 0.0, 1.0).astype(np.float32)
    try:
        local_targets = np.array(
            [local_index[int(t)] for t in acts.item.target_tokens], dtype=np.uint32
        )
    except KeyError as e:
        raise ExtractError(f"target token {e} of {acts.item.id} missing from vocabulary") from None
    return DumpSample(
        id=acts.item.id,
        role=acts.item.role,
        hidden=acts.hidden,
        local_targets=local_targets,
        probs=dense,
        residual=residual,
        class_label=acts.item.class_label,
        clean=acts.item.clean,
    )


def _run_with_retry(backend, batch: list[DatasetItem]) -> list[ItemActivations]:
    try:
        return backend.run_batch(batch)
    except (MemoryError, RuntimeError) as e:
        if "out of memory" not in str(e).lower() and not isinstance(e, MemoryError):
            raise
        log.warning("batch of %d hit memory limits (%s); retrying in halves", len(batch), e)
        if len(batch) == 1:
            raise
        mid = len(batch) // 2
        return backend.run_batch(batch[:mid]) + backend.run_batch(batch[mid:])


def extract_pass(
    items: list[DatasetItem],
    backend,
    vocab_tokens: list[int],
    out_dir: str | Path,
    batch_size: int = 16,
    global_vocab_size: int | None = None,
) -> Path:
    """Dump one role's items into `out_dir` in the engine's format."""
    if not items:
        raise ExtractError("no items to extract")
    vocab = np.asarray(vocab_tokens, dtype=np.int64)
    local_index = {int(t): j for j, t in enumerate(vocab)}
    samples: list[DumpSample] = []
    for start in range(0, len(items), batch_size):
        batch = items[start : start + batch_size]
        for acts in _run_with_retry(backend, batch):
            samples.append(_restrict(acts, vocab, local_index))
    skipped = len(items) - len(samples)
    if skipped:
        log.warning("%d of %d items skipped during extraction", skipped, len(items))
    return write_dump_dir(
        out_dir,
        embedding_dim=backend.dim,
        restricted_vocab=[int(t) for t in vocab],
        samples=samples,
        global_vocab_size=global_vocab_size if global_vocab_size is not None else backend.vocab_size,
    )


def extract_dataset(
    items: list[DatasetItem],
    backend,
    train_dir: str | Path,
    valid_dir: str | Path,
    batch_size: int = 16,
) -> tuple[Path, Path]:
    """Full two-pass flow: shared vocabulary, then one dump per role."""
    vocab = build_vocab_pass(items)
    train_items = [i for i in items if i.role == "training"]
    valid_items = [i for i in items if i.role == "valuation"]
    if not train_items or not valid_items:
        raise ExtractError("dataset needs both training and valuation items")
    t = extract_pass(train_items, backend, vocab, train_dir, batch_size=batch_size)
    v = extract_pass(valid_items, backend, vocab, valid_dir, batch_size=batch_size)
    return t, v
