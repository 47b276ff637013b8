"""Synthetic datasets: class-structured toy data and benchmark record streams.

The class construction gives each class a hidden-state direction and a tiny
target-token motif, with two twists that separate the two scoring channels:

* Embeddings alternate sign along the class direction by position parity
  (plus a small coherent component), so position-summed embeddings mostly
  cancel the class signal: raw embedding-sum similarity ranks imperfectly.
* Target motifs are parity-split (a class's even positions draw from one
  token pool, odd positions from the other), so two positions with matching
  targets always carry aligned class directions: error-similarity weighting
  recovers the class cleanly.

The mislabel variant additionally trains the model briefly on a clean
reference set, so its predictions encode the context-to-motif association,
then flips a fraction of training labels by swapping their target motifs
(the "label text") while keeping their hidden states (the "input").
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .oracle import ToyModel, ToySample, gradient_step
from .records import RestrictedVocab, SampleRecord


@dataclass
class ClassDataset:
    model: ToyModel
    train: list[ToySample]
    valuation: list[ToySample]
    vocab: RestrictedVocab

    def labels(self) -> dict[str, str]:
        return {s.id: s.class_label for s in self.train + self.valuation}

    def clean_flags(self) -> dict[str, bool]:
        return {s.id: bool(s.clean) for s in self.train if s.clean is not None}


class _ClassSampler:
    """Draws samples with parity-alternating embeddings and parity-split motifs."""

    def __init__(self, rng, n_classes, motif_size, dim, cluster_weight, noise, coherent, t_range):
        self.rng = rng
        self.n_classes = n_classes
        self.motif_size = motif_size
        self.half = motif_size // 2
        self.dim = dim
        self.cluster_weight = cluster_weight
        self.noise = noise
        self.coherent = coherent
        self.t_range = t_range
        centers = rng.normal(0.0, 1.0, size=(n_classes, dim))
        self.centers = centers / np.linalg.norm(centers, axis=1, keepdims=True)
        self.embeddings: dict[str, np.ndarray] = {}

    def sample(self, sid: str, cluster_cls: int, target_cls: int) -> ToySample:
        T = int(self.rng.integers(self.t_range[0], self.t_range[1] + 1))
        keys = [f"{sid}:{k}" for k in range(T)]
        targets = np.empty(T, dtype=np.int64)
        for k in range(T):
            sign = 1.0 if k % 2 == 0 else (2.0 * self.coherent - 1.0)
            self.embeddings[keys[k]] = sign * self.cluster_weight * self.centers[
                cluster_cls
            ] + self.rng.normal(0.0, self.noise / np.sqrt(self.dim), size=self.dim)
            pool_start = target_cls * self.motif_size + (k % 2) * self.half
            targets[k] = self.rng.integers(pool_start, pool_start + self.half)
        return ToySample(
            id=sid,
            targets=targets,
            context_keys=keys,
            class_label=f"class{target_cls}",
            clean=(cluster_cls == target_cls),
        )


def influence_dataset(
    seed: int = 0,
    n_classes: int = 5,
    per_class_train: int = 10,
    per_class_val: int = 2,
    motif_size: int = 2,
    dim: int = 16,
    cluster_weight: float = 0.8,
    noise: float = 0.8,
    coherent: float = 0.3,
    t_range: tuple[int, int] = (4, 7),
) -> ClassDataset:
    """Class-structured dataset: 5 x 10 training + 5 x 2 valuation by default."""
    rng = np.random.default_rng(seed)
    sampler = _ClassSampler(rng, n_classes, motif_size, dim, cluster_weight, noise, coherent, t_range)
    train = [
        sampler.sample(f"train_c{c}_{j:02d}", c, c)
        for c in range(n_classes)
        for j in range(per_class_train)
    ]
    valuation = [
        sampler.sample(f"val_c{c}_{j:02d}", c, c)
        for c in range(n_classes)
        for j in range(per_class_val)
    ]
    vocab_size = n_classes * motif_size
    model = ToyModel(
        vocab_size=vocab_size,
        dim=dim,
        W=rng.normal(0.0, 1.0 / np.sqrt(dim), size=(vocab_size, dim)),
        embeddings=sampler.embeddings,
    )
    return ClassDataset(model, train, valuation, RestrictedVocab(list(range(vocab_size))))


def mislabel_dataset(
    seed: int = 0,
    flip_fraction: float = 0.5,
    n_classes: int = 5,
    per_class_train: int = 10,
    per_class_val: int = 2,
    per_class_refs: int = 4,
    motif_size: int = 2,
    dim: int = 16,
    cluster_weight: float = 0.8,
    noise: float = 0.8,
    coherent: float = 0.3,
    t_range: tuple[int, int] = (4, 7),
    ref_steps: int = 10,
    ref_lr: float = 0.5,
) -> ClassDataset:
    """Flipped-label variant with a briefly pre-trained model.

    A flipped training sample keeps its class's hidden states but draws its
    targets (and its observed class_label) from a different class's motif;
    clean=False marks it for ground truth. Valuation samples stay clean. The
    reference samples exist only to train the unembedding matrix; they are
    not part of the returned dataset, and the evaluation samples' context
    embeddings receive no gradient.
    """
    if not 0.0 < flip_fraction < 1.0:
        raise ValueError("flip_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    sampler = _ClassSampler(rng, n_classes, motif_size, dim, cluster_weight, noise, coherent, t_range)
    refs = [
        sampler.sample(f"ref_c{c}_{j:02d}", c, c)
        for c in range(n_classes)
        for j in range(per_class_refs)
    ]

    n_train = n_classes * per_class_train
    flip_slots = set(
        rng.choice(n_train, size=int(round(flip_fraction * n_train)), replace=False).tolist()
    )
    train: list[ToySample] = []
    slot = 0
    for c in range(n_classes):
        for j in range(per_class_train):
            if slot in flip_slots:
                wrong = int(rng.choice([x for x in range(n_classes) if x != c]))
                train.append(sampler.sample(f"train_c{c}_{j:02d}", c, wrong))
            else:
                train.append(sampler.sample(f"train_c{c}_{j:02d}", c, c))
            slot += 1
    valuation = [
        sampler.sample(f"val_c{c}_{j:02d}", c, c)
        for c in range(n_classes)
        for j in range(per_class_val)
    ]

    vocab_size = n_classes * motif_size
    model = ToyModel(
        vocab_size=vocab_size,
        dim=dim,
        W=rng.normal(0.0, 1.0 / np.sqrt(dim), size=(vocab_size, dim)),
        embeddings=sampler.embeddings,
    )
    for _ in range(ref_steps):
        model = gradient_step(model, refs, ref_lr)
    return ClassDataset(model, train, valuation, RestrictedVocab(list(range(vocab_size))))


def random_records(
    seed: int,
    n: int,
    seq_len: int,
    dim: int,
    vocab_size: int,
    role: str = "training",
    id_prefix: str = "r",
    max_residual: float = 0.0,
) -> list[SampleRecord]:
    """Random but valid records over vocab {0..vocab_size-1}, for benchmarks."""
    rng = np.random.default_rng(seed)
    vocab = RestrictedVocab(list(range(vocab_size)))
    records = []
    for j in range(n):
        hidden = rng.normal(0.0, 1.0, size=(seq_len, dim)).astype(np.float32)
        raw = rng.random(size=(seq_len, vocab_size))
        residual = (rng.random(seq_len) * max_residual) if max_residual > 0 else np.zeros(seq_len)
        probs = raw / raw.sum(axis=1, keepdims=True) * (1.0 - residual)[:, None]
        records.append(
            SampleRecord(
                id=f"{id_prefix}{j:06d}",
                role=role,
                vocab=vocab,
                targets=rng.integers(0, vocab_size, size=seq_len),
                hidden=hidden,
                probs=probs.astype(np.float32),
                residual_mass=residual.astype(np.float32),
            )
        )
    return records
