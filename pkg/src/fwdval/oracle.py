"""Exact-gradient reference model for verifying the scoring engine.

The model treats every context (one sample position's input-plus-prefix) as
a free embedding vector; a shared unembedding matrix W turns embeddings into
softmax distributions, and a sequence's likelihood is the product of its
per-position target probabilities. Because every parameter is explicit, the
teacher-forcing loss gradient, its finite-difference check, and the exact
first-order decomposition of a valuation sample's likelihood change are all
computable in closed form:

    <grad ln p_v, grad ln p_i>  =  alignment_term(v, i)            (over W)
                                +  shared_context_term(v, [i])     (over h)

where the alignment term is the engine's pair score over the full
vocabulary, and the shared-context term is active only when a training
position reuses one of the valuation sample's context embeddings. With all
contexts distinct the shared term vanishes and the engine score *is* the
gradient dot product.

Context keys resolve through an alias map, so distinct keys can share one
embedding (modelling identical input-plus-prefix pairs). The model also
exports its samples as engine records, bridging oracle and engine.

The shared-context term conditions each factor on the position's own
context distribution (input plus prefix), not on the bare input; the
finite-difference oracle is authoritative for all signs and conditioning.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .records import RestrictedVocab, SampleRecord


@dataclass
class ToySample:
    """One sequence: target tokens plus the context key of each position."""

    id: str
    targets: np.ndarray            # (T,) token ids
    context_keys: list[str]        # (T,) embedding keys, one per position
    class_label: str | None = None
    clean: bool | None = None

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=np.int64)
        if len(self.context_keys) != self.targets.size:
            raise ValueError(f"sample {self.id}: context keys and targets differ in length")

    @property
    def length(self) -> int:
        return int(self.targets.size)


@dataclass
class ToyModel:
    """Unembedding matrix + one free embedding per context key."""

    vocab_size: int
    dim: int
    W: np.ndarray                           # (|V|, d)
    embeddings: dict[str, np.ndarray]       # canonical key -> (d,)
    alias: dict[str, str] = field(default_factory=dict)  # key -> canonical key

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.shape != (self.vocab_size, self.dim):
            raise ValueError(f"W has shape {self.W.shape}, expected ({self.vocab_size}, {self.dim})")
        self.embeddings = {k: np.asarray(v, dtype=np.float64) for k, v in self.embeddings.items()}
        for key, target in self.alias.items():
            if target not in self.embeddings:
                raise ValueError(f"alias {key!r} -> {target!r} does not resolve to an embedding")

    def resolve(self, key: str) -> str:
        return self.alias.get(key, key)

    def embedding(self, key: str) -> np.ndarray:
        return self.embeddings[self.resolve(key)]

    def probs(self, key: str) -> np.ndarray:
        """Softmax over the full vocabulary for one context."""
        z = self.W @ self.embedding(key)
        z = z - z.max()
        e = np.exp(z)
        return e / e.sum()

    def copy(self) -> "ToyModel":
        return ToyModel(
            vocab_size=self.vocab_size,
            dim=self.dim,
            W=self.W.copy(),
            embeddings={k: v.copy() for k, v in self.embeddings.items()},
            alias=dict(self.alias),
        )


@dataclass
class ToyGradient:
    """Loss gradient: dW plus one vector per canonical context key."""

    dW: np.ndarray
    dh: dict[str, np.ndarray]


def _positions(model: ToyModel, samples: list[ToySample]):
    """Flatten samples to (hidden matrix, targets, canonical keys)."""
    keys: list[str] = []
    targets: list[int] = []
    for s in samples:
        keys.extend(model.resolve(k) for k in s.context_keys)
        targets.extend(int(t) for t in s.targets)
    H = np.stack([model.embeddings[k] for k in keys]) if keys else np.zeros((0, model.dim))
    return H, np.asarray(targets, dtype=np.int64), keys


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_likelihood(model: ToyModel, s: ToySample) -> float:
    """ln p(y | x) = sum_k ln softmax(W h_k)[y_k]."""
    H, targets, _ = _positions(model, [s])
    logits = H @ model.W.T
    lse = np.log(np.exp(logits - logits.max(axis=1, keepdims=True)).sum(axis=1)) + logits.max(axis=1)
    return float((logits[np.arange(targets.size), targets] - lse).sum())


def nll_loss(model: ToyModel, samples: list[ToySample]) -> float:
    """Teacher-forcing loss: mean negative log-likelihood over samples."""
    if not samples:
        raise ValueError("empty sample list")
    return -sum(log_likelihood(model, s) for s in samples) / len(samples)


def _error_rows(model: ToyModel, s: ToySample) -> np.ndarray:
    """(T, |V|) rows of e_target - softmax(W h) for one sample."""
    H, targets, _ = _positions(model, [s])
    P = _softmax_rows(H @ model.W.T)
    E = -P
    E[np.arange(targets.size), targets] += 1.0
    return E


def ll_gradient(model: ToyModel, s: ToySample) -> ToyGradient:
    """Gradient of ln p(y|x) w.r.t. W and the sample's context embeddings."""
    H, _, keys = _positions(model, [s])
    E = _error_rows(model, s)
    dW = E.T @ H
    dh: dict[str, np.ndarray] = {}
    back = E @ model.W  # rows W^T (e - p)
    for row, key in zip(back, keys):
        if key in dh:
            dh[key] = dh[key] + row
        else:
            dh[key] = row.copy()
    return ToyGradient(dW=dW, dh=dh)


def sft_gradient(model: ToyModel, samples: list[ToySample]) -> ToyGradient:
    """Analytic gradient of the mean-NLL loss.

    dW = -(1/n) sum over positions of (e - p) h^T; each context embedding
    receives -(1/n) sum over its aliased positions of W^T (e - p).
    """
    n = len(samples)
    if n == 0:
        raise ValueError("empty sample list")
    dW = np.zeros_like(model.W)
    dh: dict[str, np.ndarray] = {}
    for s in samples:
        g = ll_gradient(model, s)
        dW -= g.dW / n
        for key, vec in g.dh.items():
            if key in dh:
                dh[key] = dh[key] - vec / n
            else:
                dh[key] = -vec / n
    return ToyGradient(dW=dW, dh=dh)


def gradient_step(model: ToyModel, samples: list[ToySample], lr: float) -> ToyModel:
    """One explicit descent step on the teacher-forcing loss."""
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    g = sft_gradient(model, samples)
    out = model.copy()
    out.W = out.W - lr * g.dW
    for key, vec in g.dh.items():
        out.embeddings[key] = out.embeddings[key] - lr * vec
    return out


def finite_difference_gradient(
    model: ToyModel, samples: list[ToySample], step: float = 1e-5
) -> ToyGradient:
    """Central-difference gradient of the loss over every coordinate.

    Independent of the analytic path: only evaluates nll_loss at perturbed
    parameter copies. Intended as the authoritative oracle for signs and
    conditioning.
    """
    work = model.copy()
    dW = np.zeros_like(work.W)
    for r in range(work.vocab_size):
        for c in range(work.dim):
            orig = work.W[r, c]
            work.W[r, c] = orig + step
            up = nll_loss(work, samples)
            work.W[r, c] = orig - step
            down = nll_loss(work, samples)
            work.W[r, c] = orig
            dW[r, c] = (up - down) / (2 * step)
    dh: dict[str, np.ndarray] = {}
    for key in sorted(work.embeddings):
        vec = np.zeros(work.dim)
        for c in range(work.dim):
            orig = work.embeddings[key][c]
            work.embeddings[key][c] = orig + step
            up = nll_loss(work, samples)
            work.embeddings[key][c] = orig - step
            down = nll_loss(work, samples)
            work.embeddings[key][c] = orig
            vec[c] = (up - down) / (2 * step)
        dh[key] = vec
    return ToyGradient(dW=dW, dh=dh)


# ---------------------------------------------------------------------------
# First-order decomposition terms


def alignment_term(model: ToyModel, v: ToySample, i: ToySample) -> float:
    """Error-similarity-weighted embedding alignment over the full vocabulary.

    Equals the Frobenius inner product of the two samples' W-gradients, and
    the engine's pair score when records are exported with the full vocab.
    """
    Ev = _error_rows(model, v)
    Ei = _error_rows(model, i)
    Hv, _, _ = _positions(model, [v])
    Hi, _, _ = _positions(model, [i])
    return float(np.sum((Ev @ Ei.T) * (Hv @ Hi.T)))


def shared_context_term(model: ToyModel, v: ToySample, train: list[ToySample]) -> float:
    """Unembedding interaction from training positions reusing v's contexts.

    For each valuation position k, pairs W^T(e - p) at that context with the
    same quantity summed over every training position whose resolved context
    key matches. Zero when no training sample shares a context with v.
    """
    total = 0.0
    v_keys = [model.resolve(k) for k in v.context_keys]
    Ev = _error_rows(model, v)
    back_v = Ev @ model.W  # (T_v, d): rows W^T (e - p)

    # Gather training back-rows by canonical key once.
    by_key: dict[str, np.ndarray] = {}
    for s in train:
        Es = _error_rows(model, s)
        back_s = Es @ model.W
        for key, row in zip((model.resolve(k) for k in s.context_keys), back_s):
            if key in by_key:
                by_key[key] = by_key[key] + row
            else:
                by_key[key] = row.copy()

    for k, key in enumerate(v_keys):
        if key in by_key:
            total += float(np.dot(back_v[k], by_key[key]))
    return total


def grad_dot_score(model: ToyModel, v: ToySample, i: ToySample) -> float:
    """Exact first-order score: <grad ln p_v, grad ln p_i> over all parameters."""
    gv = ll_gradient(model, v)
    gi = ll_gradient(model, i)
    total = float(np.sum(gv.dW * gi.dW))
    for key, vec in gv.dh.items():
        other = gi.dh.get(key)
        if other is not None:
            total += float(np.dot(vec, other))
    return total


# ---------------------------------------------------------------------------
# Bridge to the engine


def export_records(
    model: ToyModel,
    samples: list[ToySample],
    vocab: RestrictedVocab | None = None,
    role: str = "training",
) -> list[SampleRecord]:
    """Convert toy samples to engine records with exact softmax prob rows.

    vocab=None exports over the full model vocabulary (residual mass 0 up to
    float roundoff); a restricted vocab stores the exact in-vocab
    probabilities with the exact complementary residual.
    """
    if vocab is None:
        vocab = RestrictedVocab(list(range(model.vocab_size)))
    cols = np.asarray(list(vocab), dtype=np.int64)
    records = []
    for s in samples:
        H, targets, _ = _positions(model, [s])
        P = _softmax_rows(H @ model.W.T)
        dense = P[:, cols]
        residual = np.maximum(1.0 - dense.sum(axis=1), 0.0)
        records.append(
            SampleRecord(
                id=s.id,
                role=role,
                vocab=vocab,
                targets=targets,
                hidden=H,
                probs=dense,
                residual_mass=residual,
                class_label=s.class_label,
                clean=s.clean,
            )
        )
    return records


# ---------------------------------------------------------------------------
# Random instances for property suites


@dataclass
class ToyInstance:
    model: ToyModel
    train: list[ToySample]
    valuation: list[ToySample]

    @property
    def samples(self) -> list[ToySample]:
        return self.train + self.valuation


def random_instance(
    seed: int,
    vocab_size: int = 20,
    dim: int = 8,
    n_train: int = 12,
    n_val: int = 4,
    t_range: tuple[int, int] = (2, 5),
    shared_contexts: int = 0,
) -> ToyInstance:
    """Random model + samples, scaled to keep softmax away from saturation.

    shared_contexts > 0 aliases that many training positions onto valuation
    context embeddings (training data with the same input-plus-prefix as the
    valuation sample), which activates the shared-context term.
    """
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(dim)
    W = rng.normal(0.0, scale, size=(vocab_size, dim))

    def make(prefix: str, count: int) -> list[ToySample]:
        out = []
        for idx in range(count):
            T = int(rng.integers(t_range[0], t_range[1] + 1))
            sid = f"{prefix}{idx:03d}"
            keys = [f"{sid}:{k}" for k in range(T)]
            targets = rng.integers(0, vocab_size, size=T)
            out.append(ToySample(id=sid, targets=targets, context_keys=keys))
        return out

    train = make("train", n_train)
    valuation = make("val", n_val)
    embeddings = {
        key: rng.normal(0.0, scale, size=dim)
        for s in train + valuation
        for key in s.context_keys
    }
    alias: dict[str, str] = {}
    if shared_contexts:
        val_keys = [k for s in valuation for k in s.context_keys]
        train_positions = [(s, k) for s in train for k in range(s.length)]
        picks = rng.choice(len(train_positions), size=min(shared_contexts, len(train_positions)), replace=False)
        for p in picks:
            s, k = train_positions[int(p)]
            target_key = val_keys[int(rng.integers(0, len(val_keys)))]
            alias[s.context_keys[k]] = target_key
            del embeddings[s.context_keys[k]]
    return ToyInstance(
        model=ToyModel(vocab_size=vocab_size, dim=dim, W=W, embeddings=embeddings, alias=alias),
        train=train,
        valuation=valuation,
    )
