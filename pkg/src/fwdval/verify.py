"""Self-verification battery: checks the engine against the exact oracle.

Each property returns its worst observed residual and a pass/fail flag; the
CLI prints one line per property. A deliberate-fault hook perturbs an
exported record so the battery can demonstrate it actually catches breakage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import oracle
from .records import RestrictedVocab, SampleRecord
from .valuation import restriction_bound, score_pairwise


@dataclass
class PropertyResult:
    name: str
    residual: float
    tolerance: float
    ok: bool
    detail: str = ""


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(1.0, abs(a), abs(b))


def run_battery(
    seed: int = 0,
    vocab_size: int = 20,
    dim: int = 8,
    n_train: int = 12,
    n_val: int = 4,
    inject_fault: bool = False,
) -> list[PropertyResult]:
    results: list[PropertyResult] = []
    shared = oracle.random_instance(
        seed, vocab_size=vocab_size, dim=dim, n_train=n_train, n_val=n_val, shared_contexts=4
    )
    distinct = oracle.random_instance(
        seed + 1, vocab_size=vocab_size, dim=dim, n_train=n_train, n_val=n_val, shared_contexts=0
    )

    # Analytic loss gradient against central finite differences.
    worst = 0.0
    for inst in (shared, distinct):
        g = oracle.sft_gradient(inst.model, inst.train)
        fd = oracle.finite_difference_gradient(inst.model, inst.train, step=1e-5)
        worst = max(worst, float(np.abs(g.dW - fd.dW).max()))
        for key, vec in fd.dh.items():
            got = g.dh.get(key, np.zeros(inst.model.dim))
            worst = max(worst, float(np.abs(got - vec).max()))
    results.append(PropertyResult("gradient-vs-finite-difference", worst, 1e-6, worst < 1e-6))

    # Alignment term equals the Frobenius product of W-gradients.
    worst = 0.0
    for v in shared.valuation:
        for i in shared.train:
            t1 = oracle.alignment_term(shared.model, v, i)
            gv = oracle.ll_gradient(shared.model, v)
            gi = oracle.ll_gradient(shared.model, i)
            worst = max(worst, _rel(t1, float(np.sum(gv.dW * gi.dW))))
    results.append(PropertyResult("alignment-vs-unembedding-gradient", worst, 1e-9, worst < 1e-9))

    # Full decomposition: alignment + shared-context = gradient dot product.
    worst = 0.0
    for inst in (shared, distinct):
        for v in inst.valuation:
            total = sum(oracle.alignment_term(inst.model, v, i) for i in inst.train)
            total += oracle.shared_context_term(inst.model, v, inst.train)
            ref = sum(oracle.grad_dot_score(inst.model, v, i) for i in inst.train)
            worst = max(worst, _rel(total, ref))
    results.append(PropertyResult("first-order-decomposition", worst, 1e-9, worst < 1e-9))

    # With all contexts distinct the shared-context term vanishes.
    worst = 0.0
    for v in distinct.valuation:
        worst = max(worst, abs(oracle.shared_context_term(distinct.model, v, distinct.train)))
        for i in distinct.train:
            worst = max(
                worst,
                _rel(oracle.grad_dot_score(distinct.model, v, i), oracle.alignment_term(distinct.model, v, i)),
            )
    results.append(PropertyResult("distinct-contexts-shared-term-zero", worst, 1e-9, worst < 1e-9))

    # One-step likelihood change: residual against the first-order prediction
    # shrinks by ~4x per learning-rate halving.
    v = distinct.valuation[0]
    n = len(distinct.train)
    predicted = sum(oracle.grad_dot_score(distinct.model, v, i) for i in distinct.train) / n
    residuals = []
    for lr in (1e-3, 5e-4, 2.5e-4):
        stepped = oracle.gradient_step(distinct.model, distinct.train, lr)
        delta = oracle.log_likelihood(stepped, v) - oracle.log_likelihood(distinct.model, v)
        residuals.append(abs(delta - lr * predicted))
    ratios = [residuals[0] / residuals[1], residuals[1] / residuals[2]]
    ok = all(3.5 <= r <= 4.5 for r in ratios)
    results.append(
        PropertyResult(
            "one-step-dynamics-quadratic-residual",
            max(abs(r - 4.0) for r in ratios),
            0.5,
            ok,
            detail=f"ratios={ratios[0]:.3f},{ratios[1]:.3f}",
        )
    )

    # Engine bridge: pair scores on exported records equal the alignment term.
    records_t = oracle.export_records(distinct.model, distinct.train, role="training")
    records_v = oracle.export_records(distinct.model, distinct.valuation, role="valuation")
    if inject_fault:
        bad = records_t[0]
        records_t[0] = SampleRecord(
            id=bad.id,
            role=bad.role,
            vocab=bad.vocab,
            targets=bad.targets,
            hidden=np.asarray(bad.hidden) + 1e-3,
            probs=bad.probs,
            residual_mass=bad.residual_mass,
        )
    full = records_t[0].vocab
    worst = 0.0
    for v_s, v_r in zip(distinct.valuation, records_v):
        for i_s, i_r in zip(distinct.train, records_t):
            got = score_pairwise(v_r, i_r, full)
            want = oracle.alignment_term(distinct.model, v_s, i_s)
            worst = max(worst, _rel(got, want))
    results.append(PropertyResult("engine-bridge-full-vocab", worst, 1e-6, worst < 1e-6))

    # Restricted-vocabulary control: score error within the residual-mass
    # bound, and the bound shrinks to zero as the vocabulary grows to V.
    v_r, i_r = records_v[0], records_t[0]
    targets = sorted(v_r.target_set() | i_r.target_set())
    rest = [t for t in range(vocab_size) if t not in set(targets)]
    chain = [targets + rest[:j] for j in (0, len(rest) // 2, len(rest))]
    full_score = score_pairwise(v_r, i_r, full)
    worst = 0.0
    last_bound = np.inf
    monotone = True
    for toks in chain:
        sub = RestrictedVocab.from_tokens(toks)
        diff = abs(score_pairwise(v_r, i_r, sub) - full_score)
        bound = restriction_bound(v_r, i_r, sub)
        worst = max(worst, diff - bound)
        if bound > last_bound + 1e-12:
            monotone = False
        last_bound = bound
    ok = worst <= 1e-9 and monotone and last_bound <= 1e-9
    results.append(
        PropertyResult("restricted-vocab-bound", max(worst, last_bound), 1e-9, ok)
    )

    return results
