#!/usr/bin/env python3
"""Walkthrough: why the forward-only score tracks true training influence.

The reference model makes every context embedding a free parameter, so the
exact gradient of a sample's log-likelihood is computable in closed form.
This script shows, numerically:

  1. the engine's pair score equals the inner product of the two samples'
     unembedding-matrix gradients (an algebraic identity);
  2. with an added shared-context term it equals the full gradient dot
     product over all parameters;
  3. one small gradient-descent step changes a valuation sample's
     log-likelihood by (lr/n) * sum of those scores, up to O(lr^2).
"""

import numpy as np

from fwdval import oracle
from fwdval.valuation import score_pairwise

inst = oracle.random_instance(seed=0, shared_contexts=4)
model, train, valuation = inst.model, inst.train, inst.valuation
v = valuation[0]

print("pair-level identities for one valuation sample:")
for i in train[:4]:
    align = oracle.alignment_term(model, v, i)
    shared = oracle.shared_context_term(model, v, [i])
    grad_dot = oracle.grad_dot_score(model, v, i)
    print(f"  vs {i.id}: alignment={align:+.6f} shared={shared:+.6f} "
          f"sum={align + shared:+.6f} grad_dot={grad_dot:+.6f}")

# The engine computes the alignment term from exported records alone.
recs_t = oracle.export_records(model, train, role="training")
recs_v = oracle.export_records(model, valuation, role="valuation")
engine = score_pairwise(recs_v[0], recs_t[0], recs_t[0].vocab)
print(f"\nengine score on exported records: {engine:.10f}")
print(f"alignment term from the model:    {oracle.alignment_term(model, v, train[0]):.10f}")

# First-order dynamics: predicted vs actual likelihood change after one step.
n = len(train)
predicted_rate = sum(oracle.grad_dot_score(model, v, i) for i in train) / n
print(f"\npredicted d(ln p_v)/d(lr) = {predicted_rate:+.6f}")
for lr in (1e-3, 5e-4, 2.5e-4):
    stepped = oracle.gradient_step(model, train, lr)
    delta = oracle.log_likelihood(stepped, v) - oracle.log_likelihood(model, v)
    residual = abs(delta - lr * predicted_rate)
    print(f"  lr={lr:.1e}: actual delta={delta:+.8f} predicted={lr * predicted_rate:+.8f} "
          f"residual={residual:.2e}")
print("residuals shrink ~4x per halving: the score is the exact first-order term")
