"""Forward-only training-data valuation from exported activations.

The engine scores how much each training sample raises the likelihood of a
valuation sample, using only per-position hidden states and next-token
probabilities from a single forward pass: pair scores weight hidden-state
similarity by the similarity of token-level prediction errors. An exact
gradient-dynamics oracle (a model whose every context embedding is a free
parameter) verifies the scores against true first-order likelihood changes.
"""

from .dumpio import Manifest, SampleEntry, load_records, read_dump, write_dump
from .metrics import EvalReport, auc, evaluate, pseudo_labels, recall_at_class
from .records import (
    ProbRow,
    RestrictedVocab,
    SampleRecord,
    ScoreTable,
    Sketch,
    ValidationReport,
    validate_record,
)
from .sketch import ErrorRow, batch_vocab, build_sketch, error_row
from .valuation import (
    emb_score,
    group_value,
    rank,
    read_scores_csv,
    restriction_bound,
    run_emb_baseline,
    run_valuation,
    score_pairwise,
    score_sketch,
    write_scores_csv,
)

__all__ = [
    "Manifest",
    "SampleEntry",
    "load_records",
    "read_dump",
    "write_dump",
    "EvalReport",
    "auc",
    "evaluate",
    "pseudo_labels",
    "recall_at_class",
    "ProbRow",
    "RestrictedVocab",
    "SampleRecord",
    "ScoreTable",
    "Sketch",
    "ValidationReport",
    "validate_record",
    "ErrorRow",
    "batch_vocab",
    "build_sketch",
    "error_row",
    "emb_score",
    "group_value",
    "rank",
    "read_scores_csv",
    "restriction_bound",
    "run_emb_baseline",
    "run_valuation",
    "score_pairwise",
    "score_sketch",
    "write_scores_csv",
]

__version__ = "0.1.0"
