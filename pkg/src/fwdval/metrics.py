"""Ranking-quality evaluation of score tables against class pseudo-labels.

For each valuation point, training samples get pseudo-label 1 when they
share the valuation point's class (and, in mislabel mode, are additionally
clean), 0 otherwise. AUC is the Mann-Whitney statistic of the scores against
those labels; Recall is the fraction of same-class samples inside the top-p
ranks, with p the class size, so a perfect ranking scores exactly 1.0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .records import ScoreTable

MODES = ("influence", "mislabel")


class MetricError(ValueError):
    pass


class UndefinedAUC(MetricError):
    """Label vector has a single class; AUC is undefined for it."""


def pseudo_labels(
    train_labels: Sequence[str],
    valuation_label: str,
    mode: str = "influence",
    clean_flags: Sequence[bool] | None = None,
) -> np.ndarray:
    """Binary relevance vector over training samples for one valuation point."""
    if mode not in MODES:
        raise MetricError(f"unknown mode: {mode}")
    labels = np.asarray([lab == valuation_label for lab in train_labels], dtype=bool)
    if mode == "mislabel":
        if clean_flags is None:
            raise MetricError("mislabel mode requires clean flags")
        clean = np.asarray(clean_flags, dtype=bool)
        if clean.shape != labels.shape:
            raise MetricError(
                f"length mismatch: {len(train_labels)} labels vs {clean.size} clean flags"
            )
        labels &= clean
    return labels.astype(np.int8)


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC via midranks: P(s_pos > s_neg) + 0.5 P(equal)."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise MetricError("scores and labels must be 1-d and aligned")
    pos = int(np.sum(y == 1))
    neg = int(np.sum(y == 0))
    if pos == 0 or neg == 0:
        raise UndefinedAUC("AUC undefined: labels contain a single class")
    ranks = _midranks(s)
    rank_sum = float(ranks[y == 1].sum())
    return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg)


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties averaged."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def recall_at_class(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Fraction of positives inside the top-p scores, p = number of positives.

    Ties in the ranking are broken by ascending index, matching the engine's
    deterministic ranking rule.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise MetricError("scores and labels must be 1-d and aligned")
    p = int(np.sum(y == 1))
    if p == 0:
        raise MetricError("recall undefined: no positive labels")
    order = np.lexsort((np.arange(s.size), -s))
    top = order[:p]
    return float(np.sum(y[top] == 1)) / p


@dataclass
class EvalReport:
    """Per-valuation AUC/Recall plus means and spread across valuation points.

    Standard deviations are across valuation points (ddof=1; 0.0 when only
    one point is defined). Valuation points whose pseudo-labels collapse to
    a single class are skipped and counted, not errored.
    """

    per_valuation: list[dict] = field(default_factory=list)
    mean_auc: float = 0.0
    mean_recall: float = 0.0
    std_auc: float = 0.0
    std_recall: float = 0.0
    n_valuation: int = 0
    skipped: list[str] = field(default_factory=list)

    def to_text(self) -> str:
        lines = []
        for row in self.per_valuation:
            lines.append(f"valuation {row['valuation_id']}: auc={row['auc']!r} recall={row['recall']!r}")
        for vid in self.skipped:
            lines.append(f"valuation {vid}: skipped (single-class pseudo-labels)")
        lines.append(f"n_valuation {self.n_valuation}")
        lines.append(f"skipped {len(self.skipped)}")
        lines.append(f"mean_auc {self.mean_auc!r}")
        lines.append(f"std_auc {self.std_auc!r}")
        lines.append(f"mean_recall {self.mean_recall!r}")
        lines.append(f"std_recall {self.std_recall!r}")
        return "\n".join(lines) + "\n"


def evaluate(
    table: ScoreTable,
    labels: dict[str, str],
    mode: str = "influence",
    clean_flags: dict[str, bool] | None = None,
) -> EvalReport:
    """Score a table against class labels, averaging across valuation points."""
    missing = [tid for tid in table.training_ids if tid not in labels]
    missing += [vid for vid in table.valuation_ids if vid not in labels]
    if missing:
        raise MetricError(f"labels missing for ids: {', '.join(missing[:5])}")
    train_labels = [labels[tid] for tid in table.training_ids]
    flags = None
    if mode == "mislabel":
        if clean_flags is None:
            raise MetricError("mislabel mode requires clean flags")
        try:
            flags = [bool(clean_flags[tid]) for tid in table.training_ids]
        except KeyError as e:
            raise MetricError(f"clean flag missing for training id {e}") from None

    report = EvalReport()
    aucs: list[float] = []
    recalls: list[float] = []
    for vid in table.valuation_ids:
        y = pseudo_labels(train_labels, labels[vid], mode, flags)
        row = table.row(vid)
        try:
            a = auc(row, y)
        except UndefinedAUC:
            report.skipped.append(vid)
            continue
        r = recall_at_class(row, y)
        report.per_valuation.append({"valuation_id": vid, "auc": a, "recall": r})
        aucs.append(a)
        recalls.append(r)

    if not aucs:
        raise MetricError("every valuation point has undefined metrics")
    report.n_valuation = len(aucs)
    report.mean_auc = float(np.mean(aucs))
    report.mean_recall = float(np.mean(recalls))
    report.std_auc = float(np.std(aucs, ddof=1)) if len(aucs) > 1 else 0.0
    report.std_recall = float(np.std(recalls, ddof=1)) if len(recalls) > 1 else 0.0
    return report
