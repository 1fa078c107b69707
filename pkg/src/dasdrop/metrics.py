"""ROC-AUC as the Mann-Whitney statistic with exact tie handling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UndefinedMetricError


@dataclass
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray
    users: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=object))
    index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.scores) != len(self.labels):
            raise ValueError("scores and labels differ in length")


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks, tied values sharing the mean of their rank span."""
    x = np.asarray(x)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], len(xs)]
    # positions start..end-1 (0-based) share rank (start + end + 1) / 2
    avg = (starts + ends + 1) / 2.0
    ranks = np.empty(len(x), dtype=np.float64)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def auc(scores, labels=None) -> float:
    """P(score+ > score-) + 0.5 * P(tie) over all positive/negative pairs."""
    if isinstance(scores, ScoredSet):
        scores, labels = scores.scores, scores.labels
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(f"AUC undefined with {n_pos} positives and {n_neg} negatives")
    r = average_ranks(s)
    # rank sums are half-integers, so U is exact in float64 at these sizes
    u = r[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def macro_auc(scored: ScoredSet) -> float:
    """Mean per-user AUC over users that have both classes."""
    vals = []
    for u in np.unique(scored.users):
        m = scored.users == u
        y = scored.labels[m]
        if 0 < y.sum() < len(y):
            vals.append(auc(scored.scores[m], y))
    if not vals:
        raise UndefinedMetricError("no user has both classes")
    return float(np.mean(vals))
