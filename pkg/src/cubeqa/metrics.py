"""Challenge evaluation criteria: PLCC, SRCC, D/S AUC, B/W CC and runtime.

The pairwise analyses classify every unordered pair of stimuli as
significantly *different* (with a known better member) or *similar*, then ask
how well the predicted score differences reproduce that classification.
"""

import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass
from itertools import combinations
from typing import Optional

import numpy as np
from scipy.optimize import curve_fit
from scipy.stats import rankdata

from .errors import (
    DegenerateVariance,
    MissingConfidenceIntervals,
    NoDifferentPairs,
    OneClassOnly,
)

CRITERIA = ("PLCC", "SRCC", "D/S_auc", "B/W_cc", "RC")


@dataclass(frozen=True)
class ScoredItem:
    id: str
    score: float
    label: float
    ci: Optional[tuple] = None


class ScoredSet:
    """Predicted scores paired with subjective labels (and optional CIs)."""

    def __init__(self, items):
        self.items = [i if isinstance(i, ScoredItem) else ScoredItem(*i) for i in items]
        ids = [i.id for i in self.items]
        if len(set(ids)) != len(ids):
            raise ValueError("ids must be unique")
        for it in self.items:
            if not (np.isfinite(it.score) and np.isfinite(it.label)):
                raise ValueError(f"{it.id}: score and label must be finite")
            if it.ci is not None and it.ci[0] > it.ci[1]:
                raise ValueError(f"{it.id}: CI low exceeds high")

    @classmethod
    def from_arrays(cls, scores, labels, ids=None, cis=None):
        n = len(scores)
        ids = ids if ids is not None else [str(i) for i in range(n)]
        cis = cis if cis is not None else [None] * n
        return cls(ScoredItem(str(i), float(s), float(l), None if c is None else tuple(c))
                   for i, s, l, c in zip(ids, scores, labels, cis))

    def __len__(self):
        return len(self.items)

    @property
    def scores(self):
        return np.array([i.score for i in self.items], dtype=np.float64)

    @property
    def labels(self):
        return np.array([i.label for i in self.items], dtype=np.float64)

    @property
    def has_cis(self):
        return all(i.ci is not None for i in self.items)


def _pearson(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) < 3:
        raise DegenerateVariance("correlation needs at least 3 items")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.sqrt(np.dot(dx, dx))
    sy = np.sqrt(np.dot(dy, dy))
    if sx == 0 or sy == 0:
        raise DegenerateVariance("zero variance in predictions or labels")
    return float(np.clip(np.dot(dx, dy) / (sx * sy), -1.0, 1.0))


def logistic4(x, b1, b2, b3, b4):
    return (b1 - b2) / (1.0 + np.exp(-(x - b3) / np.abs(b4))) + b2


def fit_logistic(pred, label):
    """Least-squares fit of a monotonic 4-parameter logistic from pred to label."""
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label, dtype=np.float64)
    p0 = [label.max(), label.min(), float(np.median(pred)), float(np.std(pred)) or 1.0]
    params, _ = curve_fit(logistic4, pred, label, p0=p0, maxfev=20000)
    return params


def plcc(scores: ScoredSet, logistic_map: bool = False) -> float:
    pred, label = scores.scores, scores.labels
    if logistic_map:
        _pearson(pred, label)  # degenerate-variance check before fitting
        pred = logistic4(pred, *fit_logistic(pred, label))
    return _pearson(pred, label)


def srcc(scores: ScoredSet) -> float:
    return _pearson(rankdata(scores.scores), rankdata(scores.labels))


@dataclass(frozen=True)
class PairJudgment:
    i: str
    j: str
    different: bool
    better: Optional[str]  # id of the better item when different
    delta: float  # predicted score of i minus that of j


def build_pairs(scores: ScoredSet, significance="ci_overlap", delta=0.0):
    """All n(n-1)/2 pairs with their subjective relation.

    ``significance`` is ``"ci_overlap"`` (different iff the label CIs are
    disjoint) or ``"threshold"`` (different iff the label gap exceeds ``delta``).
    """
    if significance == "ci_overlap" and not scores.has_cis:
        raise MissingConfidenceIntervals("ci_overlap needs a CI for every item")
    if significance not in ("ci_overlap", "threshold"):
        raise ValueError(f"unknown significance rule {significance!r}")
    pairs = []
    for a, b in combinations(scores.items, 2):
        if significance == "ci_overlap":
            different = a.ci[1] < b.ci[0] or b.ci[1] < a.ci[0]
        else:
            different = abs(a.label - b.label) > delta
        better = (a.id if a.label > b.label else b.id) if different else None
        pairs.append(PairJudgment(a.id, b.id, different, better, a.score - b.score))
    return pairs


def ds_auc(pairs) -> float:
    """AUC separating different from similar pairs by |predicted difference|.

    Mann-Whitney rank statistic with average ranks, so ties count 1/2.
    """
    mag = np.array([abs(p.delta) for p in pairs], dtype=np.float64)
    pos = np.array([p.different for p in pairs], dtype=bool)
    n_pos = int(pos.sum())
    n_neg = len(pairs) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise OneClassOnly("need both different and similar pairs")
    ranks = rankdata(mag)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def bw_cc(pairs) -> float:
    """Fraction of different pairs whose predicted order matches the subjective one.

    A zero predicted difference is counted as wrong.
    """
    diff = [p for p in pairs if p.different]
    if not diff:
        raise NoDifferentPairs("no significantly different pairs")
    correct = sum(
        1 for p in diff if (p.delta > 0 and p.better == p.i) or (p.delta < 0 and p.better == p.j)
    )
    return correct / len(diff)


class RuntimeReport:
    """Accumulates wall-clock seconds per named stage."""

    STAGES = ("render", "extract", "score")

    def __init__(self):
        self.seconds = {s: 0.0 for s in self.STAGES}
        self._lock = threading.Lock()

    @contextmanager
    def stage(self, name):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.add(name, time.perf_counter() - start)

    def add(self, name, seconds):
        with self._lock:
            self.seconds[name] = self.seconds.get(name, 0.0) + max(0.0, seconds)

    def merge(self, other):
        for k, v in other.seconds.items():
            self.add(k, v)

    @property
    def total(self):
        return float(sum(self.seconds.values()))

    def as_dict(self):
        return {**self.seconds, "total": self.total}


def runtime_report(sections=()):
    """Build a :class:`RuntimeReport` from ``(stage, seconds)`` pairs."""
    rep = RuntimeReport()
    for name, secs in sections:
        rep.add(name, secs)
    return rep


def evaluate_scores(scores: ScoredSet, runtime: RuntimeReport = None, significance=None,
                    delta=0.0, logistic_map=False):
    """The five challenge criteria as an ordered dict plus the pair list used.

    ``significance`` defaults to CI overlap when every item carries a CI and to
    the label threshold rule otherwise.
    """
    if significance is None:
        significance = "ci_overlap" if scores.has_cis else "threshold"
    pairs = build_pairs(scores, significance, delta)
    runtime = runtime or RuntimeReport()
    metrics = {
        "PLCC": plcc(scores, logistic_map),
        "SRCC": srcc(scores),
        "D/S_auc": ds_auc(pairs),
        "B/W_cc": bw_cc(pairs),
        "RC": runtime.total,
    }
    return metrics, pairs, significance
