"""Evaluation metrics: accuracy, one-vs-all F1, mean F1, and the
fraction of studies with a primary tumor among the top-k candidates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .detection import Box3D, iou3d


@dataclass
class ConfusionTally:
    classes: list[str]
    counts: np.ndarray = field(default=None)   # (C,C) rows=truth, cols=predicted

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((len(self.classes), len(self.classes)), dtype=int)
        self.counts = np.asarray(self.counts)

    def add(self, truth: str, predicted: str) -> None:
        self.counts[self.classes.index(truth), self.classes.index(predicted)] += 1

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def tp(self, c: int) -> int:
        return int(self.counts[c, c])

    def fp(self, c: int) -> int:
        return int(self.counts[:, c].sum() - self.counts[c, c])

    def fn(self, c: int) -> int:
        return int(self.counts[c, :].sum() - self.counts[c, c])


def tally_from_pairs(pairs: list[tuple[str, str]], classes: list[str]) -> ConfusionTally:
    tally = ConfusionTally(list(classes))
    for truth, pred in pairs:
        tally.add(truth, pred)
    return tally


def f1_one_vs_all(tally: ConfusionTally, class_name: str) -> float:
    """2PR/(P+R); any empty denominator yields 0."""
    c = tally.classes.index(class_name)
    tp, fp, fn = tally.tp(c), tally.fp(c), tally.fn(c)
    if tp + fp == 0 or tp + fn == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def mean_f1(tally: ConfusionTally) -> float:
    return float(np.mean([f1_one_vs_all(tally, c) for c in tally.classes]))


def accuracy(tally: ConfusionTally) -> float:
    if tally.n == 0:
        raise ValueError("empty tally")
    return float(np.trace(tally.counts) / tally.n)


def p1td(per_study: list[tuple[list[Box3D], list[Box3D]]], k: int,
         hit_iou: float) -> float:
    """per_study: (primary ground-truth boxes, candidates ranked by score).
    Returns the fraction of studies where any top-k candidate reaches
    ``hit_iou`` with any primary box."""
    if not per_study:
        raise ValueError("no studies")
    hits = 0
    for truths, ranked in per_study:
        top = ranked[:k]
        if any(iou3d(c, t) >= hit_iou for c in top for t in truths):
            hits += 1
    return hits / len(per_study)
