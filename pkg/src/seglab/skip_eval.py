"""Skip-position ranking evaluation: HR@K and NDCG@K over the predicted
most-skippable ordering, the position-statistics baseline family
(Random / AllPosition / UserPosition / ItemPosition), and cold-item
slicing.

Rankings order segments by ascending interest score (most likely skip
first) with ties broken by ascending segment index, so every evaluation is
deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.stats import spearmanr


@dataclass
class RankingReport:
    hr1: float
    hr5: float
    n5: float
    hr10: float
    n10: float
    sample_count: int
    slice_name: str = "all"

    def to_dict(self) -> dict:
        return {
            "hr@1": self.hr1, "hr@5": self.hr5, "ndcg@5": self.n5,
            "hr@10": self.hr10, "ndcg@10": self.n10,
            "sample_count": self.sample_count, "slice": self.slice_name,
        }


def rank_segments(p) -> np.ndarray:
    """1-based segment ids ordered most-skippable first (ascending score,
    ties by ascending index)."""
    p = np.asarray(p)
    return np.argsort(p, kind="stable") + 1


def rank_of_segment(p, y: int) -> int:
    """Position of segment y in rank_segments(p), computed directly."""
    p = np.asarray(p)
    py = p[y - 1]
    below = int((p < py).sum())
    ties_before = int((p[: y - 1] == py).sum())
    return below + ties_before + 1


def ranking_metrics(rank_of_y: int, k: int):
    """(hr, ndcg) of a single relevant item at the given rank."""
    if rank_of_y < 1:
        raise ValueError("rank must be >= 1")
    if rank_of_y > k:
        return 0.0, 0.0
    return 1.0, 1.0 / math.log2(rank_of_y + 1)


class PositionModelKind(Enum):
    RANDOM = "random"
    ALL_POSITION = "allposition"
    USER_POSITION = "userposition"
    ITEM_POSITION = "itemposition"


@dataclass
class PositionModel:
    """Empirical skip-position probabilities, Laplace-smoothed (+1) and
    conditioned on segment count N. Unknown keys fall back to the global
    (AllPosition) table, then to uniform."""

    kind: PositionModelKind
    tables: dict        # (key, n) -> probability vector over 1..n
    all_tables: dict    # n -> probability vector

    def probabilities(self, user_id, video_id, n: int) -> np.ndarray:
        if self.kind is PositionModelKind.RANDOM:
            raise ValueError("the random baseline has no probability table")
        if self.kind is PositionModelKind.USER_POSITION:
            probs = self.tables.get((user_id, n))
        elif self.kind is PositionModelKind.ITEM_POSITION:
            probs = self.tables.get((video_id, n))
        else:
            probs = None
        if probs is None:
            probs = self.all_tables.get(n)
        if probs is None:
            probs = np.full(n, 1.0 / n)
        return probs


def fit_position_model(samples, kind: PositionModelKind) -> PositionModel:
    """Fit from skip-labeled samples (normally train plus valid users)."""
    counts = {}
    all_counts = {}
    for s in samples:
        if not s.skipped:
            continue
        all_counts.setdefault(s.n, np.zeros(s.n))[s.y - 1] += 1
        if kind is PositionModelKind.USER_POSITION:
            key = (s.user_id, s.n)
        elif kind is PositionModelKind.ITEM_POSITION:
            key = (s.video_id, s.n)
        else:
            continue
        counts.setdefault(key, np.zeros(s.n))[s.y - 1] += 1
    tables = {k: (c + 1.0) / (c + 1.0).sum() for k, c in counts.items()}
    all_tables = {n: (c + 1.0) / (c + 1.0).sum() for n, c in all_counts.items()}
    return PositionModel(kind=kind, tables=tables, all_tables=all_tables)


def baseline_scorer(pm: PositionModel, seed: int = 0):
    """Adapts a PositionModel to the scorer interface: low score means
    likely skip, so scores are negated probabilities. The random baseline
    samples scores from a seeded stream."""

    def scorer(samples):
        rng = np.random.default_rng(seed)
        out = []
        for s in samples:
            if pm.kind is PositionModelKind.RANDOM:
                out.append(rng.random(s.n))
            else:
                out.append(-pm.probabilities(s.user_id, s.video_id, s.n))
        return out

    return scorer


def evaluate_skip(scorer, samples, slice_name: str = "all") -> RankingReport:
    """Mean HR@{1,5,10} and NDCG@{5,10} over skip-labeled samples."""
    samples = [s for s in samples if s.skipped]
    if not samples:
        raise ValueError("no skip-labeled samples to evaluate")
    scores = scorer(samples)
    sums = np.zeros(5)
    for s, p in zip(samples, scores):
        r = rank_of_segment(p, s.y)
        h1, _ = ranking_metrics(r, 1)
        h5, n5 = ranking_metrics(r, 5)
        h10, n10 = ranking_metrics(r, 10)
        sums += (h1, h5, n5, h10, n10)
    means = sums / len(samples)
    return RankingReport(*means.tolist(), sample_count=len(samples),
                         slice_name=slice_name)


def cold_item_slice(samples, train_video_ids):
    """Interactions whose video never appears in the training split."""
    train_video_ids = set(train_video_ids)
    return [s for s in samples if s.video_id not in train_video_ids]


def pooled_spearman(scorer, samples, truth) -> float:
    """Spearman correlation between predicted scores and planted interest,
    pooled over all segments of the given interactions."""
    samples = list(samples)
    scores = scorer(samples)
    pred = np.concatenate([np.asarray(p) for p in scores])
    planted = np.concatenate([truth.g_for(s.row)[: s.n] for s in samples])
    return float(spearmanr(pred, planted).statistic)
