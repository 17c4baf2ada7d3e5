"""Domain types, segment grid arithmetic, label derivation, and user splits.

Shared by every other module. All functions here are pure and safe to call
from any thread.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

DEFAULT_SEGMENT_LENGTH_S = 5.0
DEFAULT_MAX_SEGMENTS = 40
DEFAULT_COMPLETED_EPSILON_S = 0.25
DEFAULT_MAX_HISTORY = 20


@dataclass(frozen=True)
class InteractionRecord:
    """One user-video view event; the source of the skip label."""

    user_id: str
    video_id: str
    timestamp: float
    duration_s: float
    watch_time_s: float

    def clamped(self) -> "InteractionRecord":
        """Apply ingest rules: watch time above duration is clamped."""
        if self.duration_s <= 0:
            raise ValueError(f"non-positive duration {self.duration_s!r}")
        w = min(max(self.watch_time_s, 0.0), self.duration_s)
        if w == self.watch_time_s:
            return self
        return InteractionRecord(self.user_id, self.video_id, self.timestamp,
                                 self.duration_s, w)


@dataclass(frozen=True)
class SegmentGrid:
    """Fixed-length segment grid over video time."""

    segment_length_s: float = DEFAULT_SEGMENT_LENGTH_S
    max_segments: int = DEFAULT_MAX_SEGMENTS


class SkipKind(Enum):
    SKIPPED = "skipped"
    COMPLETED = "completed"


@dataclass(frozen=True)
class SkipLabel:
    kind: SkipKind
    y: int | None = None  # 1-based exit segment, present iff SKIPPED


@dataclass(frozen=True)
class ViewHistory:
    """Chronological watched-segment entries, truncated to the last m_max."""

    entries: tuple  # of (video_id, segment_index)
    m_max: int = DEFAULT_MAX_HISTORY


@dataclass(frozen=True)
class DatasetSplit:
    train: frozenset
    valid: frozenset
    test: frozenset
    seed: int = 0


def num_segments(duration_s: float, grid: SegmentGrid) -> int:
    """Number of segments covering a video: ceil(duration / t), capped."""
    if duration_s <= 0:
        raise ValueError(f"non-positive duration {duration_s!r}")
    n = math.ceil(duration_s / grid.segment_length_s)
    return max(1, min(n, grid.max_segments))


def derive_skip_label(rec: InteractionRecord, grid: SegmentGrid,
                      epsilon_s: float = DEFAULT_COMPLETED_EPSILON_S) -> SkipLabel:
    """Completed if the watch covers the duration up to epsilon, else the
    exit segment y = the segment containing the exit instant."""
    if rec.watch_time_s >= rec.duration_s - epsilon_s:
        return SkipLabel(SkipKind.COMPLETED)
    n = num_segments(rec.duration_s, grid)
    y = min(int(rec.watch_time_s // grid.segment_length_s) + 1, n)
    return SkipLabel(SkipKind.SKIPPED, y)


def split_users(user_ids: Iterable, ratios: tuple = (8, 1, 1),
                seed: int = 0) -> DatasetSplit:
    """Deterministic user partition by ratio, largest-remainder rounding.

    Leftover seats go to the split with the largest remainder; remainder
    ties are resolved in favor of the later split, so excess lands in test.
    """
    ids = sorted(set(str(u) for u in user_ids))
    if len(ids) < 10:
        raise ValueError(f"need at least 10 users, got {len(ids)}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ids))
    total = sum(ratios)
    exact = [len(ids) * r / total for r in ratios]
    sizes = [int(e) for e in exact]
    leftover = len(ids) - sum(sizes)
    order = sorted(range(3), key=lambda i: (exact[i] - sizes[i], i), reverse=True)
    for i in range(leftover):
        sizes[order[i]] += 1
    cut1, cut2 = sizes[0], sizes[0] + sizes[1]
    shuffled = [ids[i] for i in perm]
    return DatasetSplit(train=frozenset(shuffled[:cut1]),
                        valid=frozenset(shuffled[cut1:cut2]),
                        test=frozenset(shuffled[cut2:]),
                        seed=seed)


def watched_segments(rec: InteractionRecord, grid: SegmentGrid,
                     epsilon_s: float = DEFAULT_COMPLETED_EPSILON_S) -> int:
    """How many leading segments the user saw: y if skipped, N if completed."""
    label = derive_skip_label(rec, grid, epsilon_s)
    if label.kind is SkipKind.COMPLETED:
        return num_segments(rec.duration_s, grid)
    return label.y


def build_history(user_interactions: Sequence[InteractionRecord],
                  query_time: float, grid: SegmentGrid,
                  m_max: int = DEFAULT_MAX_HISTORY,
                  epsilon_s: float = DEFAULT_COMPLETED_EPSILON_S,
                  history_unit: str = "segments") -> ViewHistory:
    """Expand interactions before query_time into watched segment entries.

    history_unit "segments" keeps the last m_max segment entries (default);
    "videos" keeps all segments of the last m_max interactions.
    """
    entries = []
    kept_videos = 0
    for rec in reversed(user_interactions):
        if rec.timestamp >= query_time:
            continue
        w = watched_segments(rec, grid, epsilon_s)
        block = [(rec.video_id, s) for s in range(1, w + 1)]
        entries = block + entries
        if history_unit == "videos":
            kept_videos += 1
            if kept_videos >= m_max:
                break
        else:
            if len(entries) >= m_max:
                break
    if history_unit != "videos":
        entries = entries[-m_max:]
    return ViewHistory(entries=tuple(entries), m_max=m_max)


@dataclass(frozen=True)
class DurationBuckets:
    """Duration deciles with per-bucket median view-ratio thresholds."""

    boundaries: tuple  # n_buckets - 1 ascending duration values
    thresholds: tuple  # n_buckets view-ratio thresholds
    ranges: tuple = field(default=())  # (lo, hi) per bucket, descriptive

    def bucket_index(self, duration_s: float) -> int:
        # durations equal to a boundary fall in the lower bucket; values
        # outside the fitted range land in the nearest edge bucket
        return bisect_left(self.boundaries, duration_s)

    def threshold(self, duration_s: float) -> float:
        return self.thresholds[self.bucket_index(duration_s)]

    def as_list(self):
        return list(zip(self.ranges, self.thresholds))


def compute_duration_buckets(train_records: Sequence[InteractionRecord],
                             n_buckets: int = 10,
                             grid: SegmentGrid | None = None) -> DurationBuckets:
    """Fit duration deciles on the training split and the median view ratio
    per bucket. Bucket assignment is monotone-invariant because boundaries
    are order statistics of the training durations."""
    if not train_records:
        raise ValueError("no training records")
    durations = np.array([r.duration_s for r in train_records], dtype=np.float64)
    if len(set(durations.tolist())) < n_buckets:
        raise ValueError(f"need at least {n_buckets} distinct durations")
    qs = [j / n_buckets for j in range(1, n_buckets)]
    boundaries = tuple(float(b) for b in
                       np.quantile(durations, qs, method="inverted_cdf"))
    ratios = [[] for _ in range(n_buckets)]
    probe = DurationBuckets(boundaries=boundaries, thresholds=(0.0,) * n_buckets)
    for rec in train_records:
        ratios[probe.bucket_index(rec.duration_s)].append(
            rec.watch_time_s / rec.duration_s)
    thresholds = [float(np.median(r)) if r else None for r in ratios]
    # an empty bucket (possible under heavy duplication) inherits its
    # nearest non-empty neighbor's threshold
    for i in range(n_buckets):
        if thresholds[i] is None:
            near = min((j for j in range(n_buckets) if thresholds[j] is not None),
                       key=lambda j: abs(j - i))
            thresholds[i] = thresholds[near]
    lo = float(durations.min())
    hi = float(durations.max())
    edges = (lo,) + boundaries + (hi,)
    ranges = tuple((edges[i], edges[i + 1]) for i in range(n_buckets))
    return DurationBuckets(boundaries=boundaries, thresholds=tuple(thresholds),
                           ranges=ranges)


def derive_effective_view_label(rec: InteractionRecord,
                                buckets: DurationBuckets) -> int:
    """CTR label: 1 iff the view ratio reaches its bucket threshold."""
    ratio = rec.watch_time_s / rec.duration_s
    return 1 if ratio >= buckets.threshold(rec.duration_s) else 0
