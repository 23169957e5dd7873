"""Sample construction from impression logs.

Daily aggregation, mean-threshold positive/negative labels, sparse and
ambiguous exclusion, and the two training sets:

* the *strict* set (one row per surviving creative-day bucket, label 1/0) that
  trains the stage-1 interaction model;
* the *teacher* set (one row per impression, label = click) that trains the
  rank model, sparse and ambiguous creatives included.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .datagen import ImpressionLog
from .errors import EmptyDataset

POSITIVE = "positive"
NEGATIVE = "negative"
EXCLUDED_SPARSE = "excluded_sparse"
EXCLUDED_AMBIGUOUS = "excluded_ambiguous"
LABELS = (POSITIVE, NEGATIVE, EXCLUDED_SPARSE, EXCLUDED_AMBIGUOUS)


class DailyAggregate(NamedTuple):
    creative_id: int
    day: int
    exposures: int
    clicks: int
    ctr: float


@dataclass
class DailyAggregates:
    """Column-wise (creative, day) rollups sorted by (creative_id, day)."""

    creative_id: np.ndarray
    day: np.ndarray
    exposures: np.ndarray
    clicks: np.ndarray

    def __len__(self):
        return int(self.creative_id.size)

    @property
    def ctr(self) -> np.ndarray:
        e = self.exposures.astype(float)
        return np.divide(self.clicks, e, out=np.zeros_like(e), where=e > 0)

    def __iter__(self) -> Iterator[DailyAggregate]:
        for c, d, e, k, r in zip(self.creative_id.tolist(), self.day.tolist(),
                                 self.exposures.tolist(), self.clicks.tolist(), self.ctr.tolist()):
            yield DailyAggregate(c, d, e, k, r)

    @classmethod
    def from_rows(cls, rows) -> "DailyAggregates":
        rows = list(rows)
        if not rows:
            z = np.zeros(0, dtype=np.int64)
            return cls(z, z.copy(), z.copy(), z.copy())
        cols = list(zip(*rows))
        return cls(*(np.asarray(cols[i], dtype=np.int64) for i in range(4)))

    def scaled(self, k: int) -> "DailyAggregates":
        return DailyAggregates(self.creative_id, self.day, self.exposures * k, self.clicks * k)


def aggregate_daily(records, period: int = 1) -> DailyAggregates:
    """Roll impressions up to (creative, bucket) counts; bucket = day // period."""
    log = records if isinstance(records, ImpressionLog) else ImpressionLog.from_records(list(records))
    if len(log) == 0:
        return DailyAggregates.from_rows([])
    bucket = log.day.astype(np.int64) // int(period)
    cid = log.creative_id.astype(np.int64)
    nb = int(bucket.max()) + 1
    key = cid * nb + bucket
    uniq, inv = np.unique(key, return_inverse=True)
    exposures = np.bincount(inv)
    clicks = np.bincount(inv, weights=log.clicked.astype(np.int64)).astype(np.int64)
    return DailyAggregates(uniq // nb, uniq % nb, exposures.astype(np.int64), clicks)


@dataclass
class LabeledSamples:
    creative_id: np.ndarray
    day: np.ndarray
    label: np.ndarray        # entries from LABELS

    def __len__(self):
        return int(self.creative_id.size)

    def counts(self) -> dict[str, int]:
        return {lab: int(np.sum(self.label == lab)) for lab in LABELS}

    def with_labels(self, label: np.ndarray) -> "LabeledSamples":
        return LabeledSamples(self.creative_id, self.day, label)


def label_samples(aggs: DailyAggregates, groups: np.ndarray | None = None) -> LabeledSamples:
    """Mean-threshold labels.

    ``positive`` iff exposures > mean exposures and clicks > mean clicks;
    ``negative`` iff exposures > mean exposures and clicks < mean clicks;
    everything else (thin exposure, or clicks exactly at the mean) is
    ``excluded_sparse``. Means are global unless ``groups`` maps each creative
    id to a group, in which case they are taken per group.
    """
    n = len(aggs)
    if n == 0:
        raise EmptyDataset("no aggregates to label")
    e = aggs.exposures.astype(float)
    c = aggs.clicks.astype(float)
    if groups is None:
        e_bar = np.full(n, e.mean())
        c_bar = np.full(n, c.mean())
    else:
        g = np.asarray(groups)[aggs.creative_id]
        _, gi = np.unique(g, return_inverse=True)
        cnt = np.bincount(gi)
        e_bar = (np.bincount(gi, weights=e) / cnt)[gi]
        c_bar = (np.bincount(gi, weights=c) / cnt)[gi]
    label = np.full(n, EXCLUDED_SPARSE, dtype=object)
    exposed = e > e_bar
    label[exposed & (c > c_bar)] = POSITIVE
    label[exposed & (c < c_bar)] = NEGATIVE
    return LabeledSamples(aggs.creative_id.copy(), aggs.day.copy(), label)


class AmbiguityReport(NamedTuple):
    creative_ids: np.ndarray
    rate: float
    labeled: LabeledSamples


def detect_ambiguous(labeled: LabeledSamples) -> AmbiguityReport:
    """Flag creatives that are positive on some day and negative on another.

    All buckets of a flagged creative are relabeled ``excluded_ambiguous``. The
    rate is flagged creatives over creatives with at least one non-sparse label.
    """
    cid = labeled.creative_id
    pos = np.unique(cid[labeled.label == POSITIVE])
    neg = np.unique(cid[labeled.label == NEGATIVE])
    ambiguous = np.intersect1d(pos, neg)
    decided = np.union1d(pos, neg)
    rate = float(ambiguous.size / decided.size) if decided.size else 0.0
    label = labeled.label.copy()
    label[np.isin(cid, ambiguous)] = EXCLUDED_AMBIGUOUS
    return AmbiguityReport(ambiguous, rate, labeled.with_labels(label))


@dataclass
class Dataset:
    """Rows of (creative, label); features are looked up in a shared table.

    ``weights`` lets many identical rows be stored once (see :meth:`compact`).
    """

    creative_id: np.ndarray
    y: np.ndarray
    day: np.ndarray | None = None
    weights: np.ndarray | None = None
    table: object = None

    def __len__(self):
        return int(self.creative_id.size)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.creative_id[idx], self.y[idx],
                       None if self.day is None else self.day[idx],
                       None if self.weights is None else self.weights[idx], self.table)

    def inputs(self, idx=None):
        ids = self.creative_id if idx is None else self.creative_id[idx]
        return self.table.batch(ids)

    def sample_weights(self) -> np.ndarray:
        return np.ones(len(self)) if self.weights is None else self.weights

    def compact(self) -> "Dataset":
        """Merge rows sharing a creative into one weighted row with fractional label."""
        w = self.sample_weights()
        uniq, inv = np.unique(self.creative_id, return_inverse=True)
        tot = np.bincount(inv, weights=w)
        pos = np.bincount(inv, weights=w * self.y)
        return Dataset(uniq, pos / tot, None, tot, self.table)


def build_strict_trainset(labeled: LabeledSamples, catalog=None, features=None) -> Dataset:
    """One 1/0 example per positive or negative bucket, ordered by (creative, day)."""
    keep = np.isin(labeled.label, (POSITIVE, NEGATIVE))
    if not keep.any():
        raise EmptyDataset("no positive or negative buckets survive labeling")
    idx = np.flatnonzero(keep)
    order = idx[np.lexsort((labeled.day[idx], labeled.creative_id[idx]))]
    y = (labeled.label[order] == POSITIVE).astype(float)
    return Dataset(labeled.creative_id[order].astype(np.int64), y,
                   labeled.day[order].astype(np.int64), None, features)


def build_teacher_trainset(records, catalog=None, features=None,
                           neg_sample_rate: float = 1.0, rng=None) -> Dataset:
    """One example per impression with the click as label (nothing excluded)."""
    log = records if isinstance(records, ImpressionLog) else ImpressionLog.from_records(list(records))
    cid = log.creative_id.astype(np.int64)
    y = log.clicked.astype(float)
    day = log.day.astype(np.int64)
    if neg_sample_rate < 1.0:
        keep = (y > 0) | (rng.uniform(size=y.size) < neg_sample_rate)
        cid, y, day = cid[keep], y[keep], day[keep]
    return Dataset(cid, y, day, None, features)


def group_summary(aggs: DailyAggregates, catalog, field: str) -> list[tuple]:
    """(field value, exposures, clicks, ctr) rows, one per value, for CSV export."""
    vals = catalog.field_column(field)[aggs.creative_id]
    rows = []
    for v in np.unique(vals):
        m = vals == v
        e, k = int(aggs.exposures[m].sum()), int(aggs.clicks[m].sum())
        rows.append((int(v), e, k, k / e if e else 0.0))
    return rows


def well_exposed(aggs: DailyAggregates, min_impressions: int = 10_000) -> np.ndarray:
    """Creatives the labeler can judge: some bucket above the mean exposure and
    at least ``min_impressions`` impressions in total."""
    if len(aggs) == 0:
        return np.zeros(0, dtype=np.int64)
    above = np.unique(aggs.creative_id[aggs.exposures > aggs.exposures.mean()])
    ids, inv = np.unique(aggs.creative_id, return_inverse=True)
    total = np.bincount(inv, weights=aggs.exposures)
    return np.intersect1d(above, ids[total >= min_impressions])


def ambiguity_recovery(detected, drifted, well) -> dict:
    """Detected ambiguous creatives against the planted drifted set, both restricted to ``well``."""
    det = np.intersect1d(detected, well)
    true = np.intersect1d(drifted, well)
    hit = np.intersect1d(det, true).size
    n = np.asarray(well).size
    return {"well_exposed": int(n),
            "well_exposed_rate": det.size / n if n else float("nan"),
            "precision": hit / det.size if det.size else float("nan"),
            "recall": hit / true.size if true.size else float("nan")}
