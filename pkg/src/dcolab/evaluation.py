"""Offline replay evaluation on click logs.

A logged impression counts for a policy only when the policy, asked to pick
among the sku's candidates, picks the creative that was actually shown; the
replayed CTR (sCTR) is clicks over those valid impressions. With a uniformly
random logging policy this is an unbiased estimate of the policy's online
CTR. Stateful two-stage policies update their bandit only on valid
impressions, because only those carry an observed reward.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import bandit
from .datagen import ImpressionLog
from .errors import InvalidArgument
from .numerics import RngStream

DEFAULT_BUCKET = 1000


@dataclass
class ReplayMetrics:
    valid_impressions: int
    clicks: int
    curve: list[tuple[int, float]] = field(default_factory=list)

    @property
    def defined(self) -> bool:
        return self.valid_impressions > 0

    @property
    def sctr(self) -> float:
        """clicks / valid impressions; NaN (see :attr:`defined`) with no valid impressions."""
        return self.clicks / self.valid_impressions if self.defined else float("nan")


# ------------------------------------------------------------------ policies
class ReplayPolicy:
    """Base class: ``valid_mask`` marks the log rows whose creative the policy picks."""

    stateless = True

    def valid_mask(self, log: ImpressionLog, rng: RngStream) -> np.ndarray:
        raise NotImplementedError


class LoggedPolicy(ReplayPolicy):
    """Always returns the logged creative (replays the logging policy itself)."""

    name = "oracle"

    def valid_mask(self, log, rng):
        return np.ones(len(log), dtype=bool)


@dataclass
class FixedChoicePolicy(ReplayPolicy):
    """Deterministic stage-1 policy: one chosen creative per sku."""

    name: str
    choice: dict[int, int]

    def valid_mask(self, log, rng):
        lut = np.full(int(log.sku_id.max()) + 1 if len(log) else 1, -1, dtype=np.int64)
        for sku, cid in self.choice.items():
            if sku < lut.size:
                lut[sku] = cid
        return lut[log.sku_id] == log.creative_id


@dataclass
class UniformPolicy(ReplayPolicy):
    """Uniform pick among a per-sku candidate set, fresh draw per impression."""

    name: str
    candidates: dict[int, list[int]]

    def valid_mask(self, log, rng):
        u = rng.child("uniform").uniform(size=len(log))
        out = np.zeros(len(log), dtype=bool)
        for sku, ids in self.candidates.items():
            rows = np.flatnonzero(log.sku_id == sku)
            if rows.size == 0:
                continue
            pick = np.asarray(ids, dtype=np.int64)[(u[rows] * len(ids)).astype(np.int64)]
            out[rows] = pick == log.creative_id[rows]
        return out


@dataclass
class BanditPolicy(ReplayPolicy):
    """Two-stage policy: a bandit over each sku's stage-1 top-5.

    ``priors`` optionally maps sku -> per-arm ``(a, b)`` (informed start).
    """

    name: str
    top: dict[int, list[int]]
    rule: bandit.Policy = bandit.THOMPSON
    priors: dict[int, list] | None = None
    stateless = False

    def valid_mask(self, log, rng):
        arms = {sku: bandit.init_arms(ids, priors=None if self.priors is None else self.priors[sku])
                for sku, ids in self.top.items()}
        steps = {sku: 0 for sku in self.top}
        sel = rng.child("bandit")
        out = np.zeros(len(log), dtype=bool)
        for r, (sku, cid, clicked) in enumerate(zip(log.sku_id.tolist(), log.creative_id.tolist(),
                                                    log.clicked.tolist())):
            a = arms.get(sku)
            if a is None:
                continue
            steps[sku] += 1
            i = self.rule.select(a, steps[sku], sel)
            if a[i].creative_id == cid:
                out[r] = True
                a[i] = bandit.update(a[i], int(clicked))
        return out


# ----------------------------------------------------------------- replaying
def sctr_curve(valid_clicks, bucket_size: int = DEFAULT_BUCKET) -> list[tuple[int, float]]:
    """Running sCTR after every ``bucket_size`` valid impressions (and at the end)."""
    if bucket_size < 1:
        raise InvalidArgument("bucket_size must be >= 1")
    c = np.asarray(valid_clicks, dtype=np.int64)
    if c.size == 0:
        return []
    ends = np.arange(bucket_size, c.size + 1, bucket_size)
    if ends.size == 0 or ends[-1] != c.size:
        ends = np.append(ends, c.size)
    cum = np.cumsum(c)
    return [(int(e), float(cum[e - 1] / e)) for e in ends]


def replay_sctr(policy: ReplayPolicy, logs: ImpressionLog, catalog=None,
                rng: RngStream | None = None, bucket_size: int = DEFAULT_BUCKET) -> ReplayMetrics:
    """Replay ``policy`` over ``logs`` in record order."""
    rng = RngStream(0) if rng is None else rng
    if catalog is not None and len(logs):
        sku_of = catalog.sku_of()
        if logs.creative_id.max() >= sku_of.size or np.any(sku_of[logs.creative_id] != logs.sku_id):
            raise InvalidArgument("log records do not match the catalog")
    valid = policy.valid_mask(logs, rng)
    vc = logs.clicked[valid]
    return ReplayMetrics(int(valid.sum()), int(vc.sum()), sctr_curve(vc, bucket_size))


@dataclass
class PolicySummary:
    name: str
    mean: float
    std: float
    sctr: list[float]
    valid: list[int]


def compare_policies(policies, logs: ImpressionLog, catalog=None, seeds=range(5),
                     base_seed: int = 0) -> list[PolicySummary]:
    """Mean and standard deviation of sCTR per policy over replay seeds.

    Seed ``s`` drives every policy's random choices through ``RngStream(base_seed, s)``,
    so policies are compared on paired randomness.
    """
    policies = list(policies)
    if len(policies) < 2:
        raise InvalidArgument("need at least two policies to compare")
    seeds = list(seeds)
    out = []
    for pol in policies:
        vals, valid = [], []
        for s in seeds:
            m = replay_sctr(pol, logs, catalog, RngStream(base_seed, s))
            vals.append(m.sctr)
            valid.append(m.valid_impressions)
        out.append(PolicySummary(pol.name, float(np.mean(vals)), float(np.std(vals)), vals, valid))
    return out


def relative_lift(a: float, b: float) -> float:
    return (a - b) / b
