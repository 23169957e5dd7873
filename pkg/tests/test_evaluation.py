import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dcolab import bandit
from dcolab.datagen import ImpressionLog, ImpressionRecord
from dcolab.errors import InvalidArgument
from dcolab.evaluation import (BanditPolicy, FixedChoicePolicy, LoggedPolicy, UniformPolicy,
                               compare_policies, relative_lift, replay_sctr, sctr_curve)
from dcolab.numerics import RngStream


def _log(n, seed=0, skus=1, per_sku=2, ctr=0.1):
    r = RngStream(seed)
    sku = r.integers(skus, size=n).astype(np.int32)
    cid = (sku * per_sku + r.integers(per_sku, size=n)).astype(np.int32)
    return ImpressionLog(np.zeros(n, dtype=np.int32), sku, cid, r.uniform(size=n) < ctr)


def test_matching_policy_three_impressions():
    log = ImpressionLog.from_records([ImpressionRecord(0, 0, 1, c) for c in (True, False, False)])
    m = replay_sctr(FixedChoicePolicy("one", {0: 1}), log)
    assert (m.valid_impressions, m.clicks) == (3, 1) and m.sctr == pytest.approx(1 / 3)


def test_never_matching_is_undefined():
    log = ImpressionLog.from_records([ImpressionRecord(0, 0, 1, True)] * 4)
    m = replay_sctr(FixedChoicePolicy("other", {0: 0}), log)
    assert not m.defined and math.isnan(m.sctr) and m.curve == []


def test_random_policy_two_candidates():
    n = 200_000
    log = _log(n, ctr=0.1)
    m = replay_sctr(UniformPolicy("random", {0: [0, 1]}), log, rng=RngStream(1))
    assert abs(m.valid_impressions - n / 2) < 3 * math.sqrt(n / 4)
    se = math.sqrt(0.1 * 0.9 / m.valid_impressions)
    assert abs(m.sctr - log.clicked.mean()) < 3 * se


def test_oracle_equals_log_ctr(small_world):
    cat, gt, logs, table = small_world
    m = replay_sctr(LoggedPolicy(), logs, cat)
    assert m.sctr == logs.clicked.sum() / len(logs)


@given(st.integers(0, 1000))
def test_fixed_policy_order_free(seed):
    log = _log(500, seed, skus=3, per_sku=3, ctr=0.3)
    pol = FixedChoicePolicy("fixed", {0: 1, 1: 3, 2: 8})
    perm = RngStream(seed).permutation(len(log))
    a, b = replay_sctr(pol, log), replay_sctr(pol, log[perm])
    assert (a.valid_impressions, a.clicks) == (b.valid_impressions, b.clicks)


def test_curve_examples():
    assert [v for _, v in sctr_curve([1, 0] * 50, 10)] == [0.5] * 10
    clicks = [0] * 50 + [1] * 50
    curve = sctr_curve(clicks, 5)
    second = [v for e, v in curve if e > 50]
    assert all(b > a for a, b in zip(second, second[1:]))
    assert curve[-1] == (100, 0.5)
    assert sctr_curve([1, 0, 0], 2) == [(2, 0.5), (3, 1 / 3)]
    with pytest.raises(InvalidArgument):
        sctr_curve([1], 0)


def test_curve_terminal_value_is_overall(small_world):
    cat, gt, logs, table = small_world
    m = replay_sctr(LoggedPolicy(), logs, bucket_size=777)
    assert m.curve[-1] == (m.valid_impressions, m.sctr)


def test_bandit_policy_learns_only_from_valid_rows():
    log = _log(5000, 2, ctr=0.2)
    # a single arm that always matches creative 0 of sku 0
    m = replay_sctr(BanditPolicy("ts", {0: [0]}), log)
    assert m.valid_impressions == int((log.creative_id == 0).sum())
    two = BanditPolicy("ts", {0: [0, 1]}, bandit.THOMPSON)
    a, b = replay_sctr(two, log, rng=RngStream(5)), replay_sctr(two, log, rng=RngStream(5))
    assert (a.valid_impressions, a.clicks) == (b.valid_impressions, b.clicks)


def test_compare_policies():
    log = _log(20_000, 3, skus=2, per_sku=3)
    cands = {0: [0, 1, 2], 1: [3, 4, 5]}
    rows = compare_policies([UniformPolicy("a", cands), UniformPolicy("b", cands)], log, seeds=range(3))
    assert rows[0].mean == rows[1].mean and rows[0].sctr == rows[1].sctr
    again = compare_policies([UniformPolicy("a", cands), LoggedPolicy()], log, seeds=range(3))
    assert again[0].sctr == rows[0].sctr and again[1].std == 0.0
    with pytest.raises(InvalidArgument):
        compare_policies([LoggedPolicy()], log)


def test_catalog_mismatch_rejected(small_world):
    cat, gt, logs, table = small_world
    bad = logs[:10]
    bad = ImpressionLog(bad.day, bad.sku_id + 1, bad.creative_id, bad.clicked)
    with pytest.raises(InvalidArgument):
        replay_sctr(LoggedPolicy(), bad, cat)


def test_relative_lift():
    assert relative_lift(0.11, 0.1) == pytest.approx(0.1)
