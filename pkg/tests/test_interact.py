import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradcheck import FIELDS, autoco_alpha_case, autoco_case, max_error, random_batch
from dcolab.datagen import OPERATORS, Creative
from dcolab.errors import InvalidArgument
from dcolab.features import FeatureBatch
from dcolab.interact import (AutocoModel, FieldSpec, InteractConfig, InteractionArch, combine,
                             compute_metrics, field_pairs, fm_logits, interact_pair, one_shot_search,
                             predict_topk, train_fixed_arch, weighted_auc)
from dcolab.labeling import Dataset
from dcolab.numerics import RngStream, sigmoid
from dcolab.recovery import operator_recovery_task, recovery_config, run_recovery


class ArrayTable:
    def __init__(self, cat, dense):
        self.cat, self.dense = cat, dense

    def batch(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        return FeatureBatch(self.cat[ids], {k: v[ids] for k, v in self.dense.items()})


def separable(n=600, seed=0):
    r = RngStream(seed)
    cat = np.stack([r.integers(4, size=n), r.integers(3, size=n)], axis=1)
    d = r.normal(size=(n, 3))
    y = ((d @ np.array([1.5, -1.0, 0.5]) + (cat[:, 0] >= 2) - 0.5) > 0).astype(float)
    table = ArrayTable(cat, {"d": d})
    ids = np.arange(n)
    return Dataset(ids[: n // 2], y[: n // 2], table=table), Dataset(ids[n // 2:], y[n // 2:], table=table)


def test_plus_identity_case():
    e = np.array([0.3, -1.2])
    np.testing.assert_array_equal(interact_pair(e, np.zeros(2), "plus", np.eye(2), np.zeros(2)), e)


@given(arrays(float, 4, elements=st.floats(-5, 5)))
def test_max_min_of_equal_operands(e):
    np.testing.assert_array_equal(combine("max", e, e), e)
    np.testing.assert_array_equal(combine("min", e, e), e)


def test_multiply_hand_oracle():
    proj = np.array([[1.0, 2.0], [0.5, -1.0]])
    out = interact_pair([1, 2], [3, 4], "multiply", proj, np.array([0.1, 0.0]))
    # raw [3, 8] -> [3*1 + 8*0.5 + 0.1, 3*2 - 8]
    np.testing.assert_allclose(out, [7.1, -2.0], atol=1e-12)


def test_interact_pair_shape_errors():
    with pytest.raises(InvalidArgument):
        interact_pair([1, 2], [1, 2, 3], "plus", np.eye(2), np.zeros(2))
    with pytest.raises(InvalidArgument):
        interact_pair([1, 2], [1, 2], "concat", np.eye(2), np.zeros(2))
    with pytest.raises(InvalidArgument):
        interact_pair([1, 2], [1, 2], "xor", np.eye(2), np.zeros(2))


def test_zero_params_give_half():
    model = AutocoModel.init(FIELDS, InteractionArch.fixed(field_pairs(FIELDS), "max"),
                             InteractConfig(d_emb=3, d_lat=2), RngStream(0))
    p = model.zeros_like().forward(random_batch(RngStream(1)))
    np.testing.assert_array_equal(p, 0.5)


def test_hand_sized_forward():
    fields = [FieldSpec("u", "cat", 2), FieldSpec("v", "cat", 2)]
    model = AutocoModel.init(fields, InteractionArch.fixed([(0, 1)], "plus"),
                             InteractConfig(d_emb=2, d_lat=2), RngStream(0))
    p = model.params
    p["bias"][:] = 0.2
    p["w1_u"][:] = [0.0, 0.1]
    p["w1_v"][:] = [0.0, -0.3]
    p["emb_u"][:] = [[0, 0], [1.0, 2.0]]
    p["emb_v"][:] = [[0, 0], [0.5, -1.0]]
    p["P0_plus"][:] = [[1.0, 0.0], [1.0, 2.0]]
    p["c0_plus"][:] = [0.0, 0.5]
    p["head"][:] = [0.25, 1.0]
    # raw = [1.5, 1.0]; latent = [1.5 + 1.0, 0 + 2.0 + 0.5] = [2.5, 2.5]
    # logit = 0.2 + 0.1 - 0.3 + 0.25 * 2.5 + 2.5 = 3.125
    out = model.forward(FeatureBatch(np.array([[1, 1]]), {}))
    assert out[0] == pytest.approx(sigmoid(3.125), abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_fm_reduction(seed):
    r = RngStream(seed)
    d = 3
    model = AutocoModel.init(FIELDS, InteractionArch.fixed(field_pairs(FIELDS), "multiply"),
                             InteractConfig(d_emb=d, d_lat=d, monotone=False), r.child("init"))
    for k in list(model.params):
        if k.startswith("P"):
            model.params[k] = np.eye(d)
        elif k.startswith("c"):
            model.params[k] = np.zeros(d)
        else:
            model.params[k] = r.child(k).normal(size=model.params[k].shape)
    model.params["head"] = np.ones(d)
    batch = random_batch(r.child("batch"), n=20)
    np.testing.assert_allclose(model.logits(batch), fm_logits(batch, FIELDS, model.params),
                               rtol=0, atol=1e-12)


@pytest.mark.parametrize("op", OPERATORS)
def test_gradients_per_operator(op):
    for s in range(4):
        assert max_error(*autoco_case(op, s, "tanh" if s % 2 else "identity"), RngStream(s)) < 1e-4


def test_alpha_gradient():
    for s in range(4):
        assert max_error(*autoco_alpha_case(s), RngStream(s)) < 1e-4


def test_zero_point_symmetry():
    model = AutocoModel.init(FIELDS, InteractionArch.fixed(field_pairs(FIELDS), "plus"),
                             InteractConfig(d_emb=3, d_lat=2), RngStream(0)).zeros_like()
    batch = random_batch(RngStream(2), n=8)
    y = np.array([0, 1] * 4, dtype=float)
    w = np.full((3, len(OPERATORS)), 0.2)
    _, g, ga = model.loss_and_grad(batch, y, weights=w, want_alpha=True)
    for f in FIELDS:
        assert not g[f"emb_{f.name}"].any()
    assert not ga.any()


def test_metrics_bounds_and_auc_oracle():
    s = np.array([0.1, 0.4, 0.35, 0.8])
    y = np.array([0, 0, 1, 1])
    # pairs (pos, neg): (0.35 > 0.1), (0.35 < 0.4), (0.8 > both) -> 3/4
    assert weighted_auc(s, y) == pytest.approx(0.75)
    m = compute_metrics(s, y)
    assert 0 <= m.accuracy <= 1 and 0 <= m.auc <= 1
    assert m.accuracy == pytest.approx(0.75)
    assert m.recall[1] == pytest.approx(0.5) and m.precision[1] == pytest.approx(1.0)


def test_training_separable_and_deterministic():
    train, val = separable()
    arch = InteractionArch.fixed(field_pairs(FIELDS), "multiply")
    cfg = InteractConfig(d_emb=4, d_lat=4, epochs=60, batch_size=32, lr=0.05)
    m1, met = train_fixed_arch(train, val, arch, cfg, RngStream(3), fields=FIELDS)
    assert met.auc > 0.95
    m2, _ = train_fixed_arch(train, val, arch, cfg, RngStream(3), fields=FIELDS)
    assert all(m1.params[k].tobytes() == m2.params[k].tobytes() for k in m1.params)


def test_zero_epochs_leave_params_at_init():
    train, val = separable(n=4000)
    arch = InteractionArch.fixed(field_pairs(FIELDS), "plus")
    cfg = InteractConfig(d_emb=4, d_lat=4, epochs=0)
    model, _ = train_fixed_arch(train, val, arch, cfg, RngStream(3), fields=FIELDS)
    init = AutocoModel.init(FIELDS, arch, cfg, RngStream(3).child("init"))
    assert all(np.array_equal(model.params[k], init.params[k]) for k in init.params)
    # a single random init can correlate with the labels by luck; chance holds on average
    aucs = [train_fixed_arch(train, val, arch, cfg, RngStream(s), fields=FIELDS)[1].auc for s in range(60)]
    assert abs(np.mean(aucs) - 0.5) <= 0.05


@given(arrays(float, (3, 5), elements=st.floats(0, 1)))
def test_projection_is_one_hot(alpha):
    arch = InteractionArch(field_pairs(FIELDS), alpha)
    oh = arch.onehot()
    assert arch.is_feasible() and (oh.sum(axis=1) == 1).all()
    assert (alpha[oh == 1] == alpha.max(axis=1)).all()


def test_unknown_operator_rejected():
    with pytest.raises(InvalidArgument):
        InteractionArch.fixed([(0, 1)], "xor")


def test_search_trace_is_feasible_every_epoch():
    train, val = separable(n=400)
    cfg = InteractConfig(d_emb=3, d_lat=3, search_epochs=5, batch_size=64)
    arch, model, trace = one_shot_search(train, val, cfg, RngStream(4), FIELDS)
    assert len(trace) == 5 and arch.is_feasible()
    for ep in trace:
        assert len(ep.ops) == 3 and set(ep.ops) <= set(OPERATORS)
        assert ((ep.alpha >= 0) & (ep.alpha <= 1)).all()
    arch2, model2, _ = one_shot_search(train, val, cfg, RngStream(4), FIELDS)
    assert arch2.ops() == arch.ops()
    assert all(model.params[k].tobytes() == model2.params[k].tobytes() for k in model.params)


def test_search_recovers_planted_max():
    task = operator_recovery_task([("template", "bg_color", "max")], seed=2)
    ops, _ = run_recovery(task, recovery_config(), 2)
    assert ops == task.planted


def test_median_trace_monotone_after_transients():
    # full-batch steps: the only noise left is operator switching, which settles early
    cfg = recovery_config(batch_size=10_000, alpha_batch_size=10_000, optimizer="sgd", lr=0.1,
                          warmup_epochs=0, explore_prob=0.0, search_epochs=100)
    traces = []
    for s in range(10):
        task = operator_recovery_task([("template", "bg_color", "max")], seed=s)
        traces.append([e.val_logloss for e in run_recovery(task, cfg, s)[1]])
    med = np.median(traces, axis=0)
    assert np.all(np.diff(med[3:]) <= 0)


def _two_creatives_table():
    return ArrayTable(np.array([[1, 0], [2, 0], [1, 0]]), {"d": np.zeros((3, 3))})


def test_predict_topk_rules():
    table = _two_creatives_table()
    model = AutocoModel.init(FIELDS, InteractionArch.fixed(field_pairs(FIELDS), "plus"),
                             InteractConfig(d_emb=3, d_lat=2), RngStream(0))
    model.params["w1_a"][:] = [0.0, 1.0, 2.0, 0.0]
    cands = [Creative(i, None) for i in range(3)]
    assert [c.creative_id for c in predict_topk(0, cands, model, 1, table)] == [1]
    # rows 0 and 2 are identical: the tie goes to the lower id
    assert [c.creative_id for c in predict_topk(0, cands, model, 10, table)] == [1, 0, 2]
    with pytest.raises(InvalidArgument):
        predict_topk(0, cands, model, 0, table)


def test_predict_topk_after_training_on_gap():
    r = RngStream(9)
    table = ArrayTable(np.array([[1, 0], [2, 0]]), {"d": np.zeros((2, 3))})
    ids = np.repeat([0, 1], 500)
    y = np.where(ids == 0, r.uniform(size=ids.size) < 0.30, r.uniform(size=ids.size) < 0.03).astype(float)
    ds = Dataset(ids, y, table=table)
    arch = InteractionArch.fixed(field_pairs(FIELDS), "multiply")
    model, _ = train_fixed_arch(ds, ds, arch, InteractConfig(d_emb=3, d_lat=2, epochs=5), RngStream(1),
                                fields=FIELDS)
    top = predict_topk(0, [Creative(1, None), Creative(0, None)], model, 1, table)
    assert top[0].creative_id == 0
