import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gradcheck import max_error, reranker_case
from dcolab import persist
from dcolab.errors import InvalidArgument
from dcolab.numerics import RngStream
from dcolab.reranker import (RankList, RerankConfig, RerankModel, attention, encoder_forward,
                             listwise_loss, mean_ndcg, ndcg_at_k, rerank, train_reranker,
                             window_scores, within_list_grades)

finite = st.floats(-5, 5, allow_nan=False)


# ----------------------------------------------------------------- attention
def test_attention_single_item():
    v = np.array([[0.3, -2.0, 1.5]])
    np.testing.assert_array_equal(attention(v, v, v), v)


def test_attention_identical_keys_average_values():
    r = RngStream(0)
    Q, V = r.normal(size=(3, 2)), r.normal(size=(4, 3))
    K = np.tile([0.5, -1.0], (4, 1))
    np.testing.assert_allclose(attention(Q, K, V), np.tile(V.mean(axis=0), (3, 1)), atol=1e-12)


def test_attention_hand_oracle():
    Q = np.eye(2)
    K = np.array([[1.0, 0.0], [1.0, 1.0]])
    V = np.array([[1.0, 2.0], [3.0, 4.0]])
    # row 0 scores (1, 1)/sqrt2 -> uniform; row 1 scores (0, 1)/sqrt2
    e = math.exp(1 / math.sqrt(2))
    w1 = (1 / (1 + e), e / (1 + e))
    want = np.array([[2.0, 3.0], [w1[0] * 1 + w1[1] * 3, w1[0] * 2 + w1[1] * 4]])
    np.testing.assert_allclose(attention(Q, K, V), want, atol=1e-12)


def test_attention_mask_and_errors():
    Q = K = V = np.array([[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_allclose(attention(Q, K, V, key_mask=[True, False]), np.tile(V[0], (2, 1)))
    with pytest.raises(InvalidArgument):
        attention(Q, np.ones((2, 3)), V)
    with pytest.raises(InvalidArgument):
        attention(Q, K, np.ones((3, 2)))
    with pytest.raises(InvalidArgument):
        attention(Q, K, V, key_mask=[False, False])


# ------------------------------------------------------------------- encoder
def tiny_model(arch="transformer", seed=0, **kw):
    cfg = RerankConfig(width=4, n_blocks=2, heads=2, d_ff=6, dropout=0.3, list_len=5, arch=arch, **kw)
    return RerankModel.init(3, cfg, RngStream(seed))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.permutations(range(5)))
def test_equivariance(seed, perm):
    model = tiny_model(seed=seed % 7)
    X = RngStream(seed).normal(size=(5, 3))
    rl = RankList(0, np.arange(5), X, np.zeros(5))
    perm = np.array(perm)
    s = encoder_forward(rl, model)
    sp = encoder_forward(RankList(0, np.arange(5), X[perm], np.zeros(5)), model)
    np.testing.assert_allclose(sp, s[perm], atol=1e-9)


def test_duplicates_score_equal():
    model = tiny_model()
    X = RngStream(1).normal(size=(4, 3))
    X[3] = X[1]
    s = encoder_forward(RankList(0, np.arange(4), X, np.zeros(4)), model)
    assert s[1] == pytest.approx(s[3], abs=1e-12)


def _ln(x, g, b):
    mu = sum(x) / len(x)
    var = sum((v - mu) ** 2 for v in x) / len(x)
    return [(v - mu) / math.sqrt(var + 1e-5) * gi + bi for v, gi, bi in zip(x, g, b)]


def _affine(x, W, b):
    return [sum(x[i] * W[i][j] for i in range(len(x))) + b[j] for j in range(len(b))]


def test_encoder_hand_oracle():
    """One block, one head, width 2: every step spelled out with scalar loops."""
    cfg = RerankConfig(width=2, n_blocks=1, heads=1, d_ff=2, dropout=0.0, list_len=3)
    model = RerankModel.init(2, cfg, RngStream(3))
    p = {k: v.tolist() for k, v in model.params.items()}
    X = [[0.5, -1.0], [2.0, 0.1], [-0.3, 0.7]]
    h = [_affine(x, p["W_in"], p["b_in"]) for x in X]
    a_in = [_ln(v, p["blk0_ln1_g"], p["blk0_ln1_b"]) for v in h]
    q = [_affine(v, p["blk0_att_Wq"], p["blk0_att_bq"]) for v in a_in]
    k = [_affine(v, p["blk0_att_Wk"], p["blk0_att_bk"]) for v in a_in]
    val = [_affine(v, p["blk0_att_Wv"], p["blk0_att_bv"]) for v in a_in]
    att = []
    for qi in q:
        sc = [sum(a * b for a, b in zip(qi, kj)) / math.sqrt(2) for kj in k]
        ex = [math.exp(s - max(sc)) for s in sc]
        w = [e / sum(ex) for e in ex]
        o = [sum(w[j] * val[j][c] for j in range(3)) for c in range(2)]
        att.append(_affine(o, p["blk0_att_Wo"], p["blk0_att_bo"]))
    h = [[a + b for a, b in zip(hi, ai)] for hi, ai in zip(h, att)]
    f_in = [_ln(v, p["blk0_ln2_g"], p["blk0_ln2_b"]) for v in h]
    u = [[max(z, 0.0) for z in _affine(v, p["blk0_W1"], p["blk0_b1"])] for v in f_in]
    h = [[a + b for a, b in zip(hi, _affine(ui, p["blk0_W2"], p["blk0_b2"]))] for hi, ui in zip(h, u)]
    hf = [_ln(v, p["lnf_g"], p["lnf_b"]) for v in h]
    want = [sum(a * b for a, b in zip(v, p["w_s"])) + p["b_s"][0] for v in hf]
    got = encoder_forward(RankList(0, np.arange(3), np.array(X), np.zeros(3)), model)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_inference_is_deterministic_and_windowed():
    model = tiny_model()
    X = RngStream(2).normal(size=(12, 3))
    rl = RankList(0, np.arange(12), X, np.zeros(12))
    a, b = window_scores(rl, model), window_scores(rl, model)
    np.testing.assert_array_equal(a, b)
    # windows of list_len items are encoded separately
    first = encoder_forward(RankList(0, np.arange(5), X[:5], np.zeros(5)), model)
    np.testing.assert_allclose(a[:5], first, atol=1e-12)
    assert rerank(0, rl, model) == rerank(0, rl, model)
    with pytest.raises(InvalidArgument):
        encoder_forward(RankList(0, np.arange(2), np.zeros((2, 4)), np.zeros(2)), model)


def test_single_candidate_unchanged():
    assert rerank(7, RankList(7, np.array([42]), np.zeros((1, 3)), np.zeros(1)), tiny_model()) == [42]


# ---------------------------------------------------------------------- loss
def test_kl_identity_is_zero():
    y = np.array([0.3, -1.0, 2.0, 0.0])
    assert listwise_loss(y, y) == pytest.approx(0.0, abs=1e-9)


def test_kl_hand_oracle():
    p = [math.exp(v) for v in (0.3, 0.2, 0.1)]
    p = [v / sum(p) for v in p]
    q = [math.exp(v) for v in (1.0, 0.0, -1.0)]
    q = [v / sum(q) for v in q]
    want = sum(a * math.log(a / b) for a, b in zip(p, q))
    assert listwise_loss([1.0, 0.0, -1.0], [0.3, 0.2, 0.1]) == pytest.approx(want, abs=1e-12)


@given(arrays(float, 4, elements=finite))
def test_uniform_labels_pull_scores_together(s):
    y = np.full(4, 0.2)
    loss, g = listwise_loss(s, y, want_grad=True)
    assert loss >= listwise_loss(np.zeros(4), y) - 1e-12
    if np.ptp(s) > 1e-3:
        # the gradient step shrinks the spread of the scores
        assert np.ptp(s - 0.1 * g[0]) < np.ptp(s)


@given(arrays(float, (2, 5), elements=finite), arrays(float, (2, 5), elements=finite), finite)
def test_shift_invariance(s, y, c):
    m = np.ones((2, 5), dtype=bool)
    m[1, 3:] = False
    assert listwise_loss(s + c, y, m) == pytest.approx(listwise_loss(s, y, m), abs=1e-9)


def test_padding_is_ignored():
    s = np.array([[0.5, -0.2, 9.0]])
    y = np.array([[0.3, 0.1, -4.0]])
    m = np.array([[True, True, False]])
    assert listwise_loss(s, y, m) == pytest.approx(listwise_loss(s[:, :2], y[:, :2]), abs=1e-12)
    with pytest.raises(InvalidArgument):
        listwise_loss(s, y, np.zeros((1, 3), dtype=bool))


def test_ordinal_grades_and_hand_value():
    y = np.array([[0.5, 0.1, 0.4, 0.2, 0.3]])
    m = np.ones((1, 5), dtype=bool)
    assert within_list_grades(y, m).tolist() == [[4, 0, 3, 1, 2]]
    th = np.array([-1.0, 0.0, 1.0, 2.0])
    s = np.array([[2.0, -1.0, 0.5, 0.0, 1.0]])
    want = 0.0
    for si, gi in zip(s[0], [4, 0, 3, 1, 2]):
        for k, t in enumerate(th, start=1):
            z = si - t
            want += math.log1p(math.exp(z)) - (gi >= k) * z
    assert listwise_loss(s, y, m, kind="ordinal", thresholds=th) == pytest.approx(want / 5, abs=1e-12)


@pytest.mark.parametrize("kind", ["kl", "ordinal"])
@pytest.mark.parametrize("arch", ["transformer", "mlp"])
def test_gradients(kind, arch):
    for s in range(3):
        assert max_error(*reranker_case(kind, s, arch, dropout=0.3 if s else 0.0), RngStream(s)) < 1e-4


# ---------------------------------------------------------------------- NDCG
def test_ndcg_examples():
    assert ndcg_at_k([0.5, 0.3, 0.1], 3) == 1.0
    assert ndcg_at_k([0.2, 0.2, 0.2], 2) == 1.0
    assert ndcg_at_k([0.0, 0.0], 5) == 1.0
    dcg = 0.1 + 0.3 / math.log2(3) + 0.2 / 2
    idcg = 0.3 + 0.2 / math.log2(3) + 0.1 / 2
    assert ndcg_at_k([0.1, 0.3, 0.2], 3) == pytest.approx(dcg / idcg, abs=1e-12)
    with pytest.raises(InvalidArgument):
        ndcg_at_k([1.0], 0)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=8), st.integers(1, 8))
def test_ndcg_bounds(g, k):
    v = ndcg_at_k(g, k)
    assert 0.0 <= v <= 1.0 + 1e-12
    assert ndcg_at_k(sorted(g, reverse=True), k) == pytest.approx(1.0)


# ------------------------------------------------------------------ training
def _gap_lists(n, rng, offset=0):
    """Two-item lists: a high-CTR (0.30) and a low-CTR (0.03) creative type."""
    out = []
    for b in range(n):
        r = rng.child(b)
        hi = np.array([1.0, 0.0, 0.0]) + 0.1 * r.normal(size=3)
        lo = np.array([0.0, 1.0, 0.0]) + 0.1 * r.normal(size=3)
        X, y = (np.stack([hi, lo]), [0.30, 0.03]) if b % 2 else (np.stack([lo, hi]), [0.03, 0.30])
        out.append(RankList(b + offset, np.array([2 * b, 2 * b + 1]) + 2 * offset, X, np.array(y)))
    return out


def test_planted_gap_after_training(tmp_path):
    rng = RngStream(4)
    tr, va = _gap_lists(60, rng.child("tr")), _gap_lists(20, rng.child("va"), offset=1000)
    cfg = RerankConfig(width=8, n_blocks=1, heads=2, d_ff=16, dropout=0.0, epochs=15, batch_items=20,
                       lr=3e-3, label_scale="zscore")
    model, met = train_reranker(tr, va, cfg, RngStream(5))
    assert met.best_ndcg5 == max(h["val_ndcg5"] for h in met.epochs)
    assert mean_ndcg(model, va) == pytest.approx(met.best_ndcg5)
    for rl in va:
        assert rerank(rl.sku_id, rl, model)[0] == rl.creative_ids[np.argmax(rl.labels)]
    persist.save_model(tmp_path / "rr", model)
    again = persist.load_model(tmp_path / "rr", "reranker")
    np.testing.assert_array_equal(window_scores(va[0], again), window_scores(va[0], model))


def test_training_rejects_shared_skus():
    lists = _gap_lists(4, RngStream(0))
    with pytest.raises(InvalidArgument):
        train_reranker(lists[:3], lists[2:], RerankConfig(epochs=1), RngStream(0))


def test_config_validation():
    with pytest.raises(InvalidArgument):
        RerankModel.init(3, RerankConfig(width=5, heads=2), RngStream(0))
    with pytest.raises(InvalidArgument):
        RerankModel.init(3, RerankConfig(loss="pairwise"), RngStream(0))
