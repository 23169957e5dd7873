"""Listwise reranker distilled from teacher soft labels.

The model is a transformer encoder over the items of one candidate list (no
positional encoding, so scores are permutation-equivariant):

    h = x W_in + b_in
    repeat N times (pre-norm):
        h = h + dropout(MHA(LN(h)))
        h = h + dropout(FF(LN(h)))          FF = relu(. W1 + b1) W2 + b2
    score = LN(h) . w_s + b_s

The ``mlp`` ablation swaps every attention sublayer for a per-item
``relu(. W + b)`` layer, so an item never sees its list mates.

Two losses are available. ``kl`` (default) is
``KL(softmax(y / tau) || softmax(s))`` per list. ``ordinal`` grades the items
of a list by within-list quintile of their soft label and fits learned
thresholds ``theta_1 <= ... <= theta_4`` with an all-threshold binary
cross-entropy ``sum_k BCE(sigmoid(s - theta_k), [grade >= k])``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import InvalidArgument, NumericalFailure
from .numerics import Adam, RngStream, log_softmax

N_GRADES = 5


@dataclass
class RankList:
    sku_id: int
    creative_ids: np.ndarray      # (l,)
    features: np.ndarray          # (l, n_features)
    labels: np.ndarray            # (l,) soft labels

    def __len__(self):
        return int(self.creative_ids.size)


@dataclass
class RerankConfig:
    width: int = 32
    n_blocks: int = 4
    heads: int = 2
    d_ff: int = 128
    dropout: float = 0.4
    lr: float = 1e-3
    batch_items: int = 960
    batch_unit: str = "items"      # or "lists"
    list_len: int = 5
    epochs: int = 30
    tau: float = 1.0
    loss: str = "kl"               # or "ordinal"
    arch: str = "transformer"      # or "mlp"
    label_scale: str = "none"      # or "zscore": per-list standardisation before the loss

    def validate(self) -> None:
        if self.width % self.heads:
            raise InvalidArgument("width must be divisible by heads")
        if self.loss not in ("kl", "ordinal"):
            raise InvalidArgument(f"unknown loss {self.loss!r}")
        if self.arch not in ("transformer", "mlp"):
            raise InvalidArgument(f"unknown arch {self.arch!r}")
        if self.list_len < 2:
            raise InvalidArgument("list_len must be >= 2")
        if self.batch_unit not in ("items", "lists"):
            raise InvalidArgument(f"unknown batch unit {self.batch_unit!r}")

    @property
    def lists_per_batch(self) -> int:
        if self.batch_unit == "lists":
            return self.batch_items
        return max(1, self.batch_items // self.list_len)


# ------------------------------------------------------------- primitives
def attention(Q, K, V, key_mask=None) -> np.ndarray:
    """Scaled dot-product attention ``softmax(Q K^T / sqrt(d)) V`` for 2-d inputs."""
    Q, K, V = (np.asarray(a, dtype=float) for a in (Q, K, V))
    if Q.ndim != 2 or K.ndim != 2 or V.ndim != 2:
        raise InvalidArgument("attention expects matrices")
    if Q.shape[1] != K.shape[1]:
        raise InvalidArgument(f"query width {Q.shape[1]} != key width {K.shape[1]}")
    if K.shape[0] != V.shape[0]:
        raise InvalidArgument(f"{K.shape[0]} keys but {V.shape[0]} values")
    if key_mask is not None and not np.any(key_mask):
        raise InvalidArgument("every key is masked")
    km = None if key_mask is None else np.asarray(key_mask, dtype=bool)
    return nn.scaled_attention_forward(Q, K, V, km)[0]


def ndcg_at_k(labels, k: int) -> float:
    """NDCG@k of a ranked list of gains (linear gains, log2 discount).

    A list whose ideal DCG is zero scores 1.0.
    """
    if k < 1:
        raise InvalidArgument("k must be >= 1")
    g = np.asarray(labels, dtype=float)
    disc = 1.0 / np.log2(np.arange(2, min(k, g.size) + 2))
    dcg = float(np.sum(g[:k] * disc))
    idcg = float(np.sum(np.sort(g)[::-1][:k] * disc))
    return 1.0 if idcg <= 0 else dcg / idcg


def within_list_grades(labels, mask) -> np.ndarray:
    """Quintile grade 0..4 per item from its rank inside the (unmasked) list."""
    labels = np.asarray(labels, dtype=float)
    grades = np.zeros(labels.shape, dtype=np.int64)
    for b in range(labels.shape[0]):
        idx = np.flatnonzero(mask[b])
        n = idx.size
        order = idx[np.lexsort((idx, labels[b, idx]))]    # ascending, ties by position
        grades[b, order] = (np.arange(n) * N_GRADES) // n
    return grades


def listwise_loss(scores, soft_labels, mask=None, tau: float = 1.0, kind: str = "kl",
                  thresholds=None, want_grad: bool = False):
    """Mean per-list loss over a batch of (possibly padded) lists.

    ``scores``/``soft_labels``/``mask`` are ``(lists, l)`` (1-d input is one
    list). Returns the loss, or ``(loss, dscores[, dthresholds])`` when
    ``want_grad``.
    """
    s = np.atleast_2d(np.asarray(scores, dtype=float))
    y = np.atleast_2d(np.asarray(soft_labels, dtype=float))
    m = np.ones(s.shape, dtype=bool) if mask is None else np.atleast_2d(np.asarray(mask, dtype=bool))
    if s.shape != y.shape or s.shape != m.shape:
        raise InvalidArgument("scores, labels and mask must share a shape")
    counts = m.sum(axis=1)
    if np.any(counts == 0):
        raise InvalidArgument("a list is fully masked")
    nl = s.shape[0]
    if kind == "kl":
        lp = np.where(m, log_softmax(np.where(m, y / tau, nn.NEG_INF), axis=1), 0.0)
        ls = np.where(m, log_softmax(np.where(m, s, nn.NEG_INF), axis=1), 0.0)
        p = np.where(m, np.exp(lp), 0.0)
        loss = float(np.sum(p * (lp - ls)) / nl)
        if not want_grad:
            return loss
        q = np.where(m, np.exp(ls), 0.0)
        return loss, (q - p) / nl
    if kind == "ordinal":
        th = np.asarray(thresholds, dtype=float)
        if th.shape != (N_GRADES - 1,):
            raise InvalidArgument(f"ordinal loss needs {N_GRADES - 1} thresholds")
        grades = within_list_grades(y, m)
        t = (grades[..., None] >= np.arange(1, N_GRADES)).astype(float)   # (lists, l, 4)
        z = s[..., None] - th
        wi = (m / counts[:, None])[..., None] / nl      # per-list mean, then mean over lists
        loss = float(np.sum(wi * (np.logaddexp(0.0, z) - t * z)))
        if not want_grad:
            return loss
        dz = wi * (1.0 / (1.0 + np.exp(-z)) - t)
        return loss, dz.sum(axis=-1), -dz.sum(axis=(0, 1))
    raise InvalidArgument(f"unknown loss {kind!r}")


# ------------------------------------------------------------------ model
@dataclass
class RerankModel:
    params: dict[str, np.ndarray]
    config: RerankConfig = field(default_factory=RerankConfig)
    n_features: int = 0
    schema_hash: str = ""

    @classmethod
    def init(cls, n_features: int, config: RerankConfig, rng: RngStream,
             schema_hash: str = "") -> "RerankModel":
        config.validate()
        w, f = config.width, config.d_ff
        p = {"W_in": rng.normal(0, 1 / np.sqrt(n_features), (n_features, w)), "b_in": np.zeros(w)}
        for b in range(config.n_blocks):
            pre = f"blk{b}_"
            br = rng.child("block", b)
            p[pre + "ln1_g"], p[pre + "ln1_b"] = np.ones(w), np.zeros(w)
            p[pre + "ln2_g"], p[pre + "ln2_b"] = np.ones(w), np.zeros(w)
            if config.arch == "transformer":
                nn.init_mha(p, pre + "att_", w, br.child("att"))
            else:
                p[pre + "mix_W"] = br.child("mix").normal(0, 1 / np.sqrt(w), (w, w))
                p[pre + "mix_b"] = np.zeros(w)
            p[pre + "W1"] = br.child("ff1").normal(0, 1 / np.sqrt(w), (w, f))
            p[pre + "b1"] = np.zeros(f)
            p[pre + "W2"] = br.child("ff2").normal(0, 1 / np.sqrt(f), (f, w))
            p[pre + "b2"] = np.zeros(w)
        p["lnf_g"], p["lnf_b"] = np.ones(w), np.zeros(w)
        p["w_s"] = rng.child("head").normal(0, 1 / np.sqrt(w), w)
        p["b_s"] = np.zeros(1)
        if config.loss == "ordinal":
            p["theta"] = np.linspace(-1.5, 1.5, N_GRADES - 1)
        return cls(p, config, n_features, schema_hash)

    def score_batch(self, X, mask, params=None, rng: RngStream | None = None, cache: bool = False):
        """Scores for a ``(lists, l, n_features)`` batch; dropout only when ``rng`` is given."""
        p = self.params if params is None else params
        cfg = self.config
        h, _ = nn.linear_forward(X, p["W_in"], p["b_in"])
        caches = []
        for b in range(cfg.n_blocks):
            pre = f"blk{b}_"
            a_in, ln1 = nn.layernorm_forward(h, p[pre + "ln1_g"], p[pre + "ln1_b"])
            if cfg.arch == "transformer":
                a, mix = nn.mha_forward(a_in, p, pre + "att_", cfg.heads, mask)
            else:
                zmix = nn.linear_forward(a_in, p[pre + "mix_W"], p[pre + "mix_b"])[0]
                a, mix = nn.relu_forward(zmix)
            a, k1 = nn.dropout_forward(a, cfg.dropout, None if rng is None else rng.child(b, 1))
            h = h + a
            f_in, ln2 = nn.layernorm_forward(h, p[pre + "ln2_g"], p[pre + "ln2_b"])
            u, pos = nn.relu_forward(nn.linear_forward(f_in, p[pre + "W1"], p[pre + "b1"])[0])
            f = nn.linear_forward(u, p[pre + "W2"], p[pre + "b2"])[0]
            f, k2 = nn.dropout_forward(f, cfg.dropout, None if rng is None else rng.child(b, 2))
            h = h + f
            caches.append((a_in, ln1, mix, k1, f_in, ln2, u, pos, k2))
        hf, lnf = nn.layernorm_forward(h, p["lnf_g"], p["lnf_b"])
        s = hf @ p["w_s"] + p["b_s"][0]
        if not np.all(np.isfinite(s)):
            raise NumericalFailure("non-finite reranker activations")
        if cache:
            return s, (X, caches, hf, lnf)
        return s

    def backward(self, ds, state, params=None) -> dict:
        p = self.params if params is None else params
        cfg = self.config
        X, caches, hf, lnf = state
        g = {"w_s": np.einsum("bl,blw->w", ds, hf), "b_s": np.array([ds.sum()])}
        dh, g["lnf_g"], g["lnf_b"] = nn.layernorm_backward(ds[..., None] * p["w_s"], lnf, p["lnf_g"])
        for b in reversed(range(cfg.n_blocks)):
            pre = f"blk{b}_"
            a_in, ln1, mix, k1, f_in, ln2, u, pos, k2 = caches[b]
            df = nn.dropout_backward(dh, k2)
            du, g[pre + "W2"], g[pre + "b2"] = nn.linear_backward(df, u, p[pre + "W2"])
            dz1 = nn.relu_backward(du, pos)
            dfin, g[pre + "W1"], g[pre + "b1"] = nn.linear_backward(dz1, f_in, p[pre + "W1"])
            dx, g[pre + "ln2_g"], g[pre + "ln2_b"] = nn.layernorm_backward(dfin, ln2, p[pre + "ln2_g"])
            dh = dh + dx
            da = nn.dropout_backward(dh, k1)
            if cfg.arch == "transformer":
                dain, ga = nn.mha_backward(da, mix, p, pre + "att_", cfg.heads)
                g.update(ga)
            else:
                dzm = nn.relu_backward(da, mix)
                dain, g[pre + "mix_W"], g[pre + "mix_b"] = nn.linear_backward(dzm, a_in, p[pre + "mix_W"])
            dx, g[pre + "ln1_g"], g[pre + "ln1_b"] = nn.layernorm_backward(dain, ln1, p[pre + "ln1_g"])
            dh = dh + dx
        _, g["W_in"], g["b_in"] = nn.linear_backward(dh, X, p["W_in"])
        return g

    def loss_and_grad(self, X, y, mask, params=None, rng: RngStream | None = None):
        p = self.params if params is None else params
        cfg = self.config
        s, state = self.score_batch(X, mask, p, rng, cache=True)
        if cfg.loss == "kl":
            loss, ds = listwise_loss(s, y, mask, cfg.tau, "kl", want_grad=True)
            dth = None
        else:
            loss, ds, dth = listwise_loss(s, y, mask, cfg.tau, "ordinal", p["theta"], want_grad=True)
        ds = np.where(mask, ds, 0.0)
        g = self.backward(ds, state, p)
        if dth is not None:
            g["theta"] = dth
        return loss, g

    def project(self) -> None:
        if "theta" in self.params:
            self.params["theta"] = np.sort(self.params["theta"])


def encoder_forward(rank_list: RankList, model: RerankModel) -> np.ndarray:
    """Deterministic (no dropout) scores for one list."""
    X = np.asarray(rank_list.features, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise InvalidArgument(f"item features {X.shape} do not fit a model over {model.n_features} features")
    return model.score_batch(X[None], np.ones((1, X.shape[0]), dtype=bool))[0]


# --------------------------------------------------------------- batching
def pad_lists(lists: list[RankList], length: int):
    """Stack lists into ``(X, y, mask)`` padded/truncated to ``length``."""
    nf = lists[0].features.shape[1]
    X = np.zeros((len(lists), length, nf))
    y = np.zeros((len(lists), length))
    m = np.zeros((len(lists), length), dtype=bool)
    for b, rl in enumerate(lists):
        n = min(len(rl), length)
        X[b, :n] = rl.features[:n]
        y[b, :n] = rl.labels[:n]
        m[b, :n] = True
    return X, y, m


def scale_labels(y, mask, how: str) -> np.ndarray:
    """Per-list label preprocessing; ``zscore`` spreads CTRs compressed near the base rate."""
    if how == "none":
        return y
    if how != "zscore":
        raise InvalidArgument(f"unknown label scaling {how!r}")
    cnt = mask.sum(axis=1, keepdims=True)
    mu = np.sum(np.where(mask, y, 0.0), axis=1, keepdims=True) / cnt
    sd = np.sqrt(np.sum(np.where(mask, (y - mu) ** 2, 0.0), axis=1, keepdims=True) / cnt)
    return np.where(mask, (y - mu) / np.maximum(sd, 1e-12), 0.0)


def sample_training_lists(lists: list[RankList], length: int, rng: RngStream) -> list[RankList]:
    """Random length-``length`` sublist of every list (whole list if shorter)."""
    out = []
    for i, rl in enumerate(lists):
        if len(rl) <= length:
            idx = rng.child(i).permutation(len(rl))
        else:
            idx = rng.child(i).permutation(len(rl))[:length]
        out.append(RankList(rl.sku_id, rl.creative_ids[idx], rl.features[idx], rl.labels[idx]))
    return out


@dataclass
class RerankMetrics:
    epochs: list[dict]
    best_epoch: int
    best_ndcg5: float


def mean_ndcg(model: RerankModel, lists: list[RankList], k: int = 5) -> float:
    scores = batch_window_scores(lists, model)
    vals = []
    for rl, sc in zip(lists, scores):
        order = np.lexsort((rl.creative_ids, -sc))
        vals.append(ndcg_at_k(rl.labels[order], k))
    return float(np.mean(vals))


def train_reranker(train: list[RankList], val: list[RankList], config: RerankConfig,
                   rng: RngStream):
    """Adam training; keeps the parameters of the epoch with the best val NDCG@5.

    ``train`` and ``val`` must not share skus.
    """
    config.validate()
    if not train or not val:
        raise InvalidArgument("train and val lists must be non-empty")
    overlap = {rl.sku_id for rl in train} & {rl.sku_id for rl in val}
    if overlap:
        raise InvalidArgument(f"train and val share skus {sorted(overlap)[:5]}")
    if any(len(rl) < 2 for rl in train):
        raise InvalidArgument("training lists need at least 2 items")
    nf = train[0].features.shape[1]
    model = RerankModel.init(nf, config, rng.child("init"))
    opt = Adam(lr=config.lr)
    best = (-1.0, -1, {k: v.copy() for k, v in model.params.items()})
    history = []
    per = config.lists_per_batch
    for epoch in range(config.epochs):
        er = rng.child("epoch", epoch)
        lists = sample_training_lists(train, config.list_len, er.child("sample"))
        order = er.child("order").permutation(len(lists))
        losses = []
        for bi, s in enumerate(range(0, len(lists), per)):
            X, y, m = pad_lists([lists[i] for i in order[s:s + per]], config.list_len)
            y = scale_labels(y, m, config.label_scale)
            loss, g = model.loss_and_grad(X, y, m, rng=er.child("dropout", bi))
            if not np.isfinite(loss):
                raise NumericalFailure(f"reranker loss diverged at epoch {epoch}; history {history}")
            opt.step(model.params, g)
            model.project()
            losses.append(loss)
        nd = mean_ndcg(model, val, 5)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_ndcg5": nd})
        if nd > best[0]:
            best = (nd, epoch, {k: v.copy() for k, v in model.params.items()})
    model.params = best[2]
    return model, RerankMetrics(history, best[1], best[0])


# --------------------------------------------------------------- inference
def batch_window_scores(lists: list[RankList], model: RerankModel) -> list[np.ndarray]:
    """Scores for many lists of any length in one pass.

    Each list is cut into contiguous windows of ``list_len`` items; every
    window is encoded on its own and the window scores are concatenated.
    """
    length = model.config.list_len
    windows, owner = [], []
    for i, rl in enumerate(lists):
        if rl.features.ndim != 2 or rl.features.shape[1] != model.n_features:
            raise InvalidArgument(f"item features {rl.features.shape} do not fit a model over "
                                  f"{model.n_features} features")
        for s in range(0, len(rl), length):
            windows.append(RankList(rl.sku_id, rl.creative_ids[s:s + length],
                                    rl.features[s:s + length], rl.labels[s:s + length]))
            owner.append(i)
    X, _, m = pad_lists(windows, length)
    flat = model.score_batch(X, m)
    parts: list[list[np.ndarray]] = [[] for _ in lists]
    for w, i in enumerate(owner):
        parts[i].append(flat[w, :m[w].sum()])
    return [np.concatenate(p) for p in parts]


def window_scores(rl: RankList, model: RerankModel) -> np.ndarray:
    return batch_window_scores([rl], model)[0]


def rerank_order(rl: RankList, model: RerankModel) -> np.ndarray:
    """Positions sorted by descending score, ties by ascending creative id."""
    if len(rl) == 1:
        return np.zeros(1, dtype=np.int64)
    s = window_scores(rl, model)
    return np.lexsort((rl.creative_ids, -s))


def rerank(sku, candidates: RankList, model: RerankModel) -> list[int]:
    """Creative ids of ``candidates`` in reranked order."""
    return [int(candidates.creative_ids[i]) for i in rerank_order(candidates, model)]


def build_rank_lists(soft_labels: dict, table, skus=None) -> list[RankList]:
    """One RankList per sku from teacher soft labels and reranker item features."""
    out = []
    for sku in (sorted(soft_labels) if skus is None else skus):
        ids = np.array([c for c, _ in soft_labels[sku]], dtype=np.int64)
        y = np.array([v for _, v in soft_labels[sku]], dtype=float)
        out.append(RankList(int(sku), ids, table.flat(ids), y))
    return out


def context_lists(n_lists: int, length: int, dims: int, rng: RngStream,
                  spread: float = 3.0) -> list[RankList]:
    """Lists whose labels depend on the list, not on the item alone.

    Items are ``x_i = m + N(0, I)`` with a per-list offset ``m ~ N(0, spread^2 I)``
    and label ``exp(-|x_i - mean(x)|^2 / 2)``: the best item is the one closest
    to its list's centre, which a per-item scorer cannot locate.
    """
    out = []
    for b in range(n_lists):
        r = rng.child(b)
        m = r.normal(0, spread, dims)
        X = m + r.normal(0, 1, (length, dims))
        y = np.exp(-0.5 * np.sum((X - X.mean(axis=0)) ** 2, axis=1))
        out.append(RankList(b, np.arange(length, dtype=np.int64) + b * length, X, y))
    return out
