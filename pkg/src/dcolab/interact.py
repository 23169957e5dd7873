"""Stage-1 interaction model with a searchable operator per field pair.

Every field (categorical index or dense block) is embedded into ``d_emb``.
Each unordered field pair is combined by one operator from
``concat, multiply, plus, max, min``, projected by a per-(pair, operator)
fully connected layer to ``d_lat`` and read out by a shared head::

    logit = bias + sum_f first_order_f + sum_pairs head . act(P_op op(e_i, e_j) + c_op)

With ``act = identity`` this is exactly ``head(sum of pair latents)``. The
operator per pair is found by a proximal one-shot search: a continuous
architecture matrix ``alpha`` is updated with the validation gradient and
projected to a one-hot choice after every step, while the network weights
are trained under the projected (discrete) architecture.

When ``monotone`` is on (the default) projections and head are kept
non-negative, so each pair's contribution is non-decreasing in every
coordinate of its operator output. Without that constraint ``max`` and
``min`` describe the same function class (``max(u, v) = -min(-u, -v)`` and
the sign flips are absorbed by the embeddings and projection), and the
search could not tell them apart.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np

from .datagen import OPERATORS
from .errors import InvalidArgument, NumericalFailure, SearchDiverged
from .numerics import Adam, RngStream, sigmoid

OP_INDEX = {op: i for i, op in enumerate(OPERATORS)}


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: str        # "cat" or "dense"
    size: int        # vocab size (incl. reserved 0) or input width
    group: str = "contextual"


@dataclass
class InteractConfig:
    d_emb: int = 8
    d_lat: int = 8
    lr: float = 0.01
    alpha_lr: float = 0.05
    epochs: int = 10
    batch_size: int = 256
    search_epochs: int = 30
    warmup_epochs: int = 0
    activation: str = "identity"   # or "tanh", "relu"
    monotone: bool = True
    pairs: str = "all"            # or "cross": contextual x creative-space only
    optimizer: str = "sgd"        # or "adam"
    init_scale: float = 0.1
    l2: float = 0.0
    complexity_penalty: float = 0.0
    explore_prob: float = 0.0
    alpha_batch_size: int = 0     # 0: same as batch_size
    diverge_logloss: float = 10.0


def op_complexity() -> np.ndarray:
    """Relative cost per operator: projection width times interaction degree.

    ``plus`` is the cheapest (linear in the embeddings, width d); ``concat`` is
    linear with width 2d; ``multiply``, ``max`` and ``min`` are non-linear with width d.
    """
    width = np.array([2.0 if op == "concat" else 1.0 for op in OPERATORS])
    degree = np.array([1.0 if op in ("concat", "plus") else 2.0 for op in OPERATORS])
    return width * degree


def field_pairs(fields: list[FieldSpec], mode: str = "all") -> list[tuple[int, int]]:
    pairs = list(itertools.combinations(range(len(fields)), 2))
    if mode == "cross":
        pairs = [(i, j) for i, j in pairs if fields[i].group != fields[j].group]
    elif mode != "all":
        raise InvalidArgument(f"unknown pair mode {mode!r}")
    return pairs


@dataclass
class InteractionArch:
    """Continuous architecture weights plus their one-hot projection."""

    pairs: list[tuple[int, int]]
    alpha: np.ndarray                   # (n_pairs, 5) relaxed weights in [0, 1]

    @classmethod
    def fixed(cls, pairs, ops) -> "InteractionArch":
        if isinstance(ops, str):
            ops = [ops] * len(pairs)
        alpha = np.zeros((len(pairs), len(OPERATORS)))
        for p, op in enumerate(ops):
            if op not in OP_INDEX:
                raise InvalidArgument(f"unknown operator {op!r}")
            alpha[p, OP_INDEX[op]] = 1.0
        return cls(list(pairs), alpha)

    def onehot(self) -> np.ndarray:
        """Nearest one-hot matrix; ties resolve to the lowest operator index."""
        out = np.zeros_like(self.alpha)
        out[np.arange(len(self.pairs)), np.argmax(self.alpha, axis=1)] = 1.0
        return out

    def ops(self) -> list[str]:
        return [OPERATORS[i] for i in np.argmax(self.alpha, axis=1)]

    def op_map(self, fields: list[FieldSpec]) -> dict[str, str]:
        return {f"{fields[i].name}*{fields[j].name}": op for (i, j), op in zip(self.pairs, self.ops())}

    def is_feasible(self) -> bool:
        oh = self.onehot()
        return bool(np.all(oh.sum(axis=1) == 1.0))

    def copy(self) -> "InteractionArch":
        return InteractionArch(list(self.pairs), self.alpha.copy())


def combine(op: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if op == "concat":
        return np.concatenate([a, b], axis=-1)
    if op == "multiply":
        return a * b
    if op == "plus":
        return a + b
    if op == "max":
        return np.maximum(a, b)
    if op == "min":
        return np.minimum(a, b)
    raise InvalidArgument(f"unknown operator {op!r}")


def combine_backward(op: str, a: np.ndarray, b: np.ndarray, draw: np.ndarray):
    """Gradients of ``combine`` w.r.t. both operands; max/min ties go to ``a``."""
    if op == "concat":
        d = a.shape[-1]
        return draw[..., :d], draw[..., d:]
    if op == "multiply":
        return draw * b, draw * a
    if op == "plus":
        return draw, draw
    if op == "max":
        m = a >= b
        return np.where(m, draw, 0.0), np.where(m, 0.0, draw)
    if op == "min":
        m = a <= b
        return np.where(m, draw, 0.0), np.where(m, 0.0, draw)
    raise InvalidArgument(f"unknown operator {op!r}")


def interact_pair(e_i, e_j, op: str, proj: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Project ``op(e_i, e_j)`` to the common latent width: ``raw @ proj + bias``."""
    e_i = np.asarray(e_i, dtype=float)
    e_j = np.asarray(e_j, dtype=float)
    if e_i.shape != e_j.shape:
        raise InvalidArgument("operands must have the same shape")
    raw = combine(op, e_i, e_j)
    if proj.shape[0] != raw.shape[-1] or proj.shape[1] != np.shape(bias)[-1]:
        raise InvalidArgument(f"projection {proj.shape} does not fit operator output {raw.shape}")
    return raw @ proj + bias


_ACT = {
    "identity": (lambda z: z, lambda z, a: np.ones_like(z)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(float)),
}


def _pkey(p: int, op: str) -> tuple[str, str]:
    return f"P{p}_{op}", f"c{p}_{op}"


@dataclass
class AutocoModel:
    fields: list[FieldSpec]
    arch: InteractionArch
    params: dict[str, np.ndarray]
    config: InteractConfig = field(default_factory=InteractConfig)
    schema_hash: str = ""

    # ------------------------------------------------------------------ setup
    @classmethod
    def init(cls, fields: list[FieldSpec], arch: InteractionArch, config: InteractConfig,
             rng: RngStream, schema_hash: str = "") -> "AutocoModel":
        d, dl, s = config.d_emb, config.d_lat, config.init_scale
        p: dict[str, np.ndarray] = {"bias": np.zeros(1), "head": np.abs(rng.normal(0, s, dl)) + s}
        for f in fields:
            p[f"w1_{f.name}"] = np.zeros(f.size)
            scale = s if f.kind == "cat" else 1.0 / np.sqrt(f.size)
            p[f"emb_{f.name}"] = rng.normal(0, scale, (f.size, d))
        for k in range(len(arch.pairs)):
            for op in OPERATORS:
                fan_in = 2 * d if op == "concat" else d
                w = rng.normal(0, 1.0 / np.sqrt(fan_in), (fan_in, dl))
                pk, ck = _pkey(k, op)
                p[pk] = np.abs(w) if config.monotone else w
                p[ck] = np.zeros(dl)
        return cls(list(fields), arch, p, config, schema_hash)

    def param_keys(self, ops_only_active: bool = False) -> list[str]:
        keys = ["bias", "head"]
        for f in self.fields:
            keys += [f"w1_{f.name}", f"emb_{f.name}"]
        active = self.arch.ops()
        for k in range(len(self.arch.pairs)):
            for op in OPERATORS:
                if ops_only_active and op != active[k]:
                    continue
                keys += list(_pkey(k, op))
        return keys

    def zeros_like(self) -> "AutocoModel":
        return replace(self, params={k: np.zeros_like(v) for k, v in self.params.items()})

    # ---------------------------------------------------------------- forward
    def _embed(self, batch, params):
        cat_j = 0
        embs, first = [], 0.0
        for f in self.fields:
            if f.kind == "cat":
                x = batch.cat[:, cat_j]
                cat_j += 1
                embs.append(params[f"emb_{f.name}"][x])
                first = first + params[f"w1_{f.name}"][x]
            else:
                x = batch.dense[f.name]
                embs.append(x @ params[f"emb_{f.name}"])
                first = first + x @ params[f"w1_{f.name}"]
        return embs, first

    def logits(self, batch, params=None, weights: np.ndarray | None = None, cache: bool = False):
        """Logits for a batch; ``weights`` overrides the one-hot architecture."""
        params = self.params if params is None else params
        w = self.arch.onehot() if weights is None else weights
        act, _ = _ACT[self.config.activation]
        embs, first = self._embed(batch, params)
        n = len(batch)
        out = params["bias"][0] + (first if np.ndim(first) else np.full(n, first))
        pair_cache = []
        for k, (i, j) in enumerate(self.arch.pairs):
            z = np.zeros((n, self.config.d_lat))
            branches = {}
            for o, op in enumerate(OPERATORS):
                if w[k, o] == 0.0 and not cache:
                    continue
                pk, ck = _pkey(k, op)
                raw = combine(op, embs[i], embs[j])
                y = raw @ params[pk] + params[ck]
                branches[op] = (raw, y)
                if w[k, o] != 0.0:
                    z += w[k, o] * y
            a = act(z)
            out = out + a @ params["head"]
            pair_cache.append((z, a, branches))
        if not np.all(np.isfinite(out)):
            raise NumericalFailure("non-finite logit")
        if cache:
            return out, (embs, pair_cache, w)
        return out

    def forward(self, batch, params=None) -> np.ndarray:
        return sigmoid(self.logits(batch, params))

    # --------------------------------------------------------------- gradient
    def loss_and_grad(self, batch, y, sample_weight=None, params=None, weights=None,
                      want_alpha: bool = False):
        """Weighted mean logloss and its gradient w.r.t. params (and ``alpha``)."""
        params = self.params if params is None else params
        y = np.asarray(y, dtype=float)
        n = len(batch)
        if n == 0:
            raise InvalidArgument("empty batch")
        sw = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        sw = sw / sw.sum()
        s, (embs, pair_cache, w) = self.logits(batch, params, weights, cache=True)
        loss = float(np.sum(sw * (np.logaddexp(0.0, s) - y * s)))
        ds = sw * (sigmoid(s) - y)

        g = {k: np.zeros_like(v) for k, v in params.items()}
        g["bias"][0] = ds.sum()
        _, dact = _ACT[self.config.activation]
        demb = [np.zeros_like(e) for e in embs]
        alpha_grad = np.zeros_like(w)
        for k, (i, j) in enumerate(self.arch.pairs):
            z, a, branches = pair_cache[k]
            g["head"] += a.T @ ds
            dz = (ds[:, None] * params["head"][None, :]) * dact(z, a)
            for o, op in enumerate(OPERATORS):
                if op not in branches:
                    continue
                raw, yk = branches[op]
                if want_alpha:
                    alpha_grad[k, o] = float(np.sum(dz * yk))
                if w[k, o] == 0.0:
                    continue
                pk, ck = _pkey(k, op)
                g[pk] += w[k, o] * (raw.T @ dz)
                g[ck] += w[k, o] * dz.sum(axis=0)
                draw = w[k, o] * (dz @ params[pk].T)
                da, db = combine_backward(op, embs[i], embs[j], draw)
                demb[i] += da
                demb[j] += db
        cat_j = 0
        for f, de in zip(self.fields, demb):
            if f.kind == "cat":
                x = batch.cat[:, cat_j]
                cat_j += 1
                np.add.at(g[f"emb_{f.name}"], x, de)
                np.add.at(g[f"w1_{f.name}"], x, ds)
            else:
                x = batch.dense[f.name]
                g[f"emb_{f.name}"] += x.T @ de
                g[f"w1_{f.name}"] += x.T @ ds
        if self.config.l2 > 0:
            for key in g:
                if key.startswith("emb_") or key.startswith("P"):
                    g[key] += self.config.l2 * params[key]
                    loss += 0.5 * self.config.l2 * float(np.sum(params[key] ** 2))
        if want_alpha:
            return loss, g, alpha_grad
        return loss, g

    def project(self) -> None:
        """Keep projections and head non-negative when the model is monotone."""
        if not self.config.monotone:
            return
        for k, v in self.params.items():
            if k == "head" or k.startswith("P"):
                np.maximum(v, 0.0, out=v)


def grad(batch, y, arch: InteractionArch, model: AutocoModel, want_alpha: bool = False,
         sample_weight=None):
    """Mean-logloss gradient of ``model`` evaluated under ``arch``."""
    weights = arch.onehot()
    return model.loss_and_grad(batch, y, sample_weight, weights=weights, want_alpha=want_alpha)


def fm_logits(batch, fields: list[FieldSpec], params: dict) -> np.ndarray:
    """Plain factorization machine on the same embedding/first-order parameters.

    ``bias + sum first-order + 1/2 * sum_k[(sum_f e_fk)^2 - sum_f e_fk^2]``.
    """
    cat_j = 0
    n = len(batch)
    out = np.full(n, params["bias"][0], dtype=float)
    total = 0.0
    sq = 0.0
    for f in fields:
        if f.kind == "cat":
            x = batch.cat[:, cat_j]
            cat_j += 1
            e = params[f"emb_{f.name}"][x]
            out = out + params[f"w1_{f.name}"][x]
        else:
            x = batch.dense[f.name]
            e = x @ params[f"emb_{f.name}"]
            out = out + x @ params[f"w1_{f.name}"]
        total = total + e
        sq = sq + e * e
    return out + 0.5 * np.sum(total * total - sq, axis=1)


def fm_forward(batch, fields, params) -> np.ndarray:
    return sigmoid(fm_logits(batch, fields, params))


# ------------------------------------------------------------------ metrics
@dataclass
class TrainMetrics:
    logloss: float
    accuracy: float
    auc: float
    precision: tuple[float, float]
    recall: tuple[float, float]
    f1: tuple[float, float]

    def as_dict(self) -> dict:
        return {
            "logloss": self.logloss, "accuracy": self.accuracy, "auc": self.auc,
            "precision_0": self.precision[0], "precision_1": self.precision[1],
            "recall_0": self.recall[0], "recall_1": self.recall[1],
            "f1_0": self.f1[0], "f1_1": self.f1[1],
        }


def weighted_auc(scores, y, w=None) -> float:
    """AUC with fractional labels: row i carries w*y positive and w*(1-y) negative mass."""
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    pos, neg = w * y, w * (1.0 - y)
    if pos.sum() <= 0 or neg.sum() <= 0:
        return 0.5
    uniq, inv = np.unique(scores, return_inverse=True)
    pos_u = np.bincount(inv, weights=pos, minlength=uniq.size)
    neg_u = np.bincount(inv, weights=neg, minlength=uniq.size)
    neg_below = np.cumsum(neg_u) - neg_u
    return float(np.sum(pos_u * (neg_below + 0.5 * neg_u)) / (pos.sum() * neg.sum()))


def compute_metrics(p, y, w=None) -> TrainMetrics:
    p = np.clip(np.asarray(p, dtype=float), 1e-12, 1 - 1e-12)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    wn = w / w.sum()
    ll = float(-np.sum(wn * (y * np.log(p) + (1 - y) * np.log1p(-p))))
    pred1 = p >= 0.5
    pos_mass, neg_mass = w * y, w * (1 - y)
    tp = float(np.sum(pos_mass[pred1]))
    fp = float(np.sum(neg_mass[pred1]))
    tn = float(np.sum(neg_mass[~pred1]))
    fn = float(np.sum(pos_mass[~pred1]))
    acc = (tp + tn) / max(tp + tn + fp + fn, 1e-300)

    def prf(tp_, fp_, fn_):
        pr = tp_ / (tp_ + fp_) if tp_ + fp_ > 0 else 0.0
        rc = tp_ / (tp_ + fn_) if tp_ + fn_ > 0 else 0.0
        f = 2 * pr * rc / (pr + rc) if pr + rc > 0 else 0.0
        return pr, rc, f

    p1, r1, f1 = prf(tp, fp, fn)
    p0, r0, f0 = prf(tn, fn, fp)
    return TrainMetrics(ll, acc, weighted_auc(p, y, w), (p0, p1), (r0, r1), (f0, f1))


# ----------------------------------------------------------------- training
def _batches(n: int, batch_size: int, rng: RngStream):
    order = rng.permutation(n)
    for s in range(0, n, batch_size):
        yield order[s:s + batch_size]


def _sgd_step(model: AutocoModel, grads: dict, lr: float, keys=None, opt=None) -> None:
    if opt is not None:
        opt.step(model.params, {k: grads[k] for k in (keys or grads)})
    else:
        for k in (keys or grads):
            model.params[k] -= lr * grads[k]
    model.project()


def evaluate(model: AutocoModel, data) -> TrainMetrics:
    p = model.forward(data.inputs())
    return compute_metrics(p, data.y, data.weights)


def fields_from_schema(schema, pairs_mode: str = "all") -> list[FieldSpec]:
    """FieldSpecs in the order the feature table stores categoricals then dense blocks."""
    from .features import CATEGORICAL_FIELDS, DENSE_FIELDS
    sizes = schema.cat_sizes()
    dims = schema.dense_dims()
    out = [FieldSpec(f, "cat", sizes[f], schema.group_of(f)) for f in CATEGORICAL_FIELDS]
    out += [FieldSpec(f, "dense", dims[f], schema.group_of(f)) for f in DENSE_FIELDS]
    return out


def train_fixed_arch(train, val, arch: InteractionArch, config: InteractConfig, rng: RngStream,
                     fields: list[FieldSpec] | None = None, model: AutocoModel | None = None,
                     schema_hash: str = ""):
    """Mini-batch training under a fixed one-hot architecture.

    Returns ``(model, metrics on val)``. If ``model`` is given it is warm-started
    (copied, not mutated).
    """
    if not arch.is_feasible():
        raise InvalidArgument("architecture is not one-hot feasible")
    if model is None:
        model = AutocoModel.init(fields, arch.copy(), config, rng.child("init"), schema_hash)
    else:
        model = replace(model, arch=arch.copy(), params={k: v.copy() for k, v in model.params.items()},
                        config=config)
    opt = Adam(lr=config.lr) if config.optimizer == "adam" else None
    keys = model.param_keys(ops_only_active=True)
    sw_all = train.sample_weights()
    for epoch in range(config.epochs):
        for idx in _batches(len(train), config.batch_size, rng.child("epoch", epoch)):
            _, g = model.loss_and_grad(train.inputs(idx), train.y[idx], sw_all[idx])
            _sgd_step(model, g, config.lr, keys, opt)
    return model, evaluate(model, val)


@dataclass
class SearchEpoch:
    epoch: int
    val_logloss: float
    ops: list[str]
    alpha: np.ndarray


def one_shot_search(train, val, config: InteractConfig, rng: RngStream,
                    fields: list[FieldSpec], schema_hash: str = "", pairs=None):
    """Proximal one-shot operator search.

    Per training mini-batch:

    1. gradient step on the relaxed ``alpha`` with the validation loss, taken
       at the current one-hot architecture, then clipped to [0, 1]; the
       discrete architecture is the nearest one-hot matrix (row argmax);
    2. gradient step on the network weights with the training loss under that
       discrete architecture.

    Three optional knobs make the choice between weight-shared branches fairer.
    ``warmup_epochs`` first trains the supernet with a uniformly sampled
    operator per pair. ``explore_prob`` replaces a pair's operator by a uniform
    draw in the weight step with that probability, so inactive branches keep up
    with the shared embeddings. ``complexity_penalty`` adds a zero-sum cost
    (see :func:`op_complexity`) to the ``alpha`` gradient, so that among
    operators that fit equally well the cheaper one wins.

    Returns ``(arch, model, trace)``; ``arch`` is one-hot feasible and the
    model is warm-started for :func:`train_fixed_arch`. ``pairs`` overrides the
    searched field pairs (default: :func:`field_pairs` under ``config.pairs``).
    """
    pairs = field_pairs(fields, config.pairs) if pairs is None else [tuple(p) for p in pairs]
    alpha = 0.5 + 1e-3 * rng.child("alpha-init").uniform(-1, 1, (len(pairs), len(OPERATORS)))
    arch = InteractionArch(pairs, alpha)
    model = AutocoModel.init(fields, arch, config, rng.child("init"), schema_hash)
    opt = Adam(lr=config.lr) if config.optimizer == "adam" else None
    cost = op_complexity()
    cost = cost - cost.mean()      # zero-sum: shifts preference without draining every alpha
    sw_tr, sw_va = train.sample_weights(), val.sample_weights()
    trace: list[SearchEpoch] = []

    warm = rng.child("warmup")
    for epoch in range(config.warmup_epochs):
        for idx in _batches(len(train), config.batch_size, warm.child(epoch)):
            ops = warm.integers(len(OPERATORS), size=len(pairs))
            w = np.zeros_like(alpha)
            w[np.arange(len(pairs)), ops] = 1.0
            _, g = model.loss_and_grad(train.inputs(idx), train.y[idx], sw_tr[idx], weights=w)
            _sgd_step(model, g, config.lr, None, opt)

    n_val = len(val)
    vb = config.alpha_batch_size or config.batch_size
    for epoch in range(config.search_epochs):
        er = rng.child("search", epoch)
        val_order = er.child("val").permutation(n_val)
        vpos = 0
        for idx in _batches(len(train), config.batch_size, er.child("train")):
            vidx = val_order[vpos:vpos + vb]
            vpos += vb
            if vidx.size == 0:
                val_order = er.child("val", vpos).permutation(n_val)
                vpos = vb
                vidx = val_order[:vb]
            _, _, ga = model.loss_and_grad(val.inputs(vidx), val.y[vidx], sw_va[vidx],
                                           weights=arch.onehot(), want_alpha=True)
            ga = ga + config.complexity_penalty * cost[None, :]
            arch.alpha = np.clip(arch.alpha - config.alpha_lr * ga, 0.0, 1.0)
            w = arch.onehot()
            if config.explore_prob > 0:
                flip = er.uniform(size=len(pairs)) < config.explore_prob
                if flip.any():
                    w[flip] = 0.0
                    w[np.flatnonzero(flip), er.integers(len(OPERATORS), size=int(flip.sum()))] = 1.0
            _, g = model.loss_and_grad(train.inputs(idx), train.y[idx], sw_tr[idx], weights=w)
            _sgd_step(model, g, config.lr, None, opt)
        vl = evaluate(model, val).logloss
        trace.append(SearchEpoch(epoch, vl, arch.ops(), arch.alpha.copy()))
        if not np.isfinite(vl) or vl > config.diverge_logloss:
            raise SearchDiverged(f"validation logloss {vl:.3g} at epoch {epoch}", trace)
    return arch.copy(), model, trace


def predict_topk(sku, candidates, model: AutocoModel, k: int, table) -> list:
    """Top-k candidates by predicted CTR; ties go to the lower creative id."""
    if k < 1:
        raise InvalidArgument("k must be >= 1")
    if not candidates:
        raise InvalidArgument("no candidates")
    ids = np.array([c.creative_id for c in candidates], dtype=np.int64)
    scores = model.forward(table.batch(ids))
    order = np.lexsort((ids, -scores))
    return [candidates[i] for i in order[:k]]
