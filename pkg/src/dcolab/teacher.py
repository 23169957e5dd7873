"""Rank model ("teacher"): a self-attention CTR predictor over field embeddings.

Every field is embedded into ``d_emb`` (categoricals by table lookup, dense
blocks by a linear map). One multi-head self-attention block lets the fields
attend to each other, a ReLU residual keeps the raw embeddings, and a linear
head reads the flattened field sequence::

    E = embed(x)                       (n, F, d)
    H = relu(MHA(E) + E)
    logit = bias + flatten(H) . w

It is trained on every impression with the click as label, so creatives that
the stage-1 strict set drops (sparse or ambiguous) still shape it. Because
features depend on the creative only, impressions are merged into one
exposure-weighted row per creative before training; the weighted loss equals
the per-impression loss exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import EmptyDataset, IncompatibleModel, InvalidArgument, NumericalFailure
from .interact import FieldSpec, TrainMetrics, compute_metrics, fields_from_schema
from .labeling import Dataset
from .numerics import Adam, RngStream, sigmoid


@dataclass
class TeacherConfig:
    d_emb: int = 8
    heads: int = 2
    lr: float = 0.01
    epochs: int = 200
    batch_size: int = 256
    l2: float = 1e-4
    init_scale: float = 0.1
    train_days: int | None = None      # time split: only impressions with day < train_days


@dataclass
class TeacherModel:
    fields: list[FieldSpec]
    params: dict[str, np.ndarray]
    config: TeacherConfig = field(default_factory=TeacherConfig)
    schema_hash: str = ""

    @classmethod
    def init(cls, fields: list[FieldSpec], config: TeacherConfig, rng: RngStream,
             schema_hash: str = "") -> "TeacherModel":
        d, s = config.d_emb, config.init_scale
        p: dict[str, np.ndarray] = {"bias": np.zeros(1), "w_out": rng.normal(0, s, len(fields) * d)}
        for f in fields:
            scale = s if f.kind == "cat" else 1.0 / np.sqrt(f.size)
            p[f"emb_{f.name}"] = rng.normal(0, scale, (f.size, d))
        nn.init_mha(p, "att_", d, rng.child("attention"))
        return cls(list(fields), p, config, schema_hash)

    def zeros_like(self) -> "TeacherModel":
        return TeacherModel(self.fields, {k: np.zeros_like(v) for k, v in self.params.items()},
                            self.config, self.schema_hash)

    def _embed(self, batch, p):
        out = np.empty((len(batch), len(self.fields), self.config.d_emb))
        cat_j = 0
        for k, f in enumerate(self.fields):
            if f.kind == "cat":
                out[:, k] = p[f"emb_{f.name}"][batch.cat[:, cat_j]]
                cat_j += 1
            else:
                out[:, k] = batch.dense[f.name] @ p[f"emb_{f.name}"]
        return out

    def logits(self, batch, params=None, cache: bool = False):
        p = self.params if params is None else params
        E = self._embed(batch, p)
        att, att_cache = nn.mha_forward(E, p, "att_", self.config.heads)
        H, pos = nn.relu_forward(att + E)
        flat = H.reshape(len(batch), -1)
        s = p["bias"][0] + flat @ p["w_out"]
        if not np.all(np.isfinite(s)):
            raise NumericalFailure("non-finite teacher logit")
        if cache:
            return s, (E, att_cache, pos, flat)
        return s

    def forward(self, batch, params=None) -> np.ndarray:
        return sigmoid(self.logits(batch, params))

    def loss_and_grad(self, batch, y, sample_weight=None, params=None):
        """Weighted mean logloss (plus L2 on embeddings) and its gradient."""
        p = self.params if params is None else params
        n = len(batch)
        if n == 0:
            raise InvalidArgument("empty batch")
        y = np.asarray(y, dtype=float)
        sw = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        sw = sw / sw.sum()
        s, (E, att_cache, pos, flat) = self.logits(batch, p, cache=True)
        loss = float(np.sum(sw * (np.logaddexp(0.0, s) - y * s)))
        ds = sw * (sigmoid(s) - y)

        g = {"bias": np.array([ds.sum()]), "w_out": flat.T @ ds}
        dH = (ds[:, None] * p["w_out"][None, :]).reshape(E.shape)
        dpre = nn.relu_backward(dH, pos)
        dE, ga = nn.mha_backward(dpre, att_cache, p, "att_", self.config.heads)
        dE = dE + dpre
        g.update(ga)
        cat_j = 0
        for k, f in enumerate(self.fields):
            key = f"emb_{f.name}"
            if f.kind == "cat":
                g[key] = np.zeros_like(p[key])
                np.add.at(g[key], batch.cat[:, cat_j], dE[:, k])
                cat_j += 1
            else:
                g[key] = batch.dense[f.name].T @ dE[:, k]
            if self.config.l2 > 0:
                g[key] = g[key] + self.config.l2 * p[key]
                loss += 0.5 * self.config.l2 * float(np.sum(p[key] ** 2))
        return loss, g


def _check_schema(model: TeacherModel, table) -> None:
    h = getattr(table, "schema_hash", None)
    if model.schema_hash and h is not None and h != model.schema_hash:
        raise IncompatibleModel(f"feature schema {h} does not match model schema {model.schema_hash}")


def train_teacher(dataset: Dataset, config: TeacherConfig, rng: RngStream,
                  val: Dataset | None = None):
    """Mini-batch Adam on exposure-weighted per-creative rows.

    Returns ``(model, metrics)``; metrics are computed on ``val`` when given,
    otherwise on the (weighted) training rows.
    """
    if config.train_days is not None:
        if dataset.day is None:
            raise InvalidArgument("time split needs per-row days")
        dataset = dataset.subset(np.flatnonzero(dataset.day < config.train_days))
    if len(dataset) == 0:
        raise EmptyDataset("teacher training set is empty")
    table = dataset.table
    rows = dataset.compact()
    fields = fields_from_schema(table.schema)
    model = TeacherModel.init(fields, config, rng.child("init"), table.schema_hash)
    opt = Adam(lr=config.lr)
    w = rows.sample_weights()
    X = rows.inputs()
    for epoch in range(config.epochs):
        order = rng.child("epoch", epoch).permutation(len(rows))
        for s in range(0, len(rows), config.batch_size):
            idx = order[s:s + config.batch_size]
            loss, g = model.loss_and_grad(X.take(idx), rows.y[idx], w[idx])
            if not np.isfinite(loss):
                raise NumericalFailure(f"teacher loss diverged at epoch {epoch}")
            opt.step(model.params, g)
    ref = rows if val is None else val.compact()
    return model, compute_metrics(model.forward(ref.inputs()), ref.y, ref.sample_weights())


def predict_ctr(table, model: TeacherModel, creative_ids=None) -> np.ndarray:
    """Predicted CTR for creatives of a feature table (all of them by default)."""
    _check_schema(model, table)
    ids = np.arange(table.cat.shape[0]) if creative_ids is None else np.asarray(creative_ids)
    return model.forward(table.batch(ids))


# sku_id -> [(creative_id, soft label)], candidates in catalog order
SoftLabelSet = dict


def emit_soft_labels(catalog, model: TeacherModel, table) -> SoftLabelSet:
    """Soft label for every creative of every sku, exposed or not."""
    y = predict_ctr(table, model)
    return {sku: [(c.creative_id, float(y[c.creative_id])) for c in catalog.creatives_by_sku[sku]]
            for sku in catalog.skus}
