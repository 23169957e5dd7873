"""Finite-difference harness shared by the gradient tests.

Each builder returns ``(loss(params) -> float, params, analytic grads)`` for a
small random instance; :func:`max_error` checks a random subset of
coordinates (all of them when the model is small enough).
"""
import numpy as np

from dcolab.datagen import OPERATORS
from dcolab.features import FeatureBatch
from dcolab.interact import AutocoModel, FieldSpec, InteractConfig, InteractionArch, field_pairs
from dcolab.numerics import RngStream, finite_diff_check
from dcolab.reranker import RerankConfig, RerankModel
from dcolab.teacher import TeacherConfig, TeacherModel

FIELDS = [FieldSpec("a", "cat", 4), FieldSpec("b", "cat", 3, "creative"), FieldSpec("d", "dense", 3)]


def max_error(loss, params: dict, grads: dict, rng: RngStream, max_coords: int = 200) -> float:
    keys = sorted(params)
    full = np.concatenate([params[k].ravel() for k in keys])
    g = np.concatenate([grads[k].ravel() for k in keys])
    idx = np.arange(full.size)
    if full.size > max_coords:
        idx = np.sort(rng.choice(full.size, max_coords, replace=False))

    def unflat(vec):
        out, pos = {}, 0
        for k in keys:
            n = params[k].size
            out[k] = vec[pos:pos + n].reshape(params[k].shape)
            pos += n
        return out

    def f(sub):
        x = full.copy()
        x[idx] = sub
        return loss(unflat(x))

    return finite_diff_check(f, full[idx], g[idx])


def random_batch(rng: RngStream, n: int = 6, fields=FIELDS) -> FeatureBatch:
    cat = np.stack([rng.integers(f.size, size=n) for f in fields if f.kind == "cat"], axis=1)
    dense = {f.name: rng.normal(size=(n, f.size)) for f in fields if f.kind == "dense"}
    return FeatureBatch(cat, dense)


def autoco_case(op: str, seed: int, activation: str = "identity"):
    rng = RngStream(seed).child("autoco", op)
    cfg = InteractConfig(d_emb=3, d_lat=2, activation=activation, l2=0.01, init_scale=0.5,
                         monotone=False)
    arch = InteractionArch.fixed(field_pairs(FIELDS), op)
    model = AutocoModel.init(FIELDS, arch, cfg, rng.child("init"))
    for k, v in model.params.items():
        model.params[k] = v + rng.child("jitter", k).normal(0, 0.3, v.shape)
    batch = random_batch(rng.child("batch"))
    y = rng.uniform(size=len(batch))
    sw = rng.uniform(0.5, 2.0, size=len(batch))
    loss, g = model.loss_and_grad(batch, y, sw)
    return (lambda p: model.loss_and_grad(batch, y, sw, params=p)[0]), model.params, g


def autoco_alpha_case(seed: int):
    """Gradient w.r.t. the relaxed architecture weights, all branches mixed."""
    rng = RngStream(seed).child("alpha")
    cfg = InteractConfig(d_emb=3, d_lat=2, activation="tanh", init_scale=0.5)
    pairs = field_pairs(FIELDS)
    arch = InteractionArch.fixed(pairs, "plus")
    model = AutocoModel.init(FIELDS, arch, cfg, rng.child("init"))
    batch = random_batch(rng.child("batch"))
    y = rng.uniform(size=len(batch))
    w = rng.uniform(0.1, 1.0, size=(len(pairs), len(OPERATORS)))
    _, _, ga = model.loss_and_grad(batch, y, weights=w, want_alpha=True)
    return (lambda p: model.loss_and_grad(batch, y, weights=p["w"])[0]), {"w": w}, {"w": ga}


def teacher_case(seed: int):
    rng = RngStream(seed).child("teacher")
    model = TeacherModel.init(FIELDS, TeacherConfig(d_emb=4, heads=2, l2=0.01, init_scale=0.5),
                              rng.child("init"))
    batch = random_batch(rng.child("batch"))
    y = rng.uniform(size=len(batch))
    sw = rng.uniform(0.5, 2.0, size=len(batch))
    loss, g = model.loss_and_grad(batch, y, sw)
    return (lambda p: model.loss_and_grad(batch, y, sw, params=p)[0]), model.params, g


def reranker_case(loss_kind: str, seed: int, arch: str = "transformer", dropout: float = 0.0):
    rng = RngStream(seed).child("rerank", loss_kind, arch)
    cfg = RerankConfig(width=4, n_blocks=2, heads=2, d_ff=6, dropout=dropout, list_len=4,
                       loss=loss_kind, arch=arch, tau=0.7)
    nf = 3
    model = RerankModel.init(nf, cfg, rng.child("init"))
    for k, v in model.params.items():
        if k != "theta":
            model.params[k] = v + rng.child("jitter", k).normal(0, 0.2, v.shape)
    X = rng.normal(size=(3, 4, nf))
    y = rng.uniform(size=(3, 4))
    mask = np.ones((3, 4), dtype=bool)
    mask[1, 3] = mask[2, 2:] = False
    drop = rng.child("dropout") if dropout > 0 else None
    loss, g = model.loss_and_grad(X, y, mask, rng=drop)
    return (lambda p: model.loss_and_grad(X, y, mask, params=p, rng=drop)[0]), model.params, g
