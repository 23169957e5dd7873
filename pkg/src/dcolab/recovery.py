"""Planted-operator recovery benchmark for the stage-1 operator search.

A task enumerates every value combination of a few catalog fields, plants
interaction operators on chosen field pairs through the datagen squash, and
draws binomial click counts per combination. The model sees each field as a
dense block that leaks the field's planted latent through a fixed random
projection (the same mechanism that feeds the synthetic image embedding), so
learned field embeddings are linear in the latents.

Under that encoding and a linear head with non-negative projections, the
candidate operators describe different function classes:

* ``plus`` and ``concat`` are additive, i.e. indistinguishable from
  first-order terms, so the complexity penalty settles ties towards ``plus``;
* ``max`` adds non-negative multiples of ``|u - v|`` (convex, degree one);
* ``min`` adds non-positive multiples of ``|u - v|``;
* ``multiply`` adds bilinear (degree two) forms.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .datagen import GenConfig, PairPlant, combine, generate_catalog, planted_readout, squash_factor
from .errors import InvalidConfig
from .features import FeatureBatch
from .interact import FieldSpec, InteractConfig, one_shot_search
from .labeling import Dataset
from .numerics import RngStream


class GridTable:
    """Feature lookup for combination rows: row id -> one dense block per field."""

    def __init__(self, blocks: dict[str, np.ndarray], codes: np.ndarray, names: list[str]):
        self.blocks = blocks
        self.codes = codes           # (n_rows, n_fields) value index per field
        self.names = names

    def batch(self, ids) -> FeatureBatch:
        ids = np.asarray(ids, dtype=np.int64)
        dense = {f: self.blocks[f][self.codes[ids, k]] for k, f in enumerate(self.names)}
        return FeatureBatch(np.zeros((ids.size, 0), dtype=np.int64), dense)


@dataclass
class RecoveryTask:
    train: Dataset
    val: Dataset
    fields: list[FieldSpec]
    planted: dict[tuple[int, int], str]     # field-index pair -> planted operator
    ctr: np.ndarray                          # ground-truth CTR per combination row


def operator_recovery_task(plants: list[tuple[str, str, str]], seed: int,
                           fields: tuple[str, ...] | None = None, strength: float = 0.7,
                           base_rate: float = 0.1, impressions: int = 10_000_000,
                           val_fraction: float = 0.3, latent_dim: int = 2,
                           leak_dims: int = 4) -> RecoveryTask:
    """Build train/val splits (disjoint combinations) with planted operators.

    ``plants`` holds ``(field_a, field_b, operator)`` triples; ``fields``
    defaults to the planted fields in order of first appearance.
    """
    if not plants:
        raise InvalidConfig("at least one planted pair is required")
    if not (0.0 < val_fraction < 1.0):
        raise InvalidConfig("val_fraction must lie in (0, 1)")
    if fields is None:
        fields = tuple(dict.fromkeys(f for a, b, _ in plants for f in (a, b)))
    rng = RngStream(seed)
    catalog = generate_catalog(GenConfig(n_skus=2, latent_dim=latent_dim), rng.child("catalog"))
    sizes = [catalog.latents[f].shape[0] for f in fields]
    codes = np.array(list(itertools.product(*[range(s) for s in sizes])), dtype=np.int64)

    signal = np.zeros(len(codes))
    planted = {}
    for i, (fa, fb, op) in enumerate(plants):
        a, b = fields.index(fa), fields.index(fb)
        plant = PairPlant(fa, fb, op, strength)
        w = planted_readout(plant, latent_dim, rng.child("readout", i))
        za = catalog.latents[fa][codes[:, a]]
        zb = catalog.latents[fb][codes[:, b]]
        signal += strength * (combine(op, za, zb) @ w)
        planted[(min(a, b), max(a, b))] = op
    ctr = np.clip(base_rate * squash_factor(base_rate, signal), 0.001, 0.5)
    clicks = rng.child("clicks").generator.binomial(impressions, ctr)
    y = clicks / impressions

    blocks = {f: catalog.latents[f] @ rng.child("leak", f).normal(size=(latent_dim, leak_dims))
              for f in fields}
    table = GridTable(blocks, codes, list(fields))
    perm = rng.child("split").permutation(len(codes))
    n_train = int(round((1.0 - val_fraction) * len(codes)))
    tr, va = perm[:n_train], perm[n_train:]
    train = Dataset(tr, y[tr], None, None, table)
    val = Dataset(va, y[va], None, None, table)
    specs = [FieldSpec(f, "dense", leak_dims, "creative" if k % 2 else "contextual")
             for k, f in enumerate(fields)]
    return RecoveryTask(train, val, specs, planted, ctr)


def recovery_config(**overrides) -> InteractConfig:
    """Search settings validated on this benchmark (Adam, warm-up, exploration)."""
    cfg = dict(d_emb=8, d_lat=8, batch_size=32, alpha_batch_size=256, warmup_epochs=30,
               search_epochs=300, optimizer="adam", lr=0.03, alpha_lr=0.15,
               activation="identity", complexity_penalty=3e-4, explore_prob=0.3)
    cfg.update(overrides)
    return InteractConfig(**cfg)


def run_recovery(task: RecoveryTask, config: InteractConfig, seed: int, all_pairs: bool = False):
    """Search once; returns ``(selected op map, trace)`` keyed like ``task.planted``.

    By default only the planted pairs are searched; ``all_pairs`` searches every pair.
    """
    pairs = None if all_pairs else sorted(task.planted)
    arch, _, trace = one_shot_search(task.train, task.val, config, RngStream(seed, 1), task.fields,
                                     pairs=pairs)
    return dict(zip(arch.pairs, arch.ops())), trace
