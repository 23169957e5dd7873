"""Synthetic ad catalog, planted ground-truth CTR and day-stamped impression logs.

The generator reproduces the two data pathologies the pipeline is built around:

* sparse samples -- traffic inside each sku follows a power law over the
  creatives, so the tail receives few or no impressions;
* ambiguous samples -- a chosen fraction of creatives gets an independent
  log-normal CTR multiplier per day, so the same creative looks good on some
  days and bad on others.

Logs are held column-wise in :class:`ImpressionLog` (one row per impression)
because desk-scale runs easily produce millions of impressions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import InvalidConfig
from .numerics import RngStream, sigmoid

OPERATORS = ("concat", "multiply", "plus", "max", "min")

COLOR_PALETTE = (
    "black", "white", "red", "orange", "yellow", "yellow-green",
    "green", "turquoise", "cyan", "blue", "purple", "magenta",
)

# (width, height) in pixels
SIZE_PALETTE = ((750, 1000), (800, 800), (1080, 1920), (600, 300), (1200, 628), (640, 960))

PROMO_WORDS = ("discount", "full-discount", "coupon", "flash-sale", "free-shipping", "new")

# categorical element fields a plant may reference
PLANTABLE_FIELDS = ("sku", "template_series", "template", "size", "bg_color", "sku_color")


@dataclass(frozen=True)
class CreativeElements:
    sku_id: int
    template_series_id: int
    template_id: int
    width: int
    height: int
    bg_color: str
    copy_tokens: tuple[str, ...]
    size_id: int = 0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise InvalidConfig("creative width and height must be positive")
        if self.bg_color not in COLOR_PALETTE:
            raise InvalidConfig(f"unknown background color {self.bg_color!r}")


@dataclass(frozen=True)
class Creative:
    creative_id: int
    elements: CreativeElements

    @property
    def sku_id(self) -> int:
        return self.elements.sku_id


@dataclass
class GenConfig:
    n_skus: int = 40
    creatives_per_sku: tuple[int, int] = (6, 10)
    n_groups: int = 4
    series_per_group: int = 4
    templates_per_series: int = 4
    n_sizes: int = len(SIZE_PALETTE)
    copy_vocab: int = 80
    copy_len: tuple[int, int] = (3, 7)
    promo_rate: float = 0.3
    latent_dim: int = 2

    def validate(self) -> None:
        for name in ("n_skus", "n_groups", "series_per_group", "templates_per_series",
                     "n_sizes", "copy_vocab", "latent_dim"):
            if getattr(self, name) <= 0:
                raise InvalidConfig(f"{name} must be positive")
        lo, hi = self.creatives_per_sku
        if lo < 2 or hi < lo:
            raise InvalidConfig("creatives_per_sku must satisfy 2 <= lo <= hi")
        if self.n_sizes > len(SIZE_PALETTE):
            raise InvalidConfig(f"at most {len(SIZE_PALETTE)} sizes are available")


@dataclass
class Catalog:
    skus: list[int]
    creatives: list[Creative]
    creatives_by_sku: dict[int, list[Creative]]
    sku_group: dict[int, int]
    sku_color: dict[int, str]
    group_series: dict[int, list[int]]
    series_templates: dict[int, list[int]]
    vocab_sizes: dict[str, int]
    # per field: (vocab, latent_dim) appearance latents, planted effects read these
    latents: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    def creative(self, creative_id: int) -> Creative:
        return self.creatives[creative_id]

    def field_value(self, creative: Creative, name: str) -> int:
        """Categorical index of ``creative`` for a plantable field."""
        el = creative.elements
        if name == "sku":
            return el.sku_id
        if name == "template_series":
            return el.template_series_id
        if name == "template":
            return el.template_id
        if name == "size":
            return el.size_id
        if name == "bg_color":
            return COLOR_PALETTE.index(el.bg_color)
        if name == "sku_color":
            return COLOR_PALETTE.index(self.sku_color[el.sku_id])
        raise InvalidConfig(f"unknown field {name!r}")

    def field_column(self, name: str) -> np.ndarray:
        return np.array([self.field_value(c, name) for c in self.creatives], dtype=np.int64)

    def within_sku_rank(self) -> np.ndarray:
        """Position of each creative inside its sku's candidate list."""
        rank = np.zeros(len(self.creatives), dtype=np.int64)
        for lst in self.creatives_by_sku.values():
            for pos, c in enumerate(lst):
                rank[c.creative_id] = pos
        return rank

    def sku_of(self) -> np.ndarray:
        return np.array([c.sku_id for c in self.creatives], dtype=np.int64)


def generate_catalog(config: GenConfig, rng: RngStream) -> Catalog:
    config.validate()
    g = rng.child("catalog")
    n_series = config.n_groups * config.series_per_group
    group_series = {
        grp: list(range(grp * config.series_per_group, (grp + 1) * config.series_per_group))
        for grp in range(config.n_groups)
    }
    series_templates = {
        s: list(range(s * config.templates_per_series, (s + 1) * config.templates_per_series))
        for s in range(n_series)
    }
    words = [f"w{i:03d}" for i in range(config.copy_vocab)]

    skus = list(range(config.n_skus))
    sku_group, sku_color = {}, {}
    creatives: list[Creative] = []
    by_sku: dict[int, list[Creative]] = {}
    lo, hi = config.creatives_per_sku
    for sku in skus:
        sku_group[sku] = int(g.integers(config.n_groups))
        sku_color[sku] = COLOR_PALETTE[int(g.integers(len(COLOR_PALETTE)))]
        n = int(g.integers(lo, hi + 1))
        lst = []
        for _ in range(n):
            series = int(g.choice(group_series[sku_group[sku]]))
            template = int(g.choice(series_templates[series]))
            size_id = int(g.integers(config.n_sizes))
            w, h = SIZE_PALETTE[size_id]
            color = COLOR_PALETTE[int(g.integers(len(COLOR_PALETTE)))]
            n_tok = int(g.integers(config.copy_len[0], config.copy_len[1] + 1))
            toks = [words[int(i)] for i in g.integers(config.copy_vocab, size=n_tok)]
            if g.uniform() < config.promo_rate:
                toks.append(PROMO_WORDS[int(g.integers(len(PROMO_WORDS)))])
            el = CreativeElements(sku, series, template, w, h, color, tuple(toks), size_id)
            c = Creative(len(creatives), el)
            creatives.append(c)
            lst.append(c)
        by_sku[sku] = lst

    vocab = {
        "sku": config.n_skus,
        "template_series": n_series,
        "template": n_series * config.templates_per_series,
        "size": config.n_sizes,
        "bg_color": len(COLOR_PALETTE),
        "sku_color": len(COLOR_PALETTE),
    }
    lat = rng.child("latents")
    latents = {f: lat.child(f).normal(size=(vocab[f], config.latent_dim)) for f in PLANTABLE_FIELDS}
    return Catalog(skus, creatives, by_sku, sku_group, sku_color, group_series,
                   series_templates, vocab, latents)


@dataclass(frozen=True)
class PairPlant:
    field_a: str
    field_b: str
    operator: str
    strength: float = 1.0


@dataclass
class PlantSpec:
    pairs: list[PairPlant] = field(default_factory=list)
    base_rate: float = 0.02
    days: int = 7
    drift_fraction: float = 0.0
    drift_sigma: float = 1.0
    clamp: tuple[float, float] | None = (0.001, 0.5)


def combine(op: str, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Apply an interaction operator row-wise to two latent blocks."""
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
    raise InvalidConfig(f"unknown operator {op!r}")


@dataclass
class GroundTruthCtr:
    base_rate: float
    pairs: list[PairPlant]
    readouts: list[np.ndarray]
    pair_factor: np.ndarray          # (n_creatives,) squashed sum of planted pair signals
    day_drift: np.ndarray            # (n_creatives, days); ones for undrifted creatives
    drifted: np.ndarray              # sorted creative ids carrying drift
    clamp: tuple[float, float] | None

    @property
    def days(self) -> int:
        return self.day_drift.shape[1]

    def ctr_matrix(self) -> np.ndarray:
        raw = self.base_rate * self.pair_factor[:, None] * self.day_drift
        if self.clamp is None:
            return raw
        return np.clip(raw, self.clamp[0], self.clamp[1])

    def ctr(self, creative_id: int, day: int) -> float:
        raw = self.base_rate * self.pair_factor[creative_id] * self.day_drift[creative_id, day]
        if self.clamp is None:
            return float(raw)
        return float(min(max(raw, self.clamp[0]), self.clamp[1]))

    def mean_ctr(self) -> np.ndarray:
        """Day-averaged CTR per creative."""
        return self.ctr_matrix().mean(axis=1)


def pair_signal(catalog: Catalog, plant: PairPlant, readout: np.ndarray) -> np.ndarray:
    """``strength * readout . op(z_a, z_b)`` for every creative (logit-scale effect)."""
    za = catalog.latents[plant.field_a][catalog.field_column(plant.field_a)]
    zb = catalog.latents[plant.field_b][catalog.field_column(plant.field_b)]
    return plant.strength * (combine(plant.operator, za, zb) @ readout)


def squash_factor(base_rate: float, signal: np.ndarray) -> np.ndarray:
    """Monotone map from summed pair signals to a multiplicative CTR factor.

    ``sigmoid(logit(base_rate) + signal) / base_rate``: a zero signal leaves the
    base rate unchanged and the factor never pushes the rate above 1.
    """
    signal = np.asarray(signal, dtype=float)
    z = np.log(base_rate / (1.0 - base_rate)) + signal
    return sigmoid(z) / base_rate


def planted_readout(plant: PairPlant, latent_dim: int, rng: RngStream) -> np.ndarray:
    """Unit-norm non-negative readout, so each pair effect is increasing in op(z_a, z_b)."""
    width = 2 * latent_dim if plant.operator == "concat" else latent_dim
    w = np.abs(rng.normal(size=width))
    return w / np.linalg.norm(w)


def generate_ground_truth_ctr(catalog: Catalog, plant: PlantSpec, rng: RngStream) -> GroundTruthCtr:
    if not (0.0 <= plant.drift_fraction <= 1.0):
        raise InvalidConfig("drift_fraction must lie in [0, 1]")
    if plant.days <= 0:
        raise InvalidConfig("days must be positive")
    if not (0.0 < plant.base_rate < 1.0):
        raise InvalidConfig("base_rate must lie in (0, 1)")
    n = len(catalog.creatives)
    signal = np.zeros(n)
    readouts = []
    for i, p in enumerate(plant.pairs):
        if p.operator not in OPERATORS:
            raise InvalidConfig(f"unknown operator {p.operator!r}")
        for f in (p.field_a, p.field_b):
            if f not in catalog.latents:
                raise InvalidConfig(f"field {f!r} cannot carry a plant")
        w = planted_readout(p, catalog.latents[p.field_a].shape[1], rng.child("readout", i))
        readouts.append(w)
        signal += pair_signal(catalog, p, w)
    factor = squash_factor(plant.base_rate, signal) if plant.pairs else np.ones(n)

    drift = np.ones((n, plant.days))
    drifted = np.zeros(0, dtype=np.int64)
    if plant.drift_fraction > 0:
        # stratify by within-sku position so every exposure tier gets the same share
        # (systematic sampling along rank order: any prefix of tiers is within one creative)
        rank = catalog.within_sku_rank()
        sel = rng.child("drift-select")
        order = np.lexsort((sel.uniform(size=n), rank))
        f, u = plant.drift_fraction, sel.uniform()
        pos = np.arange(n)
        take = np.floor((pos + 1) * f + u) - np.floor(pos * f + u) >= 1
        drifted = np.sort(order[take]).astype(np.int64)
        noise = rng.child("drift-noise").normal(0.0, plant.drift_sigma, size=(drifted.size, plant.days))
        drift[drifted] = np.exp(noise)
    return GroundTruthCtr(plant.base_rate, list(plant.pairs), readouts, factor, drift,
                          drifted, plant.clamp)


@dataclass
class TrafficSpec:
    impressions_per_day: int = 200_000
    exponent: float = 1.5
    sku_weights: str = "uniform"     # or "power"


class ImpressionRecord(NamedTuple):
    day: int
    sku_id: int
    creative_id: int
    clicked: bool


@dataclass
class ImpressionLog:
    """Column-wise impression log sorted by (day, arrival order)."""

    day: np.ndarray
    sku_id: np.ndarray
    creative_id: np.ndarray
    clicked: np.ndarray

    def __len__(self) -> int:
        return int(self.day.size)

    def __iter__(self) -> Iterator[ImpressionRecord]:
        for d, s, c, k in zip(self.day.tolist(), self.sku_id.tolist(),
                              self.creative_id.tolist(), self.clicked.tolist()):
            yield ImpressionRecord(d, s, c, bool(k))

    def __getitem__(self, idx) -> "ImpressionLog":
        return ImpressionLog(self.day[idx], self.sku_id[idx], self.creative_id[idx], self.clicked[idx])

    @classmethod
    def from_records(cls, records: Sequence[ImpressionRecord]) -> "ImpressionLog":
        if len(records) == 0:
            return cls.empty()
        arr = list(zip(*records))
        return cls(np.asarray(arr[0], dtype=np.int32), np.asarray(arr[1], dtype=np.int32),
                   np.asarray(arr[2], dtype=np.int32), np.asarray(arr[3], dtype=bool))

    @classmethod
    def empty(cls) -> "ImpressionLog":
        z = np.zeros(0, dtype=np.int32)
        return cls(z, z.copy(), z.copy(), np.zeros(0, dtype=bool))

    @classmethod
    def concat(cls, logs: Sequence["ImpressionLog"]) -> "ImpressionLog":
        if not logs:
            return cls.empty()
        return cls(*(np.concatenate([getattr(l, f) for l in logs])
                     for f in ("day", "sku_id", "creative_id", "clicked")))

    def ctr(self) -> float:
        return float(self.clicked.mean()) if len(self) else float("nan")


def plan_allocation(catalog: Catalog, traffic: TrafficSpec) -> np.ndarray:
    """Deterministic per-day impression counts for every creative.

    Within a sku the i-th listed creative gets weight ``(i + 1) ** -exponent``;
    counts are rounded with the largest-remainder rule so they sum exactly to
    ``impressions_per_day``.
    """
    if traffic.impressions_per_day < 0:
        raise InvalidConfig("impressions_per_day must be non-negative")
    n = len(catalog.creatives)
    rank = catalog.within_sku_rank()
    sku = catalog.sku_of()
    w = (rank + 1.0) ** (-traffic.exponent)
    sku_tot = np.bincount(sku, weights=w, minlength=len(catalog.skus))
    share = w / sku_tot[sku]
    if traffic.sku_weights == "power":
        sw = (np.arange(len(catalog.skus)) + 1.0) ** (-traffic.exponent)
    elif traffic.sku_weights == "uniform":
        sw = np.ones(len(catalog.skus))
    else:
        raise InvalidConfig(f"unknown sku_weights {traffic.sku_weights!r}")
    share = share * (sw / sw.sum())[sku]
    exact = share * traffic.impressions_per_day
    counts = np.floor(exact).astype(np.int64)
    short = traffic.impressions_per_day - int(counts.sum())
    if short > 0:
        order = np.lexsort((np.arange(n), -(exact - counts)))
        counts[order[:short]] += 1
    return counts


def _simulate_day(day: int, counts: np.ndarray, ctr_day: np.ndarray, sku: np.ndarray,
                  rng: RngStream) -> ImpressionLog:
    cid = np.repeat(np.arange(counts.size, dtype=np.int32), counts)
    cid = rng.permutation(cid).astype(np.int32)
    clicked = rng.uniform(size=cid.size) < ctr_day[cid]
    return ImpressionLog(np.full(cid.size, day, dtype=np.int32), sku[cid].astype(np.int32), cid, clicked)


def simulate_logs(catalog: Catalog, gt: GroundTruthCtr, days: int, traffic: TrafficSpec,
                  rng: RngStream, first_day: int = 0) -> ImpressionLog:
    """Bernoulli click simulation; one random stream per day (``stream = day``)."""
    if days <= 0:
        raise InvalidConfig("days must be positive")
    if first_day + days > gt.days:
        raise InvalidConfig(f"ground truth covers {gt.days} days, asked for {first_day + days}")
    counts = plan_allocation(catalog, traffic)
    ctr = gt.ctr_matrix()
    sku = catalog.sku_of()
    parts = [_simulate_day(d, counts, ctr[:, d], sku, rng.child("day", d))
             for d in range(first_day, first_day + days)]
    return ImpressionLog.concat(parts)
