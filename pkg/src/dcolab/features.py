"""Stage-1 feature construction.

Creatives are described by five categorical fields (index 0 is reserved for
unknown values) and three dense blocks: a synthetic image embedding standing
in for a CNN backbone, hashed tf-idf text features with promo-word flags, and
a numeric size block.
"""
from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .datagen import COLOR_PALETTE, PROMO_WORDS, Catalog, Creative, CreativeElements
from .errors import InvalidArgument
from .numerics import RngStream

CATEGORICAL_FIELDS = ("sku", "bg_color", "sku_color", "template_series", "template")
DENSE_FIELDS = ("image_embedding", "text", "size")
CONTEXTUAL = ("sku", "image_embedding", "text", "size", "bg_color", "sku_color")
CREATIVE_SPACE = ("template_series", "template")


@dataclass
class FeatureConfig:
    tfidf_dims: int = 256
    image_dims: int = 32
    image_noise: float = 0.1
    promo_lexicon: tuple[str, ...] = PROMO_WORDS
    seed: int = 0


@dataclass
class FeatureSchema:
    config: FeatureConfig
    vocab: dict[str, dict] = field(default_factory=dict)
    idf: dict[str, float] = field(default_factory=dict)
    n_docs: int = 0

    @property
    def fields(self) -> list[str]:
        return list(CATEGORICAL_FIELDS) + list(DENSE_FIELDS)

    def cat_sizes(self) -> dict[str, int]:
        # +1 for the reserved unknown slot
        return {f: len(self.vocab[f]) + 1 for f in CATEGORICAL_FIELDS}

    def dense_dims(self) -> dict[str, int]:
        return {
            "image_embedding": self.config.image_dims,
            "text": self.config.tfidf_dims + len(self.config.promo_lexicon),
            "size": 3,
        }

    def group_of(self, name: str) -> str:
        return "creative" if name in CREATIVE_SPACE else "contextual"

    def to_dict(self) -> dict:
        return {
            "config": {
                "tfidf_dims": self.config.tfidf_dims,
                "image_dims": self.config.image_dims,
                "image_noise": self.config.image_noise,
                "promo_lexicon": list(self.config.promo_lexicon),
                "seed": self.config.seed,
            },
            "vocab": {f: [[str(k), v] for k, v in sorted(m.items(), key=lambda kv: kv[1])]
                      for f, m in self.vocab.items()},
            "idf": sorted(self.idf.items()),
            "n_docs": self.n_docs,
        }

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _raw_value(catalog: Catalog | None, el: CreativeElements, name: str):
    if name == "sku":
        return el.sku_id
    if name == "bg_color":
        return el.bg_color
    if name == "sku_color":
        return catalog.sku_color.get(el.sku_id) if catalog is not None else None
    if name == "template_series":
        return el.template_series_id
    if name == "template":
        return el.template_id
    raise InvalidArgument(f"unknown categorical field {name!r}")


def build_schema(catalog: Catalog, config: FeatureConfig | None = None) -> FeatureSchema:
    config = config or FeatureConfig()
    vocab = {}
    for f in CATEGORICAL_FIELDS:
        seen = sorted({_raw_value(catalog, c.elements, f) for c in catalog.creatives}, key=str)
        vocab[f] = {v: i + 1 for i, v in enumerate(seen)}
    df = Counter()
    for c in catalog.creatives:
        df.update(set(c.elements.copy_tokens))
    n = len(catalog.creatives)
    idf = {t: math.log((1 + n) / (1 + d)) + 1.0 for t, d in df.items()}
    return FeatureSchema(config, vocab, idf, n)


def encode_categoricals(elements: CreativeElements, schema: FeatureSchema,
                        catalog: Catalog | None = None) -> np.ndarray:
    return np.array([schema.vocab[f].get(_raw_value(catalog, elements, f), 0)
                     for f in CATEGORICAL_FIELDS], dtype=np.int64)


def dominant_color_onehot(bg_color: str) -> np.ndarray:
    if bg_color not in COLOR_PALETTE:
        raise InvalidArgument(f"color {bg_color!r} is not in the 12-color palette")
    v = np.zeros(len(COLOR_PALETTE))
    v[COLOR_PALETTE.index(bg_color)] = 1.0
    return v


@lru_cache(maxsize=65536)
def token_hash(token: str, dims: int) -> tuple[int, float]:
    """Stable (bucket, sign) for signed feature hashing."""
    h = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")
    return h % dims, (1.0 if (h >> 63) & 1 == 0 else -1.0)


def tfidf_unhashed(corpus, idf: dict[str, float] | None = None) -> list[dict[str, float]]:
    """Plain tf-idf per document as {token: weight}, L2-normalised."""
    corpus = [list(doc) for doc in corpus]
    if idf is None:
        n = len(corpus)
        df = Counter()
        for doc in corpus:
            df.update(set(doc))
        idf = {t: math.log((1 + n) / (1 + d)) + 1.0 for t, d in df.items()}
    out = []
    for doc in corpus:
        tf = Counter(doc)
        vec = {t: cnt * idf.get(t, 0.0) for t, cnt in tf.items()}
        norm = math.sqrt(sum(v * v for v in vec.values()))
        out.append({t: v / norm for t, v in vec.items()} if norm > 0 else {})
    return out


def tfidf_features(corpus, dims: int, idf: dict[str, float] | None = None) -> sp.csr_matrix:
    """Hashed tf-idf: smoothed idf, raw-count tf, L2 norm, then signed hashing into ``dims``."""
    if dims < 1:
        raise InvalidArgument("dims must be >= 1")
    corpus = [list(doc) for doc in corpus]
    if not corpus:
        raise InvalidArgument("corpus is empty")
    docs = tfidf_unhashed(corpus, idf)
    rows, cols, vals = [], [], []
    for i, vec in enumerate(docs):
        for t, v in vec.items():
            b, s = token_hash(t, dims)
            rows.append(i)
            cols.append(b)
            vals.append(s * v)
    # duplicate (row, col) entries are summed on conversion
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(corpus), dims))


def promo_word_flags(copy_tokens, lexicon=PROMO_WORDS) -> np.ndarray:
    if not lexicon:
        raise InvalidArgument("promo lexicon must not be empty")
    toks = set(copy_tokens)
    return np.array([1.0 if w in toks else 0.0 for w in lexicon])


def size_features(el: CreativeElements) -> np.ndarray:
    return np.array([el.width / 1000.0, el.height / 1000.0, el.width / el.height])


_IMAGE_FIELDS = ("sku", "template_series", "template", "size", "bg_color", "sku_color")


def element_latent(catalog: Catalog, creative: Creative) -> np.ndarray:
    return np.concatenate([catalog.latents[f][catalog.field_value(creative, f)] for f in _IMAGE_FIELDS])


def synth_image_embedding(creative: Creative, dims: int, catalog: Catalog,
                          noise_scale: float = 0.1, seed: int = 0) -> np.ndarray:
    """Unit vector: fixed random projection of the element latents plus keyed noise."""
    if dims < 1:
        raise InvalidArgument("dims must be >= 1")
    z = element_latent(catalog, creative)
    proj = RngStream(seed, 0).child("image-projection", dims).normal(size=(dims, z.size)) / math.sqrt(dims)
    signal = proj @ z
    signal /= max(np.linalg.norm(signal), 1e-12)
    noise = RngStream(seed, 0).child("image-noise", creative.creative_id).normal(size=dims)
    noise /= max(np.linalg.norm(noise), 1e-12)
    v = signal + noise_scale * noise
    return v / np.linalg.norm(v)


@dataclass
class FeatureBatch:
    cat: np.ndarray                    # (n, n_cat) int indices
    dense: dict[str, np.ndarray]       # name -> (n, dim)

    def __len__(self):
        return int(self.cat.shape[0])

    def take(self, idx) -> "FeatureBatch":
        return FeatureBatch(self.cat[idx], {k: v[idx] for k, v in self.dense.items()})


@dataclass
class FeatureTable:
    """Per-creative features for a whole catalog; rows indexed by creative id."""

    schema: FeatureSchema
    cat: np.ndarray
    dense: dict[str, np.ndarray]

    @property
    def schema_hash(self) -> str:
        return self.schema.hash()

    def batch(self, creative_ids) -> FeatureBatch:
        ids = np.asarray(creative_ids, dtype=np.int64)
        return FeatureBatch(self.cat[ids], {k: v[ids] for k, v in self.dense.items()})

    def flat(self, creative_ids) -> np.ndarray:
        """Item vectors for the reranker: small one-hots + dense blocks (tf-idf excluded)."""
        ids = np.asarray(creative_ids, dtype=np.int64)
        sizes = self.schema.cat_sizes()
        parts = []
        for j, f in enumerate(CATEGORICAL_FIELDS):
            if f == "sku":
                continue
            oh = np.zeros((ids.size, sizes[f]))
            oh[np.arange(ids.size), self.cat[ids, j]] = 1.0
            parts.append(oh)
        parts.append(self.dense["image_embedding"][ids])
        parts.append(self.dense["size"][ids])
        return np.concatenate(parts, axis=1)


def build_feature_table(catalog: Catalog, schema: FeatureSchema) -> FeatureTable:
    cfg = schema.config
    cat = np.stack([encode_categoricals(c.elements, schema, catalog) for c in catalog.creatives])
    text = tfidf_features([c.elements.copy_tokens for c in catalog.creatives], cfg.tfidf_dims,
                          schema.idf).toarray()
    promo = np.stack([promo_word_flags(c.elements.copy_tokens, cfg.promo_lexicon) for c in catalog.creatives])
    image = np.stack([synth_image_embedding(c, cfg.image_dims, catalog, cfg.image_noise, cfg.seed)
                      for c in catalog.creatives])
    size = np.stack([size_features(c.elements) for c in catalog.creatives])
    dense = {"image_embedding": image, "text": np.concatenate([text, promo], axis=1), "size": size}
    return FeatureTable(schema, cat, dense)
