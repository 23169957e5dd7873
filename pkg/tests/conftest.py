import numpy as np
import pytest

from dcolab.datagen import GenConfig, PairPlant, PlantSpec, TrafficSpec, generate_catalog, \
    generate_ground_truth_ctr, simulate_logs
from dcolab.features import FeatureConfig, build_feature_table, build_schema
from dcolab.numerics import RngStream


@pytest.fixture(scope="session")
def small_world():
    """A 12-sku catalog with one planted pair, 3 days of logs and its feature table."""
    rng = RngStream(11)
    cat = generate_catalog(GenConfig(n_skus=12, creatives_per_sku=(4, 6)), rng.child("cat"))
    gt = generate_ground_truth_ctr(
        cat, PlantSpec([PairPlant("template_series", "bg_color", "multiply", 1.5)], 0.05, 3, 0.3),
        rng.child("gt"))
    logs = simulate_logs(cat, gt, 3, TrafficSpec(20_000, 1.0), rng.child("logs"))
    table = build_feature_table(cat, build_schema(cat, FeatureConfig(tfidf_dims=32, image_dims=8)))
    return cat, gt, logs, table


@pytest.fixture
def rng():
    return RngStream(1234)


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))))


def ambiguity_world(seed: int, drift_fraction: float, days: int = 20):
    """100 skus x 2 creatives; the head creative of each sku gets 8/9 of the
    traffic (>= 8 * 10^4 impressions), the tail one is never above the mean."""
    rng = RngStream(seed)
    cat = generate_catalog(GenConfig(n_skus=100, creatives_per_sku=(2, 2)), rng.child("c"))
    gt = generate_ground_truth_ctr(cat, PlantSpec([], 0.2, days, drift_fraction, 1.0), rng.child("g"))
    logs = simulate_logs(cat, gt, days, TrafficSpec(450_000, 3.0), rng.child("l"))
    return cat, gt, logs
