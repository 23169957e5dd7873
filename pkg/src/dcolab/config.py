"""Experiment configuration: INI sections bound onto dataclasses.

Each section of the file maps to one dataclass; keys must be existing field
names (anything else is rejected with the key's name) and values are parsed
according to the type of the field's default. Resolution order, later wins:
dataclass defaults, profile, config file, ``DCO_<SECTION>__<KEY>`` environment
variables, command-line flags.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import os
from dataclasses import dataclass, field

from .datagen import GenConfig, PairPlant, PlantSpec, TrafficSpec
from .errors import InvalidConfig
from .features import FeatureConfig
from .interact import InteractConfig
from .reranker import RerankConfig
from .teacher import TeacherConfig

ENV_PREFIX = "DCO_"


@dataclass
class DatagenSection:
    n_skus: int = 160
    creatives_min: int = 6
    creatives_max: int = 10
    n_groups: int = 4
    series_per_group: int = 4
    templates_per_series: int = 4
    latent_dim: int = 2
    plants: str = "template_series*bg_color:multiply:1.5, template*size:max:1.0"
    base_rate: float = 0.02
    drift_fraction: float = 0.46
    drift_sigma: float = 1.0
    train_days: int = 7
    eval_days: int = 2
    impressions_per_day: int = 100_000
    exponent: float = 1.5
    eval_impressions_per_day: int = 100_000

    def gen_config(self) -> GenConfig:
        return GenConfig(n_skus=self.n_skus, creatives_per_sku=(self.creatives_min, self.creatives_max),
                         n_groups=self.n_groups, series_per_group=self.series_per_group,
                         templates_per_series=self.templates_per_series, latent_dim=self.latent_dim)

    def plant_spec(self) -> PlantSpec:
        return PlantSpec(parse_plants(self.plants), self.base_rate, self.train_days + self.eval_days,
                         self.drift_fraction, self.drift_sigma)

    def traffic(self) -> TrafficSpec:
        return TrafficSpec(self.impressions_per_day, self.exponent)

    def eval_traffic(self) -> TrafficSpec:
        # uniform logging inside each sku keeps the replay estimate unbiased
        return TrafficSpec(self.eval_impressions_per_day, 0.0)


@dataclass
class LabelingSection:
    period: int = 1


@dataclass
class StrictSection:
    val_fraction: float = 0.25


@dataclass
class TeacherSection(TeacherConfig):
    pass


@dataclass
class RerankerSection(RerankConfig):
    val_fraction: float = 0.25


@dataclass
class BanditSection:
    arms: str = "0.05, 0.04, 0.03, 0.02, 0.01"
    steps: int = 50_000
    seeds: int = 20
    eps: float = 0.1
    warmup: int = 1000
    csv_every: int = 1000

    def arm_ctrs(self) -> list[float]:
        return [float(x) for x in self.arms.split(",") if x.strip()]


@dataclass
class EvalSection:
    seeds: int = 5
    bucket_size: int = 1000
    prefilter_k: int = 10
    top_k: int = 5
    hbm_strength: float = 20.0
    min_lift: float = 0.10


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "runs/default"
    workers: int = 1
    datagen: DatagenSection = field(default_factory=DatagenSection)
    labeling: LabelingSection = field(default_factory=LabelingSection)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    interact: InteractConfig = field(default_factory=InteractConfig)
    strict: StrictSection = field(default_factory=StrictSection)
    teacher: TeacherSection = field(default_factory=TeacherSection)
    reranker: RerankerSection = field(default_factory=RerankerSection)
    bandit: BanditSection = field(default_factory=BanditSection)
    eval: EvalSection = field(default_factory=EvalSection)


SECTIONS = ("datagen", "labeling", "features", "interact", "strict", "teacher", "reranker",
            "bandit", "eval")
GLOBAL_KEYS = ("seed", "out", "workers")

# Validated desk-scale settings. The interact defaults (plain SGD, few epochs)
# barely move on a few hundred strict rows, so the desk profile uses Adam.
PROFILES = {
    "desk": {
        "interact": {"optimizer": "adam", "lr": 0.01, "batch_size": 64, "epochs": 60,
                     "search_epochs": 40, "warmup_epochs": 10, "alpha_lr": 0.1,
                     "alpha_batch_size": 64, "explore_prob": 0.3, "complexity_penalty": 1e-3},
        "reranker": {"label_scale": "zscore", "epochs": 100, "batch_items": 40, "lr": 3e-3,
                     "dropout": 0.1},
    },
    "full-scale": {
        "reranker": {"d_ff": 512, "n_blocks": 4, "heads": 2, "dropout": 0.4, "lr": 1e-3,
                     "batch_items": 960, "list_len": 5, "label_scale": "zscore"},
    },
}


def parse_plants(text: str) -> list[PairPlant]:
    """``"field_a*field_b:op:strength, ..."`` -> PairPlants."""
    out = []
    for item in (t.strip() for t in text.split(",")):
        if not item:
            continue
        try:
            pair, op, strength = item.split(":")
            a, b = pair.split("*")
            out.append(PairPlant(a.strip(), b.strip(), op.strip(), float(strength)))
        except ValueError as exc:
            raise InvalidConfig(f"cannot parse plant {item!r} (want a*b:op:strength)") from exc
    return out


def _parse(value: str, default, key: str):
    v = value.strip()
    try:
        if isinstance(default, bool):
            low = v.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(v)
        if isinstance(default, int):
            return int(v.replace("_", ""))
        if isinstance(default, float):
            return float(v)
        if isinstance(default, tuple):
            return tuple(type(default[0])(x.strip()) for x in v.split(",") if x.strip()) if default \
                else tuple(x.strip() for x in v.split(",") if x.strip())
        if default is None:
            return None if v.lower() in ("", "none") else int(v)
        return v
    except ValueError as exc:
        raise InvalidConfig(f"bad value {value!r} for key {key!r}") from exc


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(str(x) for x in value)
    if value is None:
        return "none"
    return str(value)


def apply_section(obj, values: dict[str, str], section: str, raw: bool = True) -> None:
    names = {f.name for f in dataclasses.fields(obj)}
    for key, value in values.items():
        if key not in names:
            raise InvalidConfig(f"unknown key {key!r} in section [{section}]")
        cur = getattr(obj, key)
        setattr(obj, key, _parse(value, cur, f"{section}.{key}") if raw else value)


def load_config(path: str | None = None, profile: str = "desk", env: dict | None = None,
                overrides: dict | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if profile not in PROFILES:
        raise InvalidConfig(f"unknown profile {profile!r}")
    for sec, values in PROFILES[profile].items():
        apply_section(getattr(cfg, sec), values, sec, raw=False)
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise InvalidConfig(f"malformed config {path}: {exc}") from exc
        for sec in parser.sections():
            if sec == "run":
                for key, value in parser[sec].items():
                    if key not in GLOBAL_KEYS:
                        raise InvalidConfig(f"unknown key {key!r} in section [run]")
                    setattr(cfg, key, _parse(value, getattr(cfg, key), key))
            elif sec in SECTIONS:
                apply_section(getattr(cfg, sec), dict(parser[sec]), sec)
            else:
                raise InvalidConfig(f"unknown section [{sec}]")
    env = os.environ if env is None else env
    for name, value in sorted(env.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX):].lower()
        if "__" in key:
            sec, k = key.split("__", 1)
            if sec not in SECTIONS:
                raise InvalidConfig(f"unknown section in environment variable {name}")
            apply_section(getattr(cfg, sec), {k: value}, sec)
        elif key in GLOBAL_KEYS:
            setattr(cfg, key, _parse(value, getattr(cfg, key), key))
        elif key in ("config", "profile"):
            continue
        else:
            raise InvalidConfig(f"unknown environment variable {name}")
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg


def to_ini(cfg: ExperimentConfig) -> str:
    """Fully resolved config; reading it back reproduces ``cfg``."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["run"] = {k: _format(getattr(cfg, k)) for k in GLOBAL_KEYS if k != "out"}
    for sec in SECTIONS:
        obj = getattr(cfg, sec)
        parser[sec] = {f.name: _format(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(to_ini(cfg).encode()).hexdigest()[:16]
