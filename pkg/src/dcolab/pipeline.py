"""End-to-end two-stage pipeline on synthetic logs.

Stage 1 ("n choose 5") scores every candidate of a sku with the searched
interaction model, keeps the best ``prefilter_k``, orders them with the
distilled reranker and hands the first ``top_k`` to stage 2 ("5 choose 1"),
a bandit replayed on held-out, uniformly logged impressions.

Every stage reads its inputs from, and writes its outputs to, one run
directory (``<out>/<stage>/`` plus a ``manifest.json`` with sha256 hashes).
A stage can therefore run on its own (one CLI subcommand each) or as part of
:func:`run_pipeline`, which keeps everything in memory and writes as it goes.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import math
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import kendalltau

from . import bandit, persist
from .config import ExperimentConfig, config_hash, to_ini
from .datagen import Catalog, GroundTruthCtr, ImpressionLog, generate_catalog, \
    generate_ground_truth_ctr, simulate_logs
from .errors import IncompatibleModel
from .evaluation import BanditPolicy, FixedChoicePolicy, LoggedPolicy, UniformPolicy, \
    relative_lift, replay_sctr
from .features import FeatureTable, build_feature_table, build_schema
from .interact import AutocoModel, InteractionArch, fields_from_schema, one_shot_search, \
    train_fixed_arch
from .labeling import Dataset, aggregate_daily, ambiguity_recovery, build_strict_trainset, \
    build_teacher_trainset, detect_ambiguous, label_samples, well_exposed
from .numerics import RngStream
from .reranker import RankList, RerankConfig, RerankModel, batch_window_scores, build_rank_lists, \
    mean_ndcg, train_reranker
from .teacher import TeacherModel, emit_soft_labels, train_teacher

STAGES = ("gen", "label", "features", "train-teacher", "soft-labels", "search", "train-autoco",
          "train-rerank", "bandit-sim", "replay")

# direct inputs of each stage, listed in load order
DEPENDS = {
    "gen": (),
    "label": ("gen",),
    "features": ("gen",),
    "train-teacher": ("gen", "features"),
    "soft-labels": ("gen", "features", "train-teacher"),
    "search": ("gen", "features", "label"),
    "train-autoco": ("gen", "features", "label", "search"),
    "train-rerank": ("gen", "features", "soft-labels"),
    "bandit-sim": (),
    "replay": ("gen", "features", "soft-labels", "train-autoco", "train-rerank"),
}


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it and ``trail`` lists finished artifacts."""

    def __init__(self, stage: str, trail: list[str], cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.trail = trail
        self.cause = cause


def parallel_map(fn, items, workers: int = 1) -> list:
    """Ordered map; ``workers > 1`` fans out to processes, results merge in input order."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


@dataclass
class Run:
    """In-memory state of one pipeline run; ``metrics[stage]`` is JSON-ready."""

    config: ExperimentConfig
    catalog: Catalog | None = None
    truth: GroundTruthCtr | None = None
    train_logs: ImpressionLog | None = None
    eval_logs: ImpressionLog | None = None
    strict: Dataset | None = None
    table: FeatureTable | None = None
    teacher: TeacherModel | None = None
    soft_labels: dict | None = None
    search_arch: InteractionArch | None = None
    search_model: AutocoModel | None = None
    autoco: AutocoModel | None = None
    fm: AutocoModel | None = None
    reranker: RerankModel | None = None
    metrics: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)      # stage -> {csv name: (header, rows)}

    @property
    def rng(self) -> RngStream:
        return RngStream(self.config.seed)


# -------------------------------------------------------------------- helpers
def fmt(x) -> str:
    """Stable text form for CSV cells (``repr`` round-trips floats)."""
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return "nan" if math.isnan(x) else repr(x)
    if isinstance(x, np.integer):
        return str(int(x))
    return str(x)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def strict_split(strict: Dataset, val_fraction: float, rng: RngStream):
    """Train/val split of the strict set with disjoint creatives."""
    ids = np.unique(strict.creative_id)
    perm = rng.permutation(ids)
    val_ids = perm[:max(1, int(round(val_fraction * ids.size)))]
    is_val = np.isin(strict.creative_id, val_ids)
    return strict.subset(np.flatnonzero(~is_val)), strict.subset(np.flatnonzero(is_val))


def rerank_split(lists: list[RankList], val_fraction: float, rng: RngStream):
    """Train/val split of rank lists with disjoint skus."""
    skus = np.array(sorted({rl.sku_id for rl in lists}))
    perm = rng.permutation(skus)
    val = set(perm[:max(1, int(round(val_fraction * skus.size)))].tolist())
    return [rl for rl in lists if rl.sku_id not in val], [rl for rl in lists if rl.sku_id in val]


def distillation_tau(model: RerankModel, lists: list[RankList]) -> float:
    """Mean Kendall tau between reranker scores and teacher soft labels, per list."""
    taus = []
    for rl, s in zip(lists, batch_window_scores(lists, model)):
        if len(rl) >= 2:
            t = kendalltau(s, rl.labels).statistic
            taus.append(float(t) if np.isfinite(t) else 0.0)
    return float(np.mean(taus))


# --------------------------------------------------------------------- stages
def stage_gen(run: Run) -> None:
    d = run.config.datagen
    rng = run.rng.child("gen")
    run.catalog = generate_catalog(d.gen_config(), rng.child("catalog"))
    run.truth = generate_ground_truth_ctr(run.catalog, d.plant_spec(), rng.child("truth"))
    run.train_logs = simulate_logs(run.catalog, run.truth, d.train_days, d.traffic(), rng.child("logs"))
    run.eval_logs = simulate_logs(run.catalog, run.truth, d.eval_days, d.eval_traffic(),
                                  rng.child("eval"), first_day=d.train_days)
    run.metrics["gen"] = {"n_skus": len(run.catalog.skus), "n_creatives": len(run.catalog.creatives),
                          "train_impressions": len(run.train_logs), "train_ctr": run.train_logs.ctr(),
                          "eval_impressions": len(run.eval_logs), "eval_ctr": run.eval_logs.ctr()}


def stage_label(run: Run) -> None:
    aggs = aggregate_daily(run.train_logs, run.config.labeling.period)
    report = detect_ambiguous(label_samples(aggs))
    run.strict = build_strict_trainset(report.labeled, features=run.table)
    m = {"ambiguity_rate": report.rate, "n_ambiguous": int(report.creative_ids.size),
         "strict_rows": len(run.strict), "strict_positive": int(run.strict.y.sum()),
         "counts": {k: int(v) for k, v in sorted(report.labeled.counts().items())}}
    m.update(ambiguity_recovery(report.creative_ids, run.truth.drifted, well_exposed(aggs)))
    run.metrics["label"] = m


def stage_features(run: Run) -> None:
    cfg = dataclasses.replace(run.config.features, seed=run.config.seed)
    run.table = build_feature_table(run.catalog, build_schema(run.catalog, cfg))
    if run.strict is not None:
        run.strict.table = run.table
    run.metrics["features"] = {"schema_hash": run.table.schema_hash,
                               "n_fields": len(run.table.schema.fields)}


def stage_train_teacher(run: Run) -> None:
    ds = build_teacher_trainset(run.train_logs, run.catalog, run.table)
    run.teacher, m = train_teacher(ds, run.config.teacher, run.rng.child("teacher"))
    true = run.truth.mean_ctr()
    pred = run.teacher.forward(run.table.batch(np.arange(true.size)))
    run.metrics["train-teacher"] = m.as_dict() | {
        "kendall_tau_vs_true_ctr": float(kendalltau(pred, true).statistic)}


def stage_soft_labels(run: Run) -> None:
    run.soft_labels = emit_soft_labels(run.catalog, run.teacher, run.table)
    run.metrics["soft-labels"] = {"n_skus": len(run.soft_labels),
                                  "n_labels": sum(len(v) for v in run.soft_labels.values())}


def stage_search(run: Run) -> None:
    tr, va = strict_split(run.strict, run.config.strict.val_fraction, run.rng.child("split"))
    fields = fields_from_schema(run.table.schema, run.config.interact.pairs)
    run.search_arch, run.search_model, trace = one_shot_search(
        tr, va, run.config.interact, run.rng.child("search"), fields, run.table.schema_hash)
    names = [f.name for f in fields]
    pairs = [f"{names[i]}*{names[j]}" for i, j in run.search_arch.pairs]
    run.metrics["search"] = {"ops": dict(zip(pairs, run.search_arch.ops())),
                             "final_val_logloss": trace[-1].val_logloss if trace else float("nan")}
    run.tables["search"] = {"trace.csv": (["epoch", "val_logloss"] + pairs,
                                          [[t.epoch, t.val_logloss] + t.ops for t in trace])}


def stage_train_autoco(run: Run) -> None:
    cfg = run.config.interact
    tr, va = strict_split(run.strict, run.config.strict.val_fraction, run.rng.child("split"))
    fields = fields_from_schema(run.table.schema, cfg.pairs)
    run.autoco, m_auto = train_fixed_arch(tr, va, run.search_arch, cfg, run.rng.child("autoco"),
                                          fields, model=run.search_model)
    fm_arch = InteractionArch.fixed(run.search_arch.pairs, "multiply")
    run.fm, m_fm = train_fixed_arch(tr, va, fm_arch, cfg, run.rng.child("fm"), fields,
                                    schema_hash=run.table.schema_hash)
    both = {"autoco": m_auto.as_dict(), "fm-multiply": m_fm.as_dict()}
    run.metrics["train-autoco"] = both
    keys = list(both["autoco"])
    run.tables["train-autoco"] = {"stage1.csv": (["model"] + keys,
                                                 [[k] + [v[c] for c in keys] for k, v in both.items()])}


def stage_train_rerank(run: Run) -> None:
    lists = build_rank_lists(run.soft_labels, run.table)
    sec = run.config.reranker
    tr, va = rerank_split(lists, sec.val_fraction, run.rng.child("rr-split"))
    cfg = RerankConfig(**{f.name: getattr(sec, f.name) for f in dataclasses.fields(RerankConfig)})
    run.reranker, m = train_reranker(tr, va, cfg, run.rng.child("rerank"))
    run.reranker.schema_hash = run.table.schema_hash
    run.metrics["train-rerank"] = {"best_epoch": m.best_epoch, "val_ndcg5": mean_ndcg(run.reranker, va, 5),
                                   "val_kendall_tau": distillation_tau(run.reranker, va),
                                   "train_lists": len(tr), "val_lists": len(va)}
    run.tables["train-rerank"] = {"history.csv": (["epoch", "train_loss", "val_ndcg5"], [
        [h["epoch"], h["train_loss"], h["val_ndcg5"]] for h in m.epochs])}


def _regret_job(args):
    policy, ctrs, steps, seed, base = args
    return bandit.simulate(policy, ctrs, steps, RngStream(base, seed).child("bandit"), seed).regret


def stage_bandit_sim(run: Run) -> None:
    b = run.config.bandit
    ctrs = b.arm_ctrs()
    policies = [bandit.THOMPSON, bandit.Policy("epsilon", b.eps, None),
                bandit.Policy("epsilon", b.eps, b.warmup), bandit.UCB, bandit.RANDOM]
    jobs = [(p, ctrs, b.steps, s, run.config.seed) for p in policies for s in range(b.seeds)]
    regrets = parallel_map(_regret_job, jobs, run.config.workers)
    rows, summary = [], {}
    half = b.steps // 2
    for pi, p in enumerate(policies):
        block = np.stack(regrets[pi * b.seeds:(pi + 1) * b.seeds])
        for s in range(b.seeds):
            for t in range(b.csv_every, b.steps + 1, b.csv_every):
                rows.append([p.name, s, t, block[s, t - 1]])
        mean = block.mean(axis=0)
        summary[p.name] = {"final": float(mean[-1]), "first_half": float(mean[half - 1]),
                           "second_half": float(mean[-1] - mean[half - 1])}
    run.metrics["bandit-sim"] = {"arms": ctrs, "steps": b.steps, "seeds": b.seeds, "regret": summary}
    run.tables["bandit-sim"] = {"regret.csv": (["policy", "seed", "step", "regret"], rows)}


def stage1_choices(run: Run):
    """Per sku: the stage-1 top list (prefilter, then rerank) and single-pick choices."""
    e = run.config.eval
    all_ids = np.arange(len(run.catalog.creatives))
    auto_scores = run.autoco.forward(run.table.batch(all_ids))
    fm_scores = run.fm.forward(run.table.batch(all_ids))
    top, auto_pick, fm_pick, rr_pick = {}, {}, {}, {}
    pre = []
    for sku in run.catalog.skus:
        ids = np.array([c.creative_id for c in run.catalog.creatives_by_sku[sku]], dtype=np.int64)
        order = np.lexsort((ids, -auto_scores[ids]))
        auto_pick[sku] = int(ids[order[0]])
        fm_pick[sku] = int(ids[np.lexsort((ids, -fm_scores[ids]))[0]])
        keep = ids[order[:e.prefilter_k]]
        pre.append(RankList(sku, keep, run.table.flat(keep), np.zeros(keep.size)))
    for rl, s in zip(pre, batch_window_scores(pre, run.reranker)):
        ranked = rl.creative_ids[np.lexsort((rl.creative_ids, -s))].tolist()
        top[rl.sku_id] = ranked[:e.top_k]
        rr_pick[rl.sku_id] = ranked[0]
    return top, {"autoco": auto_pick, "fm-multiply": fm_pick, "autoco+rerank": rr_pick}


def build_policies(run: Run) -> list:
    """Replay policies: stage-1 baselines and stage-2 variants over the stage-1 top list."""
    top, picks = stage1_choices(run)
    soft = {sku: dict(pairs) for sku, pairs in run.soft_labels.items()}
    every = {sku: [c.creative_id for c in run.catalog.creatives_by_sku[sku]] for sku in run.catalog.skus}
    opt = {sku: max(ids, key=lambda c: (soft[sku][c], -c)) for sku, ids in top.items()}
    # informed-prior Thompson sampling stands in for a hierarchical prior
    priors = {sku: bandit.informed_priors([soft[sku][c] for c in ids], run.config.eval.hbm_strength)
              for sku, ids in top.items()}
    return [
        UniformPolicy("random", every),
        FixedChoicePolicy("fm-multiply", picks["fm-multiply"]),
        FixedChoicePolicy("autoco", picks["autoco"]),
        FixedChoicePolicy("autoco+rerank", picks["autoco+rerank"]),
        FixedChoicePolicy("autoco-opt", opt),
        BanditPolicy("autoco-ts", top, bandit.THOMPSON),
        BanditPolicy("autoco-hbm", top, bandit.THOMPSON, priors),
        UniformPolicy("auto-random", top),
    ]


def _replay_job(args):
    pol, logs, seed, base, bucket = args
    m = replay_sctr(pol, logs, None, RngStream(base, seed), bucket)
    return m.valid_impressions, m.sctr, m.curve


def stage_replay(run: Run) -> None:
    e = run.config.eval
    policies = build_policies(run)
    seeds = list(range(e.seeds))
    replay_sctr(LoggedPolicy(), run.eval_logs, run.catalog)        # consistency check only
    jobs = [(p, run.eval_logs, s, run.config.seed, e.bucket_size) for p in policies for s in seeds]
    results = parallel_map(_replay_job, jobs, run.config.workers)
    oracle = replay_sctr(LoggedPolicy(), run.eval_logs)
    table, curves, summary = [], [], {}
    for pi, p in enumerate(policies):
        res = results[pi * len(seeds):(pi + 1) * len(seeds)]
        vals = [r[1] for r in res]
        summary[p.name] = {"mean": float(np.mean(vals)), "std": float(np.std(vals)),
                           "valid": [r[0] for r in res]}
        table.append([p.name, summary[p.name]["mean"], summary[p.name]["std"],
                      float(np.mean([r[0] for r in res])), *vals])
        for s, r in zip(seeds, res):
            curves += [[p.name, s, x, y] for x, y in r[2]]
    run.metrics["replay"] = {"sctr": summary, "oracle_sctr": oracle.sctr, "log_ctr": run.eval_logs.ctr(),
                             "seeds": seeds}
    run.tables["replay"] = {
        "sctr.csv": (["policy", "mean_sctr", "std_sctr", "mean_valid"] + [f"seed{s}" for s in seeds], table),
        "curves.csv": (["policy", "seed", "exposures", "sctr"], curves),
    }


STAGE_FNS = {"gen": stage_gen, "label": stage_label, "features": stage_features,
             "train-teacher": stage_train_teacher, "soft-labels": stage_soft_labels,
             "search": stage_search, "train-autoco": stage_train_autoco,
             "train-rerank": stage_train_rerank, "bandit-sim": stage_bandit_sim,
             "replay": stage_replay}


# ------------------------------------------------------------------ on disk
def save_stage(run: Run, stage: str, root) -> Path:
    """Write a stage's artifacts, metrics, CSVs and manifest to ``root/stage``.

    Files go to a scratch directory first that replaces the old one at the end,
    so a stage directory is always either complete or absent.
    """
    d = Path(root) / stage
    tmp = d.with_name(d.name + ".partial")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    files = []
    if stage == "gen":
        persist.write_world(tmp / "world.json", run.catalog, run.truth)
        persist.write_logs(tmp / "train_logs.jsonl", run.train_logs)
        persist.write_logs(tmp / "eval_logs.jsonl", run.eval_logs)
        files += [tmp / "world.json", tmp / "train_logs.jsonl", tmp / "eval_logs.jsonl"]
    elif stage == "label":
        s = run.strict
        persist.write_jsonl(tmp / "strict.jsonl", "strict", [
            {"creative_id": c, "day": dd, "y": y}
            for c, dd, y in zip(s.creative_id.tolist(), s.day.tolist(), s.y.tolist())])
        files.append(tmp / "strict.jsonl")
    elif stage == "features":
        persist.write_json(tmp / "schema.json", run.table.schema.to_dict())
        persist.savez_stable(tmp / "features.npz", {"cat": run.table.cat, **run.table.dense})
        files += [tmp / "schema.json", tmp / "features.npz"]
    elif stage == "train-teacher":
        files += persist.save_model(tmp / "teacher", run.teacher)
    elif stage == "soft-labels":
        persist.write_jsonl(tmp / "soft_labels.jsonl", "soft-labels", [
            {"sku_id": sku, "creative_id": c, "label": y}
            for sku, pairs in sorted(run.soft_labels.items()) for c, y in pairs])
        files.append(tmp / "soft_labels.jsonl")
    elif stage == "search":
        files += persist.save_model(tmp / "supernet", run.search_model)
    elif stage == "train-autoco":
        files += persist.save_model(tmp / "autoco", run.autoco)
        files += persist.save_model(tmp / "fm_multiply", run.fm)
    elif stage == "train-rerank":
        files += persist.save_model(tmp / "reranker", run.reranker)
    for name, (header, rows) in run.tables.get(stage, {}).items():
        (tmp / name).write_text(csv_text(header, rows))
        files.append(tmp / name)
    persist.write_json(tmp / "metrics.json", jsonable(run.metrics.get(stage, {})))
    (tmp / "config.ini").write_text(to_ini(run.config))
    files += [tmp / "metrics.json", tmp / "config.ini"]
    uses_features = stage == "features" or "features" in DEPENDS[stage]
    schema = run.table.schema_hash if uses_features else ""
    persist.write_manifest(tmp / "manifest.json", stage, files, schema, config_hash(run.config),
                           {"seed": run.config.seed})
    if d.exists():
        shutil.rmtree(d)
    tmp.rename(d)
    return d


def jsonable(obj):
    """Plain-JSON copy: numpy scalars unwrapped, non-finite floats as strings."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def load_stage(run: Run, stage: str, root) -> None:
    """Populate ``run`` from a finished stage directory after verifying its manifest."""
    d = Path(root) / stage
    if not (d / "manifest.json").exists():
        raise FileNotFoundError(f"stage {stage!r} has no artifacts at {d}; run it first")
    man = persist.verify_manifest(d / "manifest.json")
    run.metrics[stage] = persist.read_json(d / "metrics.json")
    if stage == "gen":
        run.catalog, run.truth = persist.read_world(d / "world.json")
        run.train_logs = persist.read_logs(d / "train_logs.jsonl")
        run.eval_logs = persist.read_logs(d / "eval_logs.jsonl")
    elif stage == "features":
        stage_features(run)
        if run.table.schema_hash != man["schema_hash"]:
            raise IncompatibleModel(f"{d}: features were built with schema {man['schema_hash']}, "
                                    f"this config gives {run.table.schema_hash}")
    elif run.table is not None and man["schema_hash"] and man["schema_hash"] != run.table.schema_hash:
        raise IncompatibleModel(f"{d}: built for feature schema {man['schema_hash']}, "
                                f"current schema is {run.table.schema_hash}")
    if stage == "label":
        rows = persist.read_jsonl(d / "strict.jsonl", "strict")
        run.strict = Dataset(np.array([r["creative_id"] for r in rows], dtype=np.int64),
                             np.array([r["y"] for r in rows], dtype=float),
                             np.array([r["day"] for r in rows], dtype=np.int64), None, run.table)
    elif stage == "train-teacher":
        run.teacher = persist.load_model(d / "teacher", "teacher", run.table.schema_hash)
    elif stage == "soft-labels":
        out: dict[int, list] = {}
        for r in persist.read_jsonl(d / "soft_labels.jsonl", "soft-labels"):
            out.setdefault(r["sku_id"], []).append((r["creative_id"], r["label"]))
        run.soft_labels = out
    elif stage == "search":
        run.search_model = persist.load_model(d / "supernet", "autoco", run.table.schema_hash)
        run.search_arch = run.search_model.arch.copy()
    elif stage == "train-autoco":
        run.autoco = persist.load_model(d / "autoco", "autoco", run.table.schema_hash)
        run.fm = persist.load_model(d / "fm_multiply", "autoco", run.table.schema_hash)
    elif stage == "train-rerank":
        run.reranker = persist.load_model(d / "reranker", "reranker", run.table.schema_hash)


def run_stage(config: ExperimentConfig, stage: str, root=None) -> Run:
    """Run one stage from its upstream artifacts on disk and write its own."""
    root = Path(config.out if root is None else root)
    run = Run(config)
    for dep in DEPENDS[stage]:
        load_stage(run, dep, root)
    STAGE_FNS[stage](run)
    save_stage(run, stage, root)
    return run


def run_pipeline(config: ExperimentConfig, root=None, stages=STAGES) -> Run:
    """All stages in order, in memory, writing each stage's artifacts as it finishes."""
    root = Path(config.out if root is None else root)
    run = Run(config)
    trail: list[str] = []
    for st in stages:
        try:
            STAGE_FNS[st](run)
            trail.append(str(save_stage(run, st, root)))
        except Exception as exc:
            raise StageError(st, trail, exc) from exc
    return run


# ----------------------------------------------------------------- acceptance
@dataclass(frozen=True)
class Check:
    name: str
    value: object
    threshold: str
    passed: bool
    gating: bool = True       # informational checks never fail a run


def acceptance_checks(metrics: dict, config: ExperimentConfig) -> list[Check]:
    """Threshold checks a run can be judged on, from stage metrics alone.

    The ambiguity and distillation thresholds hold on data built for them
    (every judged creative with at least 10^4 impressions; strongly separated
    lists). Desk-scale pipeline data meets neither precondition, so those rows
    are reported as informational. The bandit and replay checks gate the run.
    """
    rows = []
    lab = metrics.get("label")
    if lab is not None and config.datagen.drift_fraction > 0 and lab["well_exposed"] > 0:
        f = config.datagen.drift_fraction
        rate = lab["well_exposed_rate"]
        rows.append(Check("ambiguity_rate_well_exposed", rate, f"{f:g} +- 0.05",
                          isinstance(rate, float) and abs(rate - f) <= 0.05, False))
        for k in ("precision", "recall"):
            v = lab[k]
            rows.append(Check(f"ambiguity_{k}_well_exposed", v, ">= 0.95",
                              isinstance(v, float) and v >= 0.95, False))
    rr = metrics.get("train-rerank")
    if rr is not None:
        rows.append(Check("rerank_kendall_tau", rr["val_kendall_tau"], ">= 0.6",
                          rr["val_kendall_tau"] >= 0.6, False))
        rows.append(Check("rerank_val_ndcg5", rr["val_ndcg5"], ">= 0.95", rr["val_ndcg5"] >= 0.95, False))
    bs = metrics.get("bandit-sim")
    if bs is not None:
        r = bs["regret"]
        eps = bandit.Policy("epsilon", config.bandit.eps, None).name
        th, ep, rd = r["thompson"]["final"], r[eps]["final"], r["random"]["final"]
        rows.append(Check("regret_thompson<epsilon<random", th, f"< {ep:.6g} < {rd:.6g}", th < ep < rd))
        rows.append(Check("thompson_second_half_regret", r["thompson"]["second_half"],
                          f"< {r['thompson']['first_half']:.6g}",
                          r["thompson"]["second_half"] < r["thompson"]["first_half"]))
    rp = metrics.get("replay")
    if rp is not None:
        s = {k: v["mean"] for k, v in rp["sctr"].items()}
        rows.append(Check("oracle_sctr_equals_log_ctr", rp["oracle_sctr"], f"== {fmt(rp['log_ctr'])}",
                          rp["oracle_sctr"] == rp["log_ctr"]))
        lift = relative_lift(s["autoco-ts"], s["random"])
        rows.append(Check("two_stage_lift_vs_random", lift, f">= {config.eval.min_lift:g}",
                          lift >= config.eval.min_lift))
        rows.append(Check("autoco-opt>=autoco-ts>=random", s["autoco-ts"],
                          f"<= {s['autoco-opt']:.6g} and >= {s['random']:.6g}",
                          s["autoco-opt"] >= s["autoco-ts"] >= s["random"]))
    return rows
