"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the verdict lines are
printed even when output capture is on.
"""
import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ambiguity_world
from gradcheck import (autoco_alpha_case, autoco_case, max_error, random_batch, reranker_case,
                       teacher_case, FIELDS)
from dcolab import persist
from dcolab.bandit import RANDOM, THOMPSON, ArmState, Policy, mean_regret, select_ucb
from dcolab.cli import main
from dcolab.datagen import (OPERATORS, GenConfig, PairPlant, PlantSpec, TrafficSpec,
                            generate_catalog, generate_ground_truth_ctr, simulate_logs)
from dcolab.features import FeatureConfig, build_feature_table, build_schema
from dcolab.interact import AutocoModel, InteractConfig, InteractionArch, field_pairs, fm_logits
from dcolab.labeling import (aggregate_daily, ambiguity_recovery, build_teacher_trainset,
                             detect_ambiguous, label_samples, well_exposed)
from dcolab.numerics import RngStream
from dcolab.pipeline import STAGES, distillation_tau, rerank_split
from dcolab.recovery import operator_recovery_task, recovery_config, run_recovery
from dcolab.report import build_report
from dcolab.reranker import (RerankConfig, attention, build_rank_lists, context_lists,
                             listwise_loss, mean_ndcg, ndcg_at_k, train_reranker)
from dcolab.teacher import TeacherConfig, emit_soft_labels, train_teacher

SMOKE = str(Path(__file__).resolve().parents[1] / "configs" / "smoke.ini")


@pytest.fixture
def verdict(capsys):
    def emit(n: int, name: str, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'}  {name}: {detail}")
        assert ok, detail
    return emit


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    runs = []
    for name in ("a", "b"):
        out = tmp_path_factory.mktemp(f"run_{name}")
        runs.append((out, main(["pipeline", "--config", SMOKE, "--out", str(out)])))
    return runs


def test_1_gradient_correctness(verdict):
    t0 = time.perf_counter()
    worst = {}
    cases = {f"autoco/{op}": (lambda s, op=op: autoco_case(op, s, "tanh" if s % 2 else "identity"))
             for op in OPERATORS}
    cases["autoco/alpha"] = autoco_alpha_case
    cases["teacher"] = teacher_case
    for kind in ("kl", "ordinal"):
        cases[f"rerank/{kind}"] = lambda s, kind=kind: reranker_case(kind, s, "transformer",
                                                                     0.3 if s % 2 else 0.0)
    for name, build in cases.items():
        worst[name] = max(max_error(*build(s), RngStream(s, 99), max_coords=60) for s in range(20))
    dt = time.perf_counter() - t0
    err = max(worst.values())
    verdict(1, "gradient checks", err < 1e-4 and dt < 120,
            f"{len(cases)} models x 20 points, max rel err {err:.2e}, {dt:.0f}s")


def test_2_planted_operator_recovery(verdict):
    t0 = time.perf_counter()
    hits = {}
    for op in ("plus", "multiply", "max", "min"):
        hits[op] = 0
        for s in range(10):
            task = operator_recovery_task([("template", "bg_color", op)], seed=s)
            sel, _ = run_recovery(task, recovery_config(), s)
            hits[op] += sel[(0, 1)] == op
    dt = time.perf_counter() - t0
    verdict(2, "planted operator recovery", min(hits.values()) >= 8 and dt < 600,
            f"hits/10 {hits}, {dt:.0f}s")


def test_3_ambiguity_replication(verdict):
    cat, gt, logs = ambiguity_world(0, 0.46)
    aggs = aggregate_daily(logs)
    rep = detect_ambiguous(label_samples(aggs))
    rec = ambiguity_recovery(rep.creative_ids, gt.drifted, well_exposed(aggs))
    ok = abs(rep.rate - 0.46) <= 0.05 and rec["precision"] >= 0.95 and rec["recall"] >= 0.95
    verdict(3, "ambiguity replication", ok,
            f"rate {rep.rate:.3f}, precision {rec['precision']:.3f}, recall {rec['recall']:.3f}")


def test_4a_distillation_fidelity(verdict):
    r = RngStream(0)
    cat = generate_catalog(GenConfig(n_skus=400), r.child("c"))
    plants = [PairPlant("template_series", "bg_color", "multiply", 1.5),
              PairPlant("template", "size", "max", 1.5)]
    gt = generate_ground_truth_ctr(cat, PlantSpec(plants, 0.02, 7, 0.0, 1.0), r.child("g"))
    logs = simulate_logs(cat, gt, 7, TrafficSpec(250_000, 1.5), r.child("l"))
    table = build_feature_table(cat, build_schema(cat, FeatureConfig()))
    teacher, _ = train_teacher(build_teacher_trainset(logs, cat, table), TeacherConfig(),
                               RngStream(1))
    lists = build_rank_lists(emit_soft_labels(cat, teacher, table), table)
    tr, va = rerank_split(lists, 0.2, RngStream(2))
    cfg = RerankConfig(label_scale="zscore", epochs=100, batch_items=40, lr=3e-3, dropout=0.1)
    model, _ = train_reranker(tr, va, cfg, RngStream(3))
    ndcg, tau = mean_ndcg(model, va, 5), distillation_tau(model, va)
    verdict(4, "distillation fidelity", tau >= 0.6 and ndcg >= 0.95,
            f"val NDCG@5 {ndcg:.3f}, Kendall tau {tau:.3f} on {len(va)} held-out skus")


def test_4b_transformer_beats_mlp(verdict):
    rows = []
    for s in range(5):
        r = RngStream(s)
        tr = context_lists(300, 5, 4, r.child("tr"))
        va = context_lists(200, 5, 4, r.child("va"))
        for rl in va:
            rl.sku_id += 10**6
        row = []
        for arch in ("transformer", "mlp"):
            cfg = RerankConfig(arch=arch, label_scale="zscore", epochs=30, batch_items=40,
                               lr=3e-3, dropout=0.1)
            model, _ = train_reranker(tr, va, cfg, r.child("train"))
            row.append(mean_ndcg(model, va, 5))
        rows.append(row)
    ok = all(t >= m for t, m in rows)
    verdict(4, "transformer >= mlp", ok,
            "NDCG@5 (transformer, mlp) per seed " + ", ".join(f"({t:.3f}, {m:.3f})" for t, m in rows))


def test_5_bandit_regret_ordering(verdict):
    t0 = time.perf_counter()
    ctrs, T, seeds = [0.05, 0.04, 0.03, 0.02, 0.01], 50_000, range(20)
    ts = mean_regret(THOMPSON, ctrs, T, seeds)
    eps = mean_regret(Policy("epsilon", 0.1, None), ctrs, T, seeds)
    rnd = mean_regret(RANDOM, ctrs, T, seeds)
    half = ts[T // 2 - 1]
    first, second = half, ts[-1] - half
    dt = time.perf_counter() - t0
    ok = ts[-1] < eps[-1] < rnd[-1] and second < first and dt < 120
    verdict(5, "bandit regret ordering", ok,
            f"thompson {ts[-1]:.1f} < eps {eps[-1]:.1f} < random {rnd[-1]:.1f}; "
            f"thompson halves {first:.1f} / {second:.1f}; {dt:.0f}s")


def test_6_replay_soundness(pipeline_runs, verdict):
    out, code = pipeline_runs[0]
    rep = build_report(out)
    checks = {c.name: c for c in rep.checks}
    names = ["oracle_sctr_equals_log_ctr", "two_stage_lift_vs_random", "autoco-opt>=autoco-ts>=random"]
    ok = code == 0 and rep.complete and all(checks[n].passed for n in names)
    verdict(6, "sCTR replay soundness", ok,
            "; ".join(f"{n} = {checks[n].value}" for n in names))


def test_7_determinism(pipeline_runs, verdict):
    (a, ca), (b, cb) = pipeline_runs
    files = sorted(p.relative_to(a) for p in a.rglob("*.csv"))
    same = [(a / f).read_bytes() == (b / f).read_bytes() for f in files]
    same_metrics = all((a / st / "metrics.json").read_bytes() == (b / st / "metrics.json").read_bytes()
                       for st in STAGES)
    ok = ca == cb == 0 and len(files) > 0 and all(same) and same_metrics
    verdict(7, "determinism", ok, f"{sum(same)}/{len(files)} CSVs byte-identical across two runs")


def test_8_equivalence_oracles(verdict):
    errs = {}
    # FM reduction: identity projections, zero biases, unit head
    r = RngStream(5)
    model = AutocoModel.init(FIELDS, InteractionArch.fixed(field_pairs(FIELDS), "multiply"),
                             InteractConfig(d_emb=3, d_lat=3, monotone=False), r.child("init"))
    for k in list(model.params):
        shape = model.params[k].shape
        model.params[k] = (np.eye(3) if k.startswith("P") else np.zeros(3) if k.startswith("c")
                           else r.child(k).normal(size=shape))
    model.params["head"] = np.ones(3)
    batch = random_batch(r.child("batch"), n=50)
    errs["fm"] = float(np.max(np.abs(model.logits(batch) - fm_logits(batch, FIELDS, model.params))))

    Q, K, V = np.eye(2), np.array([[1.0, 0.0], [1.0, 1.0]]), np.array([[1.0, 2.0], [3.0, 4.0]])
    e = math.exp(1 / math.sqrt(2))
    want = np.array([[2.0, 3.0], [(1 + 3 * e) / (1 + e), (2 + 4 * e) / (1 + e)]])
    errs["attention"] = float(np.max(np.abs(attention(Q, K, V) - want)))

    p = np.exp([0.3, 0.2, 0.1]) / np.exp([0.3, 0.2, 0.1]).sum()
    q = np.exp([1.0, 0.0, -1.0]) / np.exp([1.0, 0.0, -1.0]).sum()
    errs["listwise"] = abs(listwise_loss([1.0, 0.0, -1.0], [0.3, 0.2, 0.1]) - float(p @ np.log(p / q)))

    arms = [ArmState(0, 10, 2), ArmState(1, 5, 1), ArmState(2, 20, 6)]
    vals = [0.2 + math.sqrt(2 * math.log(35) / 10), 0.2 + math.sqrt(2 * math.log(35) / 5),
            0.3 + math.sqrt(2 * math.log(35) / 20)]
    errs["ucb"] = 0.0 if select_ucb(arms, 35) == int(np.argmax(vals)) else 1.0

    dcg = 0.1 + 0.3 / math.log2(3) + 0.2 / 2
    idcg = 0.3 + 0.2 / math.log2(3) + 0.1 / 2
    errs["ndcg"] = abs(ndcg_at_k([0.1, 0.3, 0.2], 3) - dcg / idcg)

    ok = errs["fm"] <= 1e-12 and all(v <= 1e-9 for k, v in errs.items() if k != "fm")
    verdict(8, "equivalence oracles", ok, ", ".join(f"{k} {v:.1e}" for k, v in errs.items()))
