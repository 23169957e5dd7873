"""Run report: aggregate stage metrics and CSVs of a run directory.

Never recomputes a model. Every stage directory is checked against its
manifest; absent or corrupted stages are listed and make the report
incomplete.
"""
from __future__ import annotations

import math
import shutil
from dataclasses import dataclass, field
from pathlib import Path

from . import persist
from .config import ExperimentConfig, config_hash, load_config
from .errors import IncompatibleModel
from .pipeline import STAGES, Check, acceptance_checks, csv_text, fmt


@dataclass
class Report:
    root: Path
    present: list[str] = field(default_factory=list)
    missing: dict[str, str] = field(default_factory=dict)     # stage -> reason
    checks: list[Check] = field(default_factory=list)
    summary: str = ""

    @property
    def complete(self) -> bool:
        return not self.missing

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.gating)


def _resolved_config(root: Path, stages) -> ExperimentConfig | None:
    for st in stages:
        ini = root / st / "config.ini"
        if ini.exists():
            return load_config(str(ini), "desk", env={})
    return None


def _cell(v) -> str:
    # the summary is for reading; full precision lives in the CSVs
    if isinstance(v, float) and not math.isnan(v):
        return f"{v:.4g}"
    return fmt(v)


def _md_table(header, rows) -> list[str]:
    out = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    out += ["| " + " | ".join(_cell(v) for v in r) + " |" for r in rows]
    return out


def build_report(root, config: ExperimentConfig | None = None) -> Report:
    """Read every stage under ``root`` and write ``root/report/``."""
    root = Path(root)
    rep = Report(root)
    metrics = {}
    for st in STAGES:
        man = root / st / "manifest.json"
        if not man.exists():
            rep.missing[st] = "not run"
            continue
        try:
            persist.verify_manifest(man)
        except IncompatibleModel as exc:
            rep.missing[st] = f"corrupted: {exc}"
            continue
        rep.present.append(st)
        metrics[st] = persist.read_json(root / st / "metrics.json")
    if config is None:
        config = _resolved_config(root, rep.present)
    if config is None:
        raise FileNotFoundError(f"{root}: no completed stages to report on")
    rep.checks = acceptance_checks(metrics, config)

    out = root / "report"
    tmp = out.with_name("report.partial")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    files = []
    # CSV bundle: every stage CSV, renamed <stage>__<file>.csv
    for st in rep.present:
        for f in sorted((root / st).glob("*.csv")):
            dst = tmp / f"{st}__{f.name}"
            shutil.copyfile(f, dst)
            files.append(dst)
    acc = tmp / "acceptance.csv"
    acc.write_text(csv_text(["check", "value", "threshold", "passed", "gating"],
                            [[c.name, c.value, c.threshold, c.passed, c.gating] for c in rep.checks]))
    files.append(acc)

    lines = ["# Run report", "", f"Seed: {config.seed}; config hash {config_hash(config)}.", ""]
    lines.append("## Stages")
    lines += [f"- {st}: {'present' if st in rep.present else 'ABSENT (' + rep.missing[st] + ')'}"
              for st in STAGES]
    lines.append("")
    if "gen" in metrics:
        g = metrics["gen"]
        lines += ["## Data", "", f"{g['n_skus']} skus, {g['n_creatives']} creatives; "
                  f"{g['train_impressions']} training impressions (CTR {g['train_ctr']:.4f}), "
                  f"{g['eval_impressions']} held-out impressions (CTR {g['eval_ctr']:.4f}).", ""]
    if "label" in metrics:
        m = metrics["label"]
        lines += ["## Labeling", "", f"Ambiguity rate {m['ambiguity_rate']:.4f}; "
                  f"{m['strict_rows']} strict rows ({m['strict_positive']} positive).", ""]
    if "search" in metrics:
        lines += ["## Searched operators", ""]
        lines += _md_table(["pair", "operator"], sorted(metrics["search"]["ops"].items()))
        lines.append("")
    if "train-autoco" in metrics:
        m = metrics["train-autoco"]
        lines += ["## Stage-1 models (strict validation set)", ""]
        lines += _md_table(["model", "logloss", "auc", "accuracy"],
                           [[k, v["logloss"], v["auc"], v["accuracy"]] for k, v in m.items()])
        lines.append("")
    if "train-rerank" in metrics:
        m = metrics["train-rerank"]
        lines += ["## Reranker (validation skus)", ""]
        lines += _md_table(["metric", "value"], [["NDCG@5", m["val_ndcg5"]],
                                                 ["Kendall tau vs teacher", m["val_kendall_tau"]],
                                                 ["best epoch", m["best_epoch"]]])
        lines.append("")
    if "bandit-sim" in metrics:
        m = metrics["bandit-sim"]
        lines += [f"## Bandit regret ({m['steps']} steps, {m['seeds']} seeds, arms {m['arms']})", ""]
        lines += _md_table(["policy", "final regret", "first half", "second half"],
                           [[k, v["final"], v["first_half"], v["second_half"]]
                            for k, v in m["regret"].items()])
        lines.append("")
    if "replay" in metrics:
        m = metrics["replay"]
        lines += ["## Replayed sCTR on held-out logs", "",
                  f"Logged CTR {fmt(m['log_ctr'])}; oracle replay {fmt(m['oracle_sctr'])}.", ""]
        rnd = m["sctr"]["random"]["mean"]
        lines += _md_table(["policy", "mean sCTR", "std", "lift vs random"],
                           [[k, v["mean"], v["std"], (v["mean"] - rnd) / rnd]
                            for k, v in m["sctr"].items()])
        lines.append("")
    lines += ["## Acceptance", ""]
    lines += _md_table(["check", "value", "threshold", "result"],
                       [[c.name, c.value, c.threshold,
                         ("PASS" if c.passed else "FAIL") + ("" if c.gating else " (info)")]
                        for c in rep.checks])
    lines += ["", f"Overall: {'PASS' if rep.passed and rep.complete else 'FAIL'}"
              + ("" if rep.complete else f" (absent stages: {', '.join(rep.missing)})"), ""]
    rep.summary = "\n".join(lines)
    (tmp / "summary.md").write_text(rep.summary)
    files.append(tmp / "summary.md")
    persist.write_manifest(tmp / "manifest.json", "report", files,
                           extra={"present": rep.present, "missing": sorted(rep.missing)})
    if out.exists():
        shutil.rmtree(out)
    tmp.rename(out)
    return rep
