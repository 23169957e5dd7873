"""On-disk artifact formats.

* line-delimited JSON: first line is a header ``{"format": kind, "version": n}``;
* models: ``<name>.npz`` with every parameter tensor plus ``<name>.json`` with
  kind, version, schema hash and the model's configuration;
* structured documents (catalog + ground truth): one JSON file with a version;
* manifests: JSON with artifact kind, schema hash, config hash, sha256 of
  every file and a version. Readers verify hashes before use.

Floats are written with ``repr`` so a reloaded artifact is bit-identical.
"""
from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import os
import zipfile
from pathlib import Path

import numpy as np

from .datagen import (Catalog, Creative, CreativeElements, GroundTruthCtr, ImpressionLog, PairPlant)
from .errors import IncompatibleModel, InvalidArgument
from .interact import AutocoModel, FieldSpec, InteractConfig, InteractionArch
from .reranker import RerankConfig, RerankModel
from .teacher import TeacherConfig, TeacherModel

FORMAT_VERSION = 1


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_json(path, obj) -> None:
    _write_text(path, json.dumps(obj, indent=1, sort_keys=True) + "\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


# ------------------------------------------------------------------- JSONL
def write_jsonl(path, kind: str, rows, version: int = FORMAT_VERSION) -> None:
    lines = [json.dumps({"format": kind, "version": version})]
    lines += [json.dumps(r, sort_keys=True) for r in rows]
    _write_text(path, "\n".join(lines) + "\n")


def read_jsonl(path, kind: str):
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("format") != kind:
            raise IncompatibleModel(f"{path}: expected format {kind!r}, got {header.get('format')!r}")
        if header.get("version") != FORMAT_VERSION:
            raise IncompatibleModel(f"{path}: unsupported version {header.get('version')}")
        return [json.loads(line) for line in fh if line.strip()]


def write_logs(path, log: ImpressionLog) -> None:
    lines = [json.dumps({"format": "impressions", "version": FORMAT_VERSION})]
    lines += [f'{{"clicked": {"true" if k else "false"}, "creative_id": {c}, "day": {d}, "sku_id": {s}}}'
              for d, s, c, k in zip(log.day.tolist(), log.sku_id.tolist(),
                                    log.creative_id.tolist(), log.clicked.tolist())]
    _write_text(path, "\n".join(lines) + "\n")


def read_logs(path) -> ImpressionLog:
    rows = read_jsonl(path, "impressions")
    if not rows:
        return ImpressionLog.empty()
    return ImpressionLog(np.array([r["day"] for r in rows], dtype=np.int32),
                         np.array([r["sku_id"] for r in rows], dtype=np.int32),
                         np.array([r["creative_id"] for r in rows], dtype=np.int32),
                         np.array([r["clicked"] for r in rows], dtype=bool))


# ------------------------------------------------------- catalog and truth
def catalog_to_dict(catalog: Catalog) -> dict:
    return {
        "skus": catalog.skus,
        "creatives": [dataclasses.asdict(c.elements) | {"creative_id": c.creative_id}
                      for c in catalog.creatives],
        "sku_group": sorted(catalog.sku_group.items()),
        "sku_color": sorted(catalog.sku_color.items()),
        "group_series": sorted(catalog.group_series.items()),
        "series_templates": sorted(catalog.series_templates.items()),
        "vocab_sizes": catalog.vocab_sizes,
        "latents": {k: v.tolist() for k, v in sorted(catalog.latents.items())},
    }


def catalog_from_dict(d: dict) -> Catalog:
    creatives = []
    for row in d["creatives"]:
        row = dict(row)
        cid = row.pop("creative_id")
        row["copy_tokens"] = tuple(row["copy_tokens"])
        creatives.append(Creative(cid, CreativeElements(**row)))
    by_sku: dict[int, list[Creative]] = {s: [] for s in d["skus"]}
    for c in creatives:
        by_sku[c.sku_id].append(c)
    return Catalog(list(d["skus"]), creatives, by_sku, dict(map(tuple, d["sku_group"])),
                   dict(map(tuple, d["sku_color"])),
                   {k: list(v) for k, v in d["group_series"]},
                   {k: list(v) for k, v in d["series_templates"]}, dict(d["vocab_sizes"]),
                   {k: np.array(v, dtype=float) for k, v in d["latents"].items()})


def truth_to_dict(gt: GroundTruthCtr) -> dict:
    return {
        "base_rate": gt.base_rate,
        "pairs": [dataclasses.asdict(p) for p in gt.pairs],
        "readouts": [w.tolist() for w in gt.readouts],
        "pair_factor": gt.pair_factor.tolist(),
        "day_drift": gt.day_drift.tolist(),
        "drifted": gt.drifted.tolist(),
        "clamp": None if gt.clamp is None else list(gt.clamp),
    }


def truth_from_dict(d: dict) -> GroundTruthCtr:
    return GroundTruthCtr(d["base_rate"], [PairPlant(**p) for p in d["pairs"]],
                          [np.array(w) for w in d["readouts"]], np.array(d["pair_factor"]),
                          np.array(d["day_drift"]), np.array(d["drifted"], dtype=np.int64),
                          None if d["clamp"] is None else tuple(d["clamp"]))


def write_world(path, catalog: Catalog, gt: GroundTruthCtr) -> None:
    write_json(path, {"format": "world", "version": FORMAT_VERSION,
                      "catalog": catalog_to_dict(catalog), "truth": truth_to_dict(gt)})


def read_world(path) -> tuple[Catalog, GroundTruthCtr]:
    d = read_json(path)
    if d.get("format") != "world" or d.get("version") != FORMAT_VERSION:
        raise IncompatibleModel(f"{path}: not a version-{FORMAT_VERSION} world document")
    return catalog_from_dict(d["catalog"]), truth_from_dict(d["truth"])


# ------------------------------------------------------------------ models
def _config_dict(cfg) -> dict:
    return {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)}


def save_model(path_stem, model) -> list[Path]:
    """Write ``<stem>.npz`` and ``<stem>.json``; returns both paths."""
    stem = Path(path_stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(model, AutocoModel):
        meta = {"kind": "autoco", "fields": [dataclasses.asdict(f) for f in model.fields],
                "pairs": [list(p) for p in model.arch.pairs], "alpha": model.arch.alpha.tolist(),
                "ops": model.arch.ops()}
    elif isinstance(model, TeacherModel):
        meta = {"kind": "teacher", "fields": [dataclasses.asdict(f) for f in model.fields]}
    elif isinstance(model, RerankModel):
        meta = {"kind": "reranker", "n_features": model.n_features}
    else:
        raise InvalidArgument(f"cannot persist {type(model).__name__}")
    meta.update(version=FORMAT_VERSION, schema_hash=model.schema_hash, config=_config_dict(model.config))
    npz = stem.with_suffix(".npz")
    savez_stable(npz, model.params)
    js = stem.with_suffix(".json")
    write_json(js, meta)
    return [npz, js]


def savez_stable(path, arrays: dict) -> None:
    """``np.savez`` layout with sorted members and a fixed timestamp (byte-stable)."""
    tmp = Path(str(path) + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        for k in sorted(arrays):
            info = zipfile.ZipInfo(k + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[k]), allow_pickle=False)
            zf.writestr(info, buf.getvalue())
    os.replace(tmp, path)


def load_model(path_stem, expect_kind: str | None = None, schema_hash: str | None = None):
    stem = Path(path_stem)
    meta = read_json(stem.with_suffix(".json"))
    if meta.get("version") != FORMAT_VERSION:
        raise IncompatibleModel(f"{stem}: unsupported model version {meta.get('version')}")
    kind = meta["kind"]
    if expect_kind is not None and kind != expect_kind:
        raise IncompatibleModel(f"{stem}: expected a {expect_kind} model, found {kind}")
    if schema_hash is not None and meta["schema_hash"] and meta["schema_hash"] != schema_hash:
        raise IncompatibleModel(f"{stem}: schema {meta['schema_hash']} != features {schema_hash}")
    with np.load(stem.with_suffix(".npz")) as z:
        params = {k: z[k].copy() for k in z.files}
    cfg = meta["config"]
    if kind == "autoco":
        fields = [FieldSpec(**f) for f in meta["fields"]]
        arch = InteractionArch([tuple(p) for p in meta["pairs"]], np.array(meta["alpha"], dtype=float))
        return AutocoModel(fields, arch, params, InteractConfig(**cfg), meta["schema_hash"])
    if kind == "teacher":
        fields = [FieldSpec(**f) for f in meta["fields"]]
        return TeacherModel(fields, params, _build(TeacherConfig, cfg), meta["schema_hash"])
    if kind == "reranker":
        return RerankModel(params, _build(RerankConfig, cfg), meta["n_features"], meta["schema_hash"])
    raise IncompatibleModel(f"{stem}: unknown model kind {kind!r}")


def _build(cls, cfg: dict):
    names = {f.name for f in dataclasses.fields(cls)}
    return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in cfg.items() if k in names})


# --------------------------------------------------------------- manifests
def write_manifest(path, kind: str, files, schema_hash: str = "", config_hash: str = "",
                   extra: dict | None = None) -> dict:
    root = Path(path).parent
    entries = {str(Path(f).relative_to(root)): sha256_file(f) for f in sorted(map(str, files))}
    content = hashlib.sha256(json.dumps(entries, sort_keys=True).encode()).hexdigest()
    man = {"kind": kind, "version": FORMAT_VERSION, "schema_hash": schema_hash,
           "config_hash": config_hash, "content_hash": content, "files": entries}
    if extra:
        man["extra"] = extra
    write_json(path, man)
    return man


def verify_manifest(path) -> dict:
    """Re-hash every listed file; raises IncompatibleModel on any mismatch."""
    man = read_json(path)
    if man.get("version") != FORMAT_VERSION:
        raise IncompatibleModel(f"{path}: unsupported manifest version")
    root = Path(path).parent
    for rel, digest in man["files"].items():
        f = root / rel
        if not f.exists():
            raise IncompatibleModel(f"{path}: missing artifact {f}")
        if sha256_file(f) != digest:
            raise IncompatibleModel(f"{path}: hash mismatch for {f}")
    return man
