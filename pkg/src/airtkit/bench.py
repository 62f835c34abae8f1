"""Benchmark harness: every method on every suite sequence, scored with the box metrics."""
from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .adapter.training import latent_stack, pool, train
from .config import RunConfig, validate
from .detect import BackendConfig, detect, nms_ensemble
from .errors import AirtError, FormatError
from .imageio import write_pgm
from .metrics import evaluate
from .reducers import reduce_pct, reduce_raw, reduce_tsr
from .seqcore import read_labels, read_sequence, standardize

log = logging.getLogger(__name__)

METHODS = ("raw", "tsr", "pct", "adapter-avg", "adapter-max", "adapter-pca", "adapter-nms")

CONVENTIONS = {
    "snr_db": "20*log10(|mean_defect - mean_sound| / std_sound), population std",
    "contrast": "|m_d - m_s| / (m_d + m_s) after shifting the image by its global minimum",
    "boxes": "half-open pixel boxes [x1, x2) x [y1, y2)",
    "raw": "frame with the highest contrast against the labels (label-aware best case)",
    "pct": "EOF with the highest contrast against the labels (label-aware best case)",
    "tsr": "second log-derivative image at log-mid-time",
    "adapter-nms": "box from greedy NMS over per-latent detections; contrast/SNR of the avg-pooled image",
}


def read_manifest(path) -> list[dict]:
    """Manifest entries with paths resolved against the manifest's directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}", offset=exc.pos) from exc
    validate(doc, "manifest", str(path))
    root = path.parent
    entries = []
    for e in doc["sequences"]:
        e = dict(e)
        for key in ("sequence", "labels", "spec"):
            if key in e:
                e[key] = str(root / e[key])
        entries.append(e)
    return entries


def write_manifest(pairs, out_dir, seed: int) -> Path:
    out_dir = Path(out_dir)
    seqs = []
    for seq_path, lab_path in pairs:
        stem = Path(seq_path).stem
        entry = {"id": stem, "mode": stem.split("_", 2)[-1], "sequence": Path(seq_path).name, "labels": Path(lab_path).name}
        if (out_dir / f"{stem}.spec.json").exists():
            entry["spec"] = f"{stem}.spec.json"
        seqs.append(entry)
    doc = {"schema_version": 1, "seed": int(seed), "sequences": seqs}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def _row(seq_id, method, pooling=None):
    return {
        "sequence": seq_id,
        "method": method,
        "pooling": pooling,
        "metrics": None,
        "detection": None,
        "wall_time_s": 0.0,
        "reduce_time_s": 0.0,
        "detect_time_s": 0.0,
        "error": None,
    }


def _score(row, img, labels, backend, score_img=None):
    t0 = time.perf_counter()
    det = detect(img, backend)
    row["detect_time_s"] = time.perf_counter() - t0
    row["detection"] = det.to_dict()
    row["metrics"] = evaluate(img if score_img is None else score_img, det.box, labels).to_dict()


def bench_sequence(entry: dict, cfg: RunConfig, backend: BackendConfig):
    """All method rows for one manifest entry, plus ``{method: image}`` for the gallery."""
    seq_id = entry["id"]
    seq = read_sequence(entry["sequence"])
    labels = read_labels(entry["labels"])
    red = cfg["reducers"]
    rows, gallery = [], {}

    def classic(method, fn):
        row = _row(seq_id, method)
        try:
            t0 = time.perf_counter()
            img = fn().image
            row["reduce_time_s"] = time.perf_counter() - t0
            gallery[method] = img
            _score(row, img, labels, backend)
        except AirtError as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)

    classic("raw", lambda: reduce_raw(seq, labels))
    classic("tsr", lambda: reduce_tsr(seq, red["tsr_degree"]))
    classic("pct", lambda: reduce_pct(seq, red["pct_components"], labels))

    adapter_rows = [_row(seq_id, m, m.split("-")[1]) for m in METHODS[3:]]
    try:
        t0 = time.perf_counter()
        std = standardize(seq)
        model, history = train(std, cfg.train_config())
        stack = latent_stack(model, std)
        t_train = time.perf_counter() - t0
    except AirtError as exc:
        for row in adapter_rows:
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.extend(adapter_rows)
        return rows, gallery

    avg_img = None
    for row in adapter_rows:
        method, op = row["method"], row["pooling"]
        try:
            t0 = time.perf_counter()
            if op == "nms":
                det = nms_ensemble(stack, backend, cfg["bench"]["nms_iou"])
                row["reduce_time_s"] = t_train
                row["detect_time_s"] = time.perf_counter() - t0
                row["detection"] = det.to_dict()
                ref = avg_img if avg_img is not None else pool(stack, "avg").pixels
                row["metrics"] = evaluate(ref, det.box, labels).to_dict()
            else:
                img = pool(stack, op).pixels
                row["reduce_time_s"] = t_train + time.perf_counter() - t0
                if op == "avg":
                    avg_img = img
                gallery[method] = img
                _score(row, img, labels, backend)
            row["final_loss"] = history[-1] if history else None
            row["first_loss"] = history[0] if history else None
        except AirtError as exc:
            row["error"] = f"{type(exc).__name__}: {exc}"
    rows.extend(adapter_rows)
    for row in rows:
        row["wall_time_s"] = row["reduce_time_s"] + row["detect_time_s"]
    return rows, gallery


def _bench_worker(args):
    entry, doc, backend_kw = args
    return bench_sequence(entry, RunConfig(doc), BackendConfig(**backend_kw))


def _stats(values):
    vals = [v for v in values if v is not None and math.isfinite(v)]
    if not vals:
        return {"mean": None, "median": None}
    return {"mean": float(np.mean(vals)), "median": float(np.median(vals))}


def aggregate(rows) -> dict:
    out = {}
    for method in dict.fromkeys(r["method"] for r in rows):
        mine = [r for r in rows if r["method"] == method]
        ok = [r for r in mine if r["error"] is None]
        agg = {"n": len(mine), "n_failed": len(mine) - len(ok)}
        for key in ("contrast", "snr_db", "iou", "ncd"):
            agg[key] = _stats([r["metrics"][key] for r in ok])
        for key in ("wall_time_s", "detect_time_s"):
            agg[key] = _stats([r[key] for r in ok])
        agg["frac_iou_ge_0.5"] = float(np.mean([r["metrics"]["iou"] >= 0.5 for r in ok])) if ok else None
        out[method] = agg
    return out


def run_bench(manifest, cfg: RunConfig, out_dir, backend: BackendConfig | None = None, jobs: int | None = None) -> dict:
    """Benchmark every manifest sequence; writes ``report.json`` and a PGM gallery under ``out_dir``.

    Rows keep manifest order whatever the completion order of parallel jobs.
    """
    entries = read_manifest(manifest)
    backend = backend or cfg.backend_config()
    jobs = jobs or cfg["bench"]["jobs"]
    out_dir = Path(out_dir)
    gallery_dir = out_dir / "gallery"
    gallery_dir.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    if jobs > 1:
        backend_kw = dict(vars(backend), prompt=backend.prompt.text)
        tasks = [(e, cfg.to_dict(), backend_kw) for e in entries]
        with ProcessPoolExecutor(max_workers=min(jobs, os.cpu_count() or 1, len(entries))) as ex:
            results = list(ex.map(_bench_worker, tasks))
    else:
        results = []
        for e in entries:
            log.info("bench %s", e["id"])
            results.append(bench_sequence(e, cfg, backend))

    rows = []
    for entry, (seq_rows, gallery) in zip(entries, results):
        rows.extend(seq_rows)
        for method, img in gallery.items():
            write_pgm(img, gallery_dir / f"{entry['id']}.{method}.pgm")

    report = {
        "schema_version": 1,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "backend": backend.kind,
        "methods": list(METHODS),
        "conventions": CONVENTIONS,
        "n_sequences": len(entries),
        "n_failed": sum(r["error"] is not None for r in rows),
        "total_wall_time_s": time.perf_counter() - t0,
        "rows": rows,
        "aggregates": aggregate(rows),
    }
    validate(report, "report", "report")
    (out_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    return report
