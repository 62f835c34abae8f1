"""Command-line entry point: ``airtkit synth | reduce | detect | eval | bench``.

Exit codes: 0 success, 1 other failure (including a benchmark with too many
failed rows), 2 format/input error, 3 numeric error, 4 transport or protocol
error. ``AIRT_ENDPOINT`` in the environment overrides ``--endpoint``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .adapter.model import save_checkpoint
from .adapter.training import POOLINGS, latent_stack, pool, train
from .bench import run_bench, write_manifest
from .config import RunConfig
from .detect import Detection, detect, nms_ensemble
from .errors import AirtError, FormatError
from .heatsim import SlabSpec, make_benchmark_suite, write_suite
from .imageio import read_aimg, read_pgm, write_aimg, write_pgm
from .metrics import evaluate
from .reducers import reduce_pct, reduce_raw, reduce_tsr
from .seqcore import BBox, read_labels, read_sequence, standardize

log = logging.getLogger("airtkit")

REDUCE_METHODS = ("raw", "tsr", "pct", "adapter")


def _config(args) -> RunConfig:
    path = getattr(args, "scenario", None) or args.config
    cfg = RunConfig.load(path) if path else RunConfig()
    return cfg.with_seed(args.seed)


def _endpoint(args):
    return os.environ.get("AIRT_ENDPOINT") or args.endpoint


def _dump(obj, out_path=None):
    text = json.dumps(obj, indent=2)
    if out_path is not None:
        Path(out_path).write_text(text + "\n")
    print(text)


def read_image(path) -> np.ndarray:
    """Load an image, preferring a full-precision ``.aimg`` sidecar next to a ``.pgm``."""
    path = Path(path)
    if path.suffix == ".aimg":
        return read_aimg(path).astype(np.float64)
    sidecar = path.with_suffix(".aimg")
    if sidecar.exists():
        return read_aimg(sidecar).astype(np.float64)
    return read_pgm(path).astype(np.float64)


def _labels_for(seq_path: Path, explicit):
    if explicit:
        return read_labels(explicit)
    guess = seq_path.with_suffix(".labels.json")
    return read_labels(guess) if guess.exists() else None


def _export(img, out_dir: Path, stem: str, provenance: dict):
    write_pgm(img, out_dir / f"{stem}.pgm")
    write_aimg(img, out_dir / f"{stem}.aimg")
    (out_dir / f"{stem}.json").write_text(json.dumps(provenance, indent=2, default=str) + "\n")
    return out_dir / f"{stem}.pgm"


def cmd_synth(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    suite = cfg["suite"]
    if "specs" in suite:
        specs = []
        for i, d in enumerate(suite["specs"]):
            d = dict(d)
            d.setdefault("seed", int(np.random.default_rng([cfg.seed, i]).integers(0, 2**63 - 1)))
            specs.append(SlabSpec.from_dict(d))
        pairs = write_suite(specs, out)
    else:
        pairs = make_benchmark_suite(suite["n_sequences"], cfg.seed, out, suite["base"])
    manifest = write_manifest(pairs, out, cfg.seed)
    print(manifest)
    return 0


def cmd_reduce(args) -> int:
    cfg = _config(args)
    seq_path = Path(args.sequence)
    seq = read_sequence(seq_path)
    labels = _labels_for(seq_path, args.labels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base = seq_path.name.removesuffix(".airt")
    prov = {"sequence": str(seq_path), "method": args.method, "seed": cfg.seed}
    red = cfg["reducers"]

    if args.method == "adapter":
        std = standardize(seq)
        model, history = train(std, cfg.train_config())
        stack = latent_stack(model, std)
        img = pool(stack, args.pooling)
        prov.update(pooling=args.pooling, loss_history=history, model=model.provenance)
        save_checkpoint(model, out / f"{base}.adapter.avlm")
        latent_dir = out / f"{base}.adapter.latents"
        latent_dir.mkdir(exist_ok=True)
        for i, im in enumerate(stack.images):
            write_aimg(im, latent_dir / f"latent_{i:02d}.aimg")
        path = _export(img.pixels, out, f"{base}.adapter-{args.pooling}", prov)
    else:
        if args.method == "raw":
            if labels is None:
                raise FormatError("raw reduction needs labels (--labels or a sibling .labels.json)")
            res = reduce_raw(seq, labels)
        elif args.method == "tsr":
            res = reduce_tsr(seq, red["tsr_degree"])
        else:
            res = reduce_pct(seq, red["pct_components"], labels)
        prov.update(selected=res.selected, params=res.params, n_candidates=len(res.images))
        path = _export(res.image, out, f"{base}.{args.method}", prov)
    print(path)
    return 0


def cmd_detect(args) -> int:
    cfg = _config(args)
    backend = cfg.backend_config(args.backend, _endpoint(args))
    paths = [Path(p) for p in args.images]
    if len(paths) == 1 and paths[0].is_dir():
        paths = sorted(paths[0].glob("*.aimg"))
        if not paths:
            raise FormatError(f"{args.images[0]}: no .aimg images found")
    images = [read_image(p) for p in paths]
    if args.nms:
        if len({im.shape for im in images}) != 1:
            raise FormatError("NMS inputs must share one shape")
        result = nms_ensemble(np.stack(images), backend, cfg["bench"]["nms_iou"]).to_dict()
    elif len(images) == 1:
        result = detect(images[0], backend).to_dict()
    else:
        result = [detect(im, backend).to_dict() for im in images]
    out = None
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        out = Path(args.out) / "detection.json"
    _dump(result, out)
    return 0


def _read_box(path) -> BBox:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}", offset=exc.pos) from exc
    if isinstance(doc, list):
        return BBox.from_seq(doc)
    if isinstance(doc, dict) and "box" in doc:
        return Detection.from_dict(doc).box
    if isinstance(doc, dict) and "bbox" in doc:
        return BBox.from_seq(doc["bbox"])
    raise FormatError(f"{path}: expected a detection with 'box' or 'bbox', or a 4-element list")


def cmd_eval(args) -> int:
    img = read_image(args.image)
    bundle = evaluate(img, _read_box(args.pred), read_labels(args.labels))
    out = None
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        out = Path(args.out) / "metrics.json"
    _dump(bundle.to_dict(), out)
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args)
    backend = cfg.backend_config(args.backend, _endpoint(args))
    report = run_bench(args.manifest, cfg, args.out, backend, args.jobs)
    summary = {
        m: {k: a[k]["mean"] if isinstance(a[k], dict) else a[k] for k in ("snr_db", "contrast", "iou", "ncd", "n_failed")}
        for m, a in report["aggregates"].items()
    }
    print(json.dumps(summary, indent=2))
    print(Path(args.out) / "report.json")
    limit = cfg["bench"]["max_failure_fraction"]
    if report["n_failed"] > limit * len(report["rows"]):
        print(f"error: {report['n_failed']} of {len(report['rows'])} rows failed", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="RunConfig JSON file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("-v", "--verbose", action="store_true")

    backend = argparse.ArgumentParser(add_help=False)
    backend.add_argument("--backend", choices=("mock", "http"))
    backend.add_argument("--endpoint", help="detection endpoint URL (AIRT_ENDPOINT wins)")

    ap = argparse.ArgumentParser(prog="airtkit", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("synth", parents=[common], help="simulate a labelled benchmark suite")
    p.add_argument("scenario", nargs="?", help="RunConfig/scenario JSON (same as --config)")
    p.add_argument("--out", default="suite")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("reduce", parents=[common], help="reduce one sequence to a single image")
    p.add_argument("sequence")
    p.add_argument("--method", choices=REDUCE_METHODS, default="adapter")
    p.add_argument("--pooling", choices=POOLINGS, default="avg")
    p.add_argument("--labels", help="labels JSON (default: sibling .labels.json)")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("detect", parents=[common, backend], help="localise the defect in image(s)")
    p.add_argument("images", nargs="+", help=".aimg/.pgm files, or a directory of latent .aimg files")
    p.add_argument("--nms", action="store_true", help="fuse detections over all inputs with NMS")
    p.add_argument("--out")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", parents=[common], help="score a predicted box on an image")
    p.add_argument("image")
    p.add_argument("pred", help="detection JSON")
    p.add_argument("labels")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", parents=[common, backend], help="benchmark all methods on a suite")
    p.add_argument("manifest")
    p.add_argument("--out", default="bench_out")
    p.add_argument("--jobs", type=int, help="sequences processed in parallel")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except AirtError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FormatError.exit_code


if __name__ == "__main__":
    sys.exit(main())
