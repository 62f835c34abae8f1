"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (shown in the terminal summary) before
asserting. The benchmark-based criteria (3 to 6, 9) share one run of the
default 25-sequence suite with the default configuration.

Criteria 3 and 4 are not met by this implementation at desk scale. Their
tests assert the full thresholds and are marked strict xfail, so the summary
line reads FAIL and an unexpected pass turns the run red.
"""
import os
import time

import numpy as np
import pytest

from airtkit import BBox, InspectionSequence, read_sequence, write_sequence
from airtkit.adapter.layers import (
    Conv1d,
    ConvTranspose1d,
    LeakyReLU,
    Linear,
    Reshape,
    SelfAttention,
    SqueezeExcite,
    TemporalMean,
)
from airtkit.adapter.model import AdapterModel, ArchSpec, load_checkpoint, save_checkpoint
from airtkit.adapter.optim import Adam
from airtkit.bench import run_bench, write_manifest
from airtkit.config import RunConfig
from airtkit.detect import BackendConfig, DEFAULT_PROMPT, detect
from airtkit.errors import NumericError
from airtkit.heatsim import MODES, make_benchmark_suite, run_field, simulate, stability_bound
from airtkit.imageio import read_aimg, write_aimg
from airtkit.metrics import contrast, iou, ncd, snr_db
from airtkit.stub_server import StubServer

from . import oracles
from .conftest import ACCEPTANCE, small_spec

BENCH_BUDGET_S = 20 * 60


def record(cid, checks):
    """``checks`` maps a short label to ``(ok, detail)``; records one line and asserts."""
    ok = all(c for c, _ in checks.values())
    detail = "; ".join(f"{k}: {d}{'' if c else ' [x]'}" for k, (c, d) in checks.items())
    ACCEPTANCE.append((cid, ok, detail))
    print(f"criterion {cid}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def _close(a, b, rel=1e-9):
    if a == b:
        return True
    return abs(a - b) <= rel * abs(b) if b != 0 else abs(a) <= 1e-12


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    cfg = RunConfig()
    pairs = make_benchmark_suite(cfg["suite"]["n_sequences"], cfg.seed, root / "suite")
    manifest = write_manifest(pairs, root / "suite", cfg.seed)
    jobs = os.cpu_count() or 1
    t0 = time.perf_counter()
    report = run_bench(manifest, cfg, root / "out", jobs=jobs)
    report["_elapsed_s"] = time.perf_counter() - t0
    report["_jobs"] = jobs
    return report


def _per_sequence(report, method, key):
    return {r["sequence"]: r["metrics"][key] for r in report["rows"] if r["method"] == method and r["error"] is None}


def _mean(report, method, key):
    return report["aggregates"][method][key]["mean"]


def test_criterion_01_metric_oracle_equivalence():
    rng = np.random.default_rng(2024)
    worst = 0.0
    bad = 0
    t0 = time.perf_counter()
    for _ in range(1000):
        h, w = rng.integers(8, 33, 2)
        img = rng.normal(size=(h, w)) * rng.uniform(0.1, 10) + rng.uniform(-5, 5)
        d = BBox(rng.integers(0, w // 2), rng.integers(0, h // 2), rng.integers(w // 2 + 1, w + 1), rng.integers(h // 2 + 1, h + 1))
        s = BBox(rng.integers(0, w // 2), rng.integers(0, h // 2), rng.integers(w // 2 + 1, w + 1), rng.integers(h // 2 + 1, h + 1))
        a, b = (BBox(x1, y1, x1 + rng.integers(1, 12), y1 + rng.integers(1, 12)) for x1, y1 in rng.integers(0, 20, (2, 2)))
        pairs = [
            (contrast(img, d, s), oracles.contrast(img, d.as_list(), s.as_list())),
            (snr_db(img, d, s), oracles.snr_db(img, d.as_list(), s.as_list())),
            (iou(a, b), oracles.iou_cells(a.as_list(), b.as_list())),
            (ncd(a, b), oracles.ncd(a.as_list(), b.as_list())),
        ]
        for got, ref in pairs:
            bad += not _close(got, ref)
            if ref != 0 and np.isfinite(ref):
                worst = max(worst, abs(got - ref) / abs(ref))
    elapsed = time.perf_counter() - t0
    record(1, {
        "agreement": (bad == 0, f"{bad} mismatches, worst rel err {worst:.1e}"),
        "runtime": (elapsed < 10, f"{elapsed:.2f} s"),
    })


def test_criterion_02_hand_verified_points():
    v_iou = iou(BBox(0, 0, 10, 10), BBox(5, 5, 15, 15))
    v_ncd = ncd(BBox(1, 1, 11, 11), BBox(0, 0, 10, 10))
    img = np.zeros((4, 8))
    img[:, :4] = 10.0
    img[:, 4:] = np.tile([1.0, -1.0], (4, 2))  # sound region: mean 0, population std 1
    v_snr = snr_db(img, BBox(0, 0, 4, 4), BBox(4, 0, 8, 4))
    record(2, {
        "iou": (abs(v_iou - 25 / 175) <= 1e-12, f"{v_iou!r}"),
        "ncd": (abs(v_ncd - 0.1) <= 1e-12, f"{v_ncd!r}"),
        "snr": (v_snr == 20.0, f"{v_snr!r}"),
    })


@pytest.mark.slow
@pytest.mark.xfail(
    strict=True,
    reason="adapter-avg trails PCT by ~14 dB mean SNR on the synthetic suite; even label-free EOF 1 beats it",
)
def test_criterion_03_adapter_signal_gain(bench):
    avg, raw = _mean(bench, "adapter-avg", "snr_db"), _mean(bench, "raw", "snr_db")
    tsr, pct = _mean(bench, "tsr", "snr_db"), _mean(bench, "pct", "snr_db")
    t = bench["_elapsed_s"]
    record(3, {
        "avg-raw": (avg - raw >= 6, f"{avg:.2f} - {raw:.2f} = {avg - raw:+.2f} dB"),
        "avg-tsr": (avg - tsr >= 2, f"{avg - tsr:+.2f} dB"),
        "avg-pct": (avg - pct >= 2, f"{avg - pct:+.2f} dB"),
        "runtime": (t < BENCH_BUDGET_S, f"{t / 60:.1f} min on {bench['_jobs']} core(s)"),
    })


@pytest.mark.slow
@pytest.mark.xfail(
    strict=True,
    reason="latent channels are strongly correlated, so avg vs max SNR is near a coin flip (52% of sequences)",
)
def test_criterion_04_pooling_ablation(bench):
    avg, mx = _per_sequence(bench, "adapter-avg", "snr_db"), _per_sequence(bench, "adapter-max", "snr_db")
    common = sorted(set(avg) & set(mx))
    frac = np.mean([avg[k] >= mx[k] for k in common])
    d_iou = _mean(bench, "adapter-pca", "iou") - _mean(bench, "adapter-avg", "iou")
    record(4, {
        "avg>=max": (frac >= 0.7 and len(common) == bench["n_sequences"], f"{frac:.0%} of {len(common)}"),
        "pca iou": (abs(d_iou) <= 0.05, f"delta {d_iou:+.3f}"),
    })


@pytest.mark.slow
def test_criterion_05_detection(bench):
    ious = list(_per_sequence(bench, "adapter-avg", "iou").values())
    ncds = list(_per_sequence(bench, "adapter-avg", "ncd").values())
    frac = np.sum(np.asarray(ious) >= 0.5) / bench["n_sequences"]
    med = float(np.median(ncds))
    record(5, {
        "iou>=0.5": (frac >= 0.8, f"{frac:.0%}"),
        "median ncd": (med <= 0.1, f"{med:.3f}"),
    })


@pytest.mark.slow
def test_criterion_06_nms_ensemble(bench):
    d_iou = _mean(bench, "adapter-nms", "iou") - _mean(bench, "adapter-avg", "iou")
    t_nms = bench["aggregates"]["adapter-nms"]["detect_time_s"]["mean"]
    t_avg = bench["aggregates"]["adapter-avg"]["detect_time_s"]["mean"]
    l = bench["config"]["train"]["latent_dim"]
    record(6, {
        "iou": (abs(d_iou) <= 0.1, f"delta {d_iou:+.3f}"),
        "time": (t_nms >= 5 * t_avg and l == 10, f"{t_nms * 1e3:.2f} ms vs {t_avg * 1e3:.2f} ms ({t_nms / t_avg:.1f}x, l={l})"),
    })


def _layer_cases():
    return [
        (lambda r: Linear(5, 4, r), (3, 5)),
        (lambda r: LeakyReLU(0.01), (2, 3, 7)),
        (lambda r: Conv1d(2, 3, 7, 2, 3, r), (2, 2, 16)),
        (lambda r: ConvTranspose1d(3, 2, 7, 2, 3, 1, r), (2, 3, 8)),
        (lambda r: SqueezeExcite(8, 4, r), (2, 8, 6)),
        (lambda r: SelfAttention(4, r), (2, 4, 5)),
        (lambda r: TemporalMean(), (2, 3, 6)),
        (lambda r: Reshape((2, 3)), (4, 6)),
    ]


def test_criterion_07_gradients():
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst = {}
    for make, shape in _layer_cases():
        for _ in range(20):
            layer = make(rng)
            for k, v in layer.params.items():
                if k.startswith("b"):
                    v += rng.normal(scale=0.3, size=v.shape)
            x = rng.normal(size=shape)
            y = layer.forward(x)
            dy = rng.normal(size=y.shape)
            layer.zero_grad()
            layer.forward(x)
            dx = layer.backward(dy)
            err = oracles.rel_err(dx, oracles.numeric_input_grad(layer, x.copy(), dy))
            for name in layer.params:
                err = max(err, oracles.rel_err(layer.grads[name], oracles.numeric_param_grad(layer, x, dy, name)))
            name = type(layer).__name__
            worst[name] = max(worst.get(name, 0.0), err)
    elapsed = time.perf_counter() - t0
    top = max(worst.values())
    record(7, {
        "rel err": (top < 1e-4, f"worst {top:.1e} over {len(worst)} layer kinds x 20"),
        "runtime": (elapsed < 30, f"{elapsed:.1f} s"),
    })


def test_criterion_08_adam():
    rng = np.random.default_rng(8)
    w_star = rng.normal(size=50)
    w = {"w": w_star + rng.uniform(-1, 1, 50)}
    opt = Adam(lr=1e-3)
    steps = None
    for k in range(1, 5001):
        opt.step(w, {"w": 2 * (w["w"] - w_star)})
        if np.linalg.norm(w["w"] - w_star) < 1e-3:
            steps = k
            break
    dist = np.linalg.norm(w["w"] - w_star)
    record(8, {"converged": (steps is not None, f"|w - w*| = {dist:.1e} after {steps or 5000} steps")})


@pytest.mark.slow
def test_criterion_09_training_sanity(bench):
    rows = [r for r in bench["rows"] if r["method"] == "adapter-avg"]
    ratios = [r["final_loss"] / r["first_loss"] for r in rows if r.get("first_loss")]
    finite = all(np.isfinite(r.get("final_loss", np.nan)) for r in rows)
    worst = max(ratios) if ratios else float("nan")
    record(9, {
        "loss ratio": (len(ratios) == bench["n_sequences"] and worst < 0.5, f"worst final/first {worst:.3f} over {len(ratios)}"),
        "finite": (finite, "no NaN" if finite else "NaN loss"),
    })


def test_criterion_10_simulator_physics():
    drifts = []
    for mode in MODES:
        spec = small_spec(mode=mode)
        spec.excitation.pulse_duration_s = 1.0
        _, drift = run_field(spec, n_steps=500)
        drifts.append(drift)
    spread = 0.0
    for mode in MODES:
        f = simulate(small_spec(mode=mode, defects=False))[0].frames.astype(np.float64)
        spread = max(spread, float(np.max(f.max(axis=(1, 2)) - f.min(axis=(1, 2)))))
    spec = small_spec()
    spec.dt = 1.001 * stability_bound(spec)
    try:
        run_field(spec, n_steps=1)
        rejected = False
    except NumericError:
        rejected = True
    record(10, {
        "energy": (max(drifts) < 1e-3, f"max drift {max(drifts):.1e} over 500 steps"),
        "uniform": (spread <= 1e-9, f"max spread {spread:.1e}"),
        "guard": (rejected, "dt above bound rejected" if rejected else "dt above bound accepted"),
    })


def test_criterion_11_formats_and_protocol(tmp_path):
    rng = np.random.default_rng(11)
    frames = rng.normal(300, 2, size=(7, 5, 6)).astype(np.float32)
    write_sequence(InspectionSequence(frames, 12.5), tmp_path / "s.airt")
    back = read_sequence(tmp_path / "s.airt")
    airt_ok = back.frames.tobytes() == frames.tobytes() and back.frame_rate_hz == 12.5

    img = rng.normal(size=(9, 4)).astype(np.float32)
    write_aimg(img, tmp_path / "i.aimg")
    aimg_ok = read_aimg(tmp_path / "i.aimg").tobytes() == img.tobytes()

    model = AdapterModel.initialize(ArchSpec(input_len=32, channels=(4, 8), latent_dim=3), 11)
    model.input_scale = 0.37
    model.round_to_float32()  # as after training; checkpoints store float32
    save_checkpoint(model, tmp_path / "m.avlm")
    m2 = load_checkpoint(tmp_path / "m.avlm")
    save_checkpoint(m2, tmp_path / "m2.avlm")
    ckpt_ok = (
        m2.encoder_params.tobytes() == model.encoder_params.tobytes()
        and m2.decoder_params.tobytes() == model.decoder_params.tobytes()
        and (tmp_path / "m2.avlm").read_bytes() == (tmp_path / "m.avlm").read_bytes()
    )

    blob = np.zeros((32, 32))
    blob[10:15, 10:15] = 1.0
    with StubServer([{"body": {"bbox": [10, 10, 15, 15], "confidence": 0.8}}]) as stub:
        det = detect(blob, BackendConfig(kind="http", endpoint_url=stub.url))
        req = stub.requests[0]
    http_ok = (
        det.box == BBox(10, 10, 15, 15)
        and det.confidence == 0.8
        and stub.url.startswith("http://127.0.0.1")
        and req["prompt"] == DEFAULT_PROMPT
    )
    record(11, {
        ".airt": (airt_ok, "bit-exact" if airt_ok else "mismatch"),
        ".aimg": (aimg_ok, "bit-exact" if aimg_ok else "mismatch"),
        ".avlm": (ckpt_ok, "bit-exact" if ckpt_ok else "mismatch"),
        "http": (http_ok, "stub round trip on loopback" if http_ok else "stub round trip failed"),
    })
