"""Defect localisation backends and the latent-image NMS ensemble.

Two backends share one contract, ``detect(image, cfg) -> Detection``:

* ``mock``: deterministic Otsu / connected-component localiser, no network.
* ``http``: POSTs ``{"image": <base64 PGM>, "prompt": <text>}`` and expects
  ``{"bbox": [x1, y1, x2, y2], "confidence": <number>}`` back, in pixel
  coordinates of the sent image. A missing confidence defaults to 0.5.
"""
from __future__ import annotations

import base64
import json
import math
import time
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage
from skimage.filters import threshold_otsu

from .errors import AirtError, FormatError, NumericError, ProtocolError, TransportError
from .imageio import pgm_bytes
from .metrics import iou
from .seqcore import BBox

DEFAULT_PROMPT = (
    "Inspect the thermal image of a CFRP sheet and output the defect bounding box as <x1, y1, x2, y2>."
)
DEFAULT_CONFIDENCE = 0.5
BACKOFF_START_S = 0.5


@dataclass(frozen=True)
class Prompt:
    text: str = DEFAULT_PROMPT

    def __post_init__(self):
        if not self.text:
            raise FormatError("prompt text must be non-empty")


@dataclass
class Detection:
    box: BBox
    confidence: float
    backend_id: str
    latency_s: float = 0.0
    support: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["box"] = self.box.as_list()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Detection":
        return cls(
            BBox.from_seq(d["box"]),
            float(d.get("confidence", DEFAULT_CONFIDENCE)),
            str(d.get("backend_id", "")),
            float(d.get("latency_s", 0.0)),
            d.get("support"),
        )


@dataclass
class BackendConfig:
    kind: str = "mock"
    endpoint_url: str = ""
    timeout_s: float = 30.0
    retries: int = 2
    prompt: Prompt = field(default_factory=Prompt)

    def __post_init__(self):
        if isinstance(self.prompt, str):
            self.prompt = Prompt(self.prompt)
        if self.kind not in ("mock", "http"):
            raise FormatError(f"unknown backend kind {self.kind!r}")
        if not self.timeout_s > 0:
            raise FormatError("timeout_s must be > 0")
        if self.retries < 0:
            raise FormatError("retries must be >= 0")
        if self.kind == "http":
            u = urllib.parse.urlparse(self.endpoint_url)
            if u.scheme not in ("http", "https") or not u.netloc:
                raise FormatError(f"http backend needs a valid endpoint URL, got {self.endpoint_url!r}")


class EnsembleError(AirtError):
    def __init__(self, errors):
        super().__init__("every per-image detection failed: " + "; ".join(str(e) for e in errors))
        self.errors = list(errors)
        self.exit_code = getattr(errors[0], "exit_code", 1) if errors else 1


OTSU_BINS = 256


def _pixels(img) -> np.ndarray:
    arr = np.asarray(getattr(img, "pixels", img), dtype=np.float64)
    if arr.ndim != 2:
        raise FormatError(f"detection needs a 2-D image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericError("image contains non-finite values")
    return arr


def _largest_component(mask):
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return None
    sizes = np.bincount(labels.ravel())[1:]
    k = int(np.argmax(sizes)) + 1  # lowest label wins ties
    comp = labels == k
    rows = np.nonzero(comp.any(axis=1))[0]
    cols = np.nonzero(comp.any(axis=0))[0]
    box = BBox(cols[0], rows[0], cols[-1] + 1, rows[-1] + 1)
    spans = box.as_list() == [0, 0, mask.shape[1], mask.shape[0]]
    # a component touching all four borders is background, not an object
    return comp, box, 0.0 if spans else sizes[k - 1] / box.area


def mock_localize(img) -> Detection:
    """Bounding box of the most compact-of-the-largest Otsu component.

    The image is min-max normalised, thresholded with Otsu's method, and the
    largest 8-connected component is taken for both the bright and the dark
    side of the threshold; the side whose component fills more of its own
    bounding box wins (bright on ties). A component spanning the whole frame
    counts as background with compactness 0.
    """
    t0 = time.perf_counter()
    arr = _pixels(img)
    lo, hi = arr.min(), arr.max()
    if hi == lo:
        raise NumericError("no structure: image is constant")
    norm = (arr - lo) / (hi - lo)
    # skimage returns the centre of the last dark bin; cut at its upper edge so
    # the mask splits pixels exactly as the Otsu variance was scored
    t = threshold_otsu(norm, nbins=OTSU_BINS) + 0.5 / OTSU_BINS
    best = None
    for sign, mask in ((1.0, norm > t), (-1.0, norm <= t)):
        found = _largest_component(mask)
        if found is None:
            continue
        comp, box, compact = found
        if best is None or compact > best[3]:
            best = (sign, comp, box, compact)
    sign, comp, box, _ = best
    signed = sign * norm
    std = signed.std()
    conf = 0.0 if std == 0 else (signed[comp].mean() - signed.mean()) / std
    conf = float(min(max(conf, 0.0), 1.0))
    return Detection(box, conf, "mock", time.perf_counter() - t0)


def _post(url, body: bytes, timeout: float) -> bytes:
    req = urllib.request.Request(url, data=body, method="POST", headers={"Content-Type": "application/json"})
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        return resp.read()


def parse_response(raw: bytes, shape) -> tuple[BBox, float]:
    """Validate a backend reply; the box is clamped to an image of ``shape``."""
    try:
        doc = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ProtocolError(f"response is not JSON: {exc}", raw) from exc
    if not isinstance(doc, dict) or "bbox" not in doc:
        raise ProtocolError("response lacks a 'bbox' field", raw)
    coords = doc["bbox"]
    if (
        not isinstance(coords, list)
        or len(coords) != 4
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in coords)
        or not all(math.isfinite(v) for v in coords)
    ):
        raise ProtocolError("'bbox' must be four finite numbers", raw)
    x1, y1, x2, y2 = (float(v) for v in coords)
    if x1 > x2 or y1 > y2:
        raise ProtocolError(f"inverted box {coords}", raw)
    conf = doc.get("confidence", DEFAULT_CONFIDENCE)
    if conf is None:
        conf = DEFAULT_CONFIDENCE
    if not isinstance(conf, (int, float)) or isinstance(conf, bool) or not math.isfinite(conf):
        raise ProtocolError("'confidence' must be a finite number", raw)
    return BBox(x1, y1, x2, y2).clamp(shape), float(min(max(conf, 0.0), 1.0))


def http_detect(arr: np.ndarray, cfg: BackendConfig, sleep=time.sleep) -> Detection:
    body = json.dumps(
        {"image": base64.b64encode(pgm_bytes(arr)).decode("ascii"), "prompt": cfg.prompt.text}
    ).encode()
    t0 = time.perf_counter()
    delay = BACKOFF_START_S
    last = None
    for attempt in range(cfg.retries + 1):
        try:
            raw = _post(cfg.endpoint_url, body, cfg.timeout_s)
            break
        except (urllib.error.URLError, TimeoutError, ConnectionError, OSError) as exc:
            last = exc
            if attempt < cfg.retries:
                sleep(delay)
                delay *= 2
    else:
        raise TransportError(f"{cfg.endpoint_url}: giving up after {cfg.retries + 1} attempts: {last}")
    box, conf = parse_response(raw, arr.shape)
    return Detection(box, conf, f"http:{cfg.endpoint_url}", time.perf_counter() - t0)


def detect(img, cfg: BackendConfig | None = None) -> Detection:
    cfg = cfg or BackendConfig()
    arr = _pixels(img)
    if cfg.kind == "mock":
        det = mock_localize(arr)
        det.box = det.box.clamp(arr.shape)
        return det
    return http_detect(arr, cfg)


def greedy_nms(dets: list[Detection], iou_thresh: float = 0.5) -> list[Detection]:
    """Greedy NMS; each kept detection's ``support`` sums its own and suppressed confidences.

    Input order is irrelevant: candidates are sorted by confidence, then
    lower x1, y1, x2, y2. Output is sorted by support (stable).
    """
    order = sorted(dets, key=lambda d: (-d.confidence, *d.box.as_list()))
    kept = []
    while order:
        top, rest = order[0], order[1:]
        matched = [d for d in rest if iou(top.box, d.box) > iou_thresh]
        order = [d for d in rest if iou(top.box, d.box) <= iou_thresh]
        kept.append(
            Detection(top.box, top.confidence, top.backend_id, top.latency_s, top.confidence + sum(d.confidence for d in matched))
        )
    return sorted(kept, key=lambda d: -d.support)


def nms_ensemble(stack, cfg: BackendConfig | None = None, iou_thresh: float = 0.5) -> Detection:
    """Detect on every latent image and fuse the boxes with greedy NMS."""
    cfg = cfg or BackendConfig()
    images = np.asarray(getattr(stack, "images", stack), dtype=np.float64)
    if images.ndim != 3 or images.shape[0] < 1:
        raise FormatError(f"stack must be (l, n_y, n_x) with l >= 1, got {images.shape}")
    dets, errors = [], []
    for im in images:
        try:
            dets.append(detect(im, cfg))
        except AirtError as exc:
            errors.append(exc)
    if not dets:
        raise EnsembleError(errors)
    winner = greedy_nms(dets, iou_thresh)[0]
    winner.latency_s = sum(d.latency_s for d in dets)
    winner.backend_id = f"nms[{cfg.kind}]"
    return winner
