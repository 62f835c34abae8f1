"""Defect-visibility and localization metrics.

``contrast`` and ``snr_db`` compare the defect ROI against a sound
(defect-free) ROI; ``iou`` and ``ncd`` compare a predicted box with the
ground-truth box.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import AirtError, FormatError, NumericError
from .seqcore import BBox, RoiLabels, extract_roi_stats, intersection_area


def _shifted_means(img, defect: BBox, sound: BBox):
    img = np.asarray(img, dtype=np.float64)
    shift = float(img.min())
    mean_d, std_d, n_d = extract_roi_stats(img, defect)
    mean_s, std_s, n_s = extract_roi_stats(img, sound)
    return (mean_d - shift, mean_s - shift, shift, std_d, std_s, n_d, n_s)


def contrast(img, defect: BBox, sound: BBox) -> float:
    """``|m_d - m_s| / (m_d + m_s)`` on the image shifted so its minimum is 0.

    The shift keeps the ratio in [0, 1] for zero-centred representations
    and makes it invariant to additive offsets. Returns 0 when both shifted
    means vanish.
    """
    md, ms, *_ = _shifted_means(img, defect, sound)
    denom = md + ms
    if denom <= 0:
        return 0.0
    return abs(md - ms) / denom


def snr_db(img, defect: BBox, sound: BBox) -> float:
    """``20 log10(|m_d - m_s| / sigma_s)`` with sigma_s the population std of the sound ROI."""
    img = np.asarray(img, dtype=np.float64)
    mean_d, _, _ = extract_roi_stats(img, defect)
    mean_s, std_s, _ = extract_roi_stats(img, sound)
    if not std_s > 0:
        raise NumericError("degenerate sound region: sigma_s = 0")
    diff = abs(mean_d - mean_s)
    if diff == 0:
        return -math.inf
    return 20.0 * math.log10(diff / std_s)


def iou(a: BBox, b: BBox) -> float:
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def ncd(pred: BBox, gt: BBox) -> float:
    """Centre distance normalised by the ground-truth diagonal."""
    diag = math.hypot(gt.width, gt.height)
    if diag == 0:
        raise FormatError("ground-truth box has zero diagonal")
    (px, py), (gx, gy) = pred.center, gt.center
    return math.hypot(px - gx, py - gy) / diag


@dataclass
class MetricBundle:
    contrast: float
    snr_db: float | None
    iou: float
    ncd: float
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["snr_db"] is not None and not math.isfinite(d["snr_db"]):
            d["snr_db"] = None
            d["details"].setdefault("snr_error", "zero mean difference")
        return d


def evaluate(img, pred: BBox, labels: RoiLabels) -> MetricBundle:
    """All four metrics plus the ROI statistics they were computed from.

    An undefined SNR (flat sound region) is reported as ``snr_db=None`` with
    the reason in ``details["snr_error"]``; the other fields stay valid.
    """
    img = np.asarray(img, dtype=np.float64)
    md, ms, shift, std_d, std_s, n_d, n_s = _shifted_means(img, labels.defect_box, labels.sound_box)
    details = {
        "mean_defect": md + shift,
        "mean_sound": ms + shift,
        "std_defect": std_d,
        "sigma_sound": std_s,
        "n_defect": n_d,
        "n_sound": n_s,
        "contrast_shift": shift,
        "snr_convention": "20*log10",
    }
    c = contrast(img, labels.defect_box, labels.sound_box)
    try:
        s = snr_db(img, labels.defect_box, labels.sound_box)
    except AirtError as exc:
        s = None
        details["snr_error"] = str(exc)
    return MetricBundle(
        contrast=c,
        snr_db=s,
        iou=iou(pred, labels.defect_box),
        ncd=ncd(pred, labels.defect_box),
        details=details,
    )
