"""Independent reference implementations used as test oracles.

These deliberately avoid the package's code paths: metrics enumerate pixels
or unit cells one at a time, gradients come from central differences.
"""
import math

import numpy as np


def box_pixels(box, shape):
    """Pixels (y, x) whose unit cell lies fully inside a half-open box."""
    h, w = shape
    out = []
    for y in range(h):
        for x in range(w):
            if box[0] <= x and x + 1 <= box[2] and box[1] <= y and y + 1 <= box[3]:
                out.append((y, x))
    return out


def region_stats(img, box):
    vals = [float(img[y, x]) for y, x in box_pixels(box, img.shape)]
    n = len(vals)
    mean = sum(vals) / n
    var = sum((v - mean) ** 2 for v in vals) / n
    return mean, math.sqrt(var), n


def contrast(img, defect, sound):
    lo = float(np.min(img))
    md, _, _ = region_stats(img - lo, defect)
    ms, _, _ = region_stats(img - lo, sound)
    return 0.0 if md + ms == 0 else abs(md - ms) / (md + ms)


def snr_db(img, defect, sound):
    md, _, _ = region_stats(img, defect)
    ms, ss, _ = region_stats(img, sound)
    if md == ms:
        return -math.inf
    return 20.0 * math.log10(abs(md - ms) / ss)


def _overlap_1d(a1, a2, b1, b2):
    return max(0.0, min(a2, b2) - max(a1, b1))


def iou(a, b):
    inter = _overlap_1d(a[0], a[2], b[0], b[2]) * _overlap_1d(a[1], a[3], b[1], b[3])
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return 0.0 if union == 0 else inter / union


def iou_cells(a, b):
    """IoU of integer boxes by counting unit cells on a grid covering both."""
    lo = int(min(a[0], a[1], b[0], b[1]))
    hi = int(max(a[2], a[3], b[2], b[3]))
    inter = union = 0
    for y in range(lo, hi):
        for x in range(lo, hi):
            in_a = a[0] <= x < a[2] and a[1] <= y < a[3]
            in_b = b[0] <= x < b[2] and b[1] <= y < b[3]
            inter += in_a and in_b
            union += in_a or in_b
    return 0.0 if union == 0 else inter / union


def ncd(pred, gt):
    cp = ((pred[0] + pred[2]) / 2, (pred[1] + pred[3]) / 2)
    cg = ((gt[0] + gt[2]) / 2, (gt[1] + gt[3]) / 2)
    return math.hypot(cp[0] - cg[0], cp[1] - cg[1]) / math.hypot(gt[2] - gt[0], gt[3] - gt[1])


def rel_err(a, b):
    """Norm-wise relative error ``|a - b| / (|a| + |b|)``.

    When the analytic side ``a`` is identically zero (the attention key bias,
    which softmax shift-invariance cancels) the absolute norm of ``b`` is
    returned instead, so finite-difference round-off is not divided by itself.
    """
    a, b = np.ravel(a), np.ravel(b)
    na = np.linalg.norm(a)
    if na < 1e-12:
        return float(np.linalg.norm(b))
    return float(np.linalg.norm(a - b) / (na + np.linalg.norm(b)))


def numeric_param_grad(layer, x, dy, name, eps=1e-5):
    """Central-difference gradient of sum(dy * layer.forward(x)) w.r.t. one parameter."""
    p = layer.params[name]
    g = np.zeros_like(p)
    it = np.nditer(p, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = p[i]
        p[i] = old + eps
        fp = np.sum(dy * layer.forward(x))
        p[i] = old - eps
        fm = np.sum(dy * layer.forward(x))
        p[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def numeric_input_grad(layer, x, dy, eps=1e-5):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = np.sum(dy * layer.forward(x))
        x[i] = old - eps
        fm = np.sum(dy * layer.forward(x))
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def otsu_threshold(values, nbins=256):
    """Exhaustive between-class-variance maximiser over histogram bin centres."""
    hist, edges = np.histogram(values, bins=nbins)
    centers = (edges[:-1] + edges[1:]) / 2
    best, best_t = -1.0, centers[0]
    total = hist.sum()
    for i in range(1, nbins):
        w0, w1 = hist[:i].sum(), hist[i:].sum()
        if w0 == 0 or w1 == 0:
            continue
        m0 = (hist[:i] * centers[:i]).sum() / w0
        m1 = (hist[i:] * centers[i:]).sum() / w1
        var = w0 * w1 * (m0 - m1) ** 2 / total**2
        if var > best:
            best, best_t = var, centers[i - 1]
    return best_t
