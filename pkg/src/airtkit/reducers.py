"""Classic thermographic reduction baselines: best raw frame, TSR and PCT.

TSR and PCT are exposed as scikit-learn transformers acting on the
``(n_pixels, n_t)`` signal matrix, plus ``reduce_*`` helpers that take an
:class:`InspectionSequence` and return candidate images.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import FormatError, NumericError
from .metrics import contrast
from .seqcore import InspectionSequence, RoiLabels

METHODS = ("raw_best_frame", "tsr", "pct")


@dataclass
class ReductionResult:
    images: list
    method: str
    selected: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.images:
            raise FormatError("reduction produced no images")
        shape = np.shape(self.images[0])
        if any(np.shape(im) != shape for im in self.images):
            raise FormatError("reduction images differ in shape")
        if not 0 <= self.selected < len(self.images):
            raise FormatError(f"selected index {self.selected} out of range")

    @property
    def image(self) -> np.ndarray:
        return self.images[self.selected]


def _best_contrast(images, labels: RoiLabels) -> int:
    scores = [contrast(im, labels.defect_box, labels.sound_box) for im in images]
    return int(np.argmax(scores))  # first index on ties


def reduce_raw(seq: InspectionSequence, labels: RoiLabels) -> ReductionResult:
    """All frames as candidates; the highest-contrast frame is selected."""
    images = [f.astype(np.float64) for f in seq.frames]
    sel = _best_contrast(images, labels)
    return ReductionResult(images, "raw_best_frame", sel, {"selection": "max_contrast"})


def excitation_onset(frame_means) -> int:
    """Index of the first frame that departs from the pre-excitation baseline."""
    m = np.asarray(frame_means, dtype=np.float64)
    rise = np.abs(m - m[0])
    top = rise.max()
    if top == 0:
        return 0
    d = np.diff(m)
    sigma = 1.4826 * np.median(np.abs(d - np.median(d))) / np.sqrt(2) if d.size else 0.0
    thresh = max(8 * sigma, 1e-3 * top)
    above = np.nonzero(rise > thresh)[0]
    return int(above[0]) if above.size else 0


class TSR(BaseEstimator, TransformerMixin):
    """Thermal signal reconstruction.

    Fits a polynomial of ``degree`` to ``ln(dT)`` against ``ln(t)`` for every
    pixel over the post-excitation window. ``transform`` returns per-pixel
    features ``[c_0 .. c_degree, d1, d2]`` where ``d1``/``d2`` are the first and
    second log-log derivatives at the window's logarithmic mid-time.

    The window, time origin and ambient level are learnt in ``fit`` from the
    frame-mean curve: ambient is the per-pixel mean of pre-onset frames and
    the window starts right after the frame of peak mean temperature (or
    after onset, when the peak is the last frame, as in transmission).
    """

    def __init__(self, degree=5, frame_rate_hz=1.0):
        self.degree = degree
        self.frame_rate_hz = frame_rate_hz

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        n_t = X.shape[1]
        means = X.mean(axis=0)
        onset = excitation_onset(means)
        peak = int(np.argmax(means))
        start = peak + 1
        if n_t - start < self.degree + 2:
            start = onset + 1
        if n_t - start < self.degree + 2:
            raise FormatError(
                f"post-excitation window has {n_t - start} frames; degree {self.degree} needs {self.degree + 2}"
            )
        self.onset_ = onset
        self.window_ = (start, n_t)
        t = (np.arange(start, n_t) - onset) / float(self.frame_rate_hz)
        self.log_t_ = np.log(t)
        self.log_mid_ = 0.5 * (self.log_t_[0] + self.log_t_[-1])
        self.n_features_in_ = n_t
        return self

    def _ambient(self, X):
        pre = max(self.onset_, 1)
        return X[:, :pre].mean(axis=1)

    def transform(self, X):
        check_is_fitted(self, "window_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise FormatError(f"expected {self.n_features_in_} time samples, got {X.shape[1]}")
        a, b = self.window_
        dT = X[:, a:b] - self._ambient(X)[:, None]
        ok = np.all(dT > 0, axis=1)
        log_dT = np.log(np.where(dT > 0, dT, 1.0))
        V = np.vander(self.log_t_, self.degree + 1, increasing=True)
        coef = np.zeros((X.shape[0], self.degree + 1))
        if ok.any():
            sol, *_ = np.linalg.lstsq(V, log_dT[ok].T, rcond=None)
            coef[ok] = sol.T
        self.n_fallback_ = int((~ok).sum())
        powers = np.arange(self.degree + 1)
        u = self.log_mid_
        d1 = coef[:, 1:] @ (powers[1:] * u ** (powers[1:] - 1))
        d2 = coef[:, 2:] @ (powers[2:] * (powers[2:] - 1) * u ** (powers[2:] - 2.0))
        return np.column_stack([coef, d1, d2])

    def fitted_log_signal(self, X):
        """Reconstructed ``ln(dT)`` over the fit window, shape (P, window)."""
        feats = self.transform(X)
        V = np.vander(self.log_t_, self.degree + 1, increasing=True)
        return feats[:, : self.degree + 1] @ V.T

    def log_derivative(self, X, order=1):
        """``d^order ln(dT) / d ln(t)^order`` at every window time, shape (P, window)."""
        coef = self.transform(X)[:, : self.degree + 1]
        return np.polynomial.polynomial.polyval(self.log_t_, np.polynomial.polynomial.polyder(coef.T, order))


def reduce_tsr(seq: InspectionSequence, degree: int = 5) -> ReductionResult:
    if seq.n_t < degree + 2:
        raise FormatError(f"n_t={seq.n_t} too short for TSR degree {degree}")
    tsr = TSR(degree=degree, frame_rate_hz=seq.frame_rate_hz)
    feats = tsr.fit_transform(seq.pixel_signals())
    shape = (seq.n_y, seq.n_x)
    images = [feats[:, i].reshape(shape) for i in range(feats.shape[1])]
    params = {
        "degree": str(degree),
        "window": f"{tsr.window_[0]}:{tsr.window_[1]}",
        "onset_frame": str(tsr.onset_),
        "fallback_pixels": str(tsr.n_fallback_),
        "images": "c_0..c_degree, d1(log-mid), d2(log-mid)",
    }
    return ReductionResult(images, "tsr", len(images) - 1, params)


def _skew_sign(v):
    c = v - v.mean()
    return -1.0 if np.mean(c**3) < 0 else 1.0


class PCT(BaseEstimator, TransformerMixin):
    """Principal component thermography.

    Rows of ``X`` (pixels) are centred and scaled to unit variance, then the
    ``(n_t, P)`` matrix is decomposed by SVD. ``transform`` returns the
    empirical orthogonal functions: one column per component, unit norm
    over pixels, with each component's sign chosen so its spatial skewness
    is non-negative.
    """

    def __init__(self, n_components=10, eps=1e-12):
        self.n_components = n_components
        self.eps = eps

    def _standardize(self, X):
        c = X - X.mean(axis=1, keepdims=True)
        return c / np.sqrt(c.var(axis=1, keepdims=True) + self.eps)

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        P, n_t = X.shape
        if self.n_components > min(n_t, P):
            raise FormatError(f"n_components={self.n_components} exceeds min(n_t, P)={min(n_t, P)}")
        Z = self._standardize(X)
        if not np.any(Z):
            raise NumericError("degenerate sequence: all standardized signals are zero")
        U, S, Vt = np.linalg.svd(Z.T, full_matrices=False)
        signs = np.array([_skew_sign(Vt[i]) for i in range(len(S))])
        U, Vt = U * signs, Vt * signs[:, None]
        self.temporal_components_ = U  # (n_t, r)
        self.singular_values_ = S
        self.eofs_ = Vt  # (r, P)
        self.n_features_in_ = n_t
        return self

    def transform(self, X):
        check_is_fitted(self, "eofs_")
        X = check_array(X, dtype=np.float64)
        k = self.n_components
        S = self.singular_values_[:k]
        safe = np.where(S > 0, S, 1.0)
        return (self._standardize(X) @ self.temporal_components_[:, :k]) / safe

    def reconstruct(self, n_components=None):
        """Standardised (P, n_t) matrix rebuilt from the leading components."""
        check_is_fitted(self, "eofs_")
        k = len(self.singular_values_) if n_components is None else n_components
        return ((self.temporal_components_[:, :k] * self.singular_values_[:k]) @ self.eofs_[:k]).T


def reduce_pct(seq: InspectionSequence, n_components: int = 10, labels: RoiLabels | None = None) -> ReductionResult:
    pct = PCT(n_components=n_components).fit(seq.pixel_signals())
    shape = (seq.n_y, seq.n_x)
    images = [pct.eofs_[i].reshape(shape) for i in range(n_components)]
    if labels is not None:
        scores = [contrast(im, labels.defect_box, labels.sound_box) for im in images]
        sel = int(np.argmax(scores))
        rule = "max_contrast"
    else:
        sel = 1 if n_components > 1 else 0
        rule = "index_1"
    params = {
        "n_components": str(n_components),
        "selection": rule,
        "singular_values": ",".join(f"{s:.6g}" for s in pct.singular_values_[:n_components]),
    }
    return ReductionResult(images, "pct", sel, params)
