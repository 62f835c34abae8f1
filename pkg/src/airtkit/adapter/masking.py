"""Patch masking plus additive Gaussian noise used to corrupt training signals."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import FormatError


@dataclass
class MaskSpec:
    patch_len: int = 16
    mask_ratio: float = 0.5
    noise_std: float = 0.1  # relative to each signal's own std
    seed: int = 0

    def __post_init__(self):
        if self.patch_len < 1:
            raise FormatError("patch_len must be >= 1")
        if not 0 <= self.mask_ratio < 1:
            raise FormatError(f"mask_ratio must lie in [0, 1), got {self.mask_ratio}")
        if self.noise_std < 0:
            raise FormatError("noise_std must be >= 0")

    def n_patches(self, length: int) -> int:
        return math.ceil(length / self.patch_len)

    def n_masked(self, length: int) -> int:
        n = self.n_patches(length)
        k = math.floor(self.mask_ratio * n + 0.5)
        if k >= n:
            raise FormatError(f"mask_ratio {self.mask_ratio} leaves no visible patch out of {n}")
        return k


def corrupt_batch(signals: np.ndarray, mask: MaskSpec, rng: np.random.Generator):
    """Corrupt each row of ``signals`` (B, L); returns ``(corrupted, mask_bits)``."""
    B, L = signals.shape
    n_p, k = mask.n_patches(L), mask.n_masked(L)
    patch_bits = np.ones((B, n_p))
    if k:
        order = np.argsort(rng.random((B, n_p)), axis=1)
        np.put_along_axis(patch_bits, order[:, :k], 0.0, axis=1)
    bits = np.repeat(patch_bits, mask.patch_len, axis=1)[:, :L]
    out = bits * signals
    if mask.noise_std > 0:
        sigma = mask.noise_std * signals.std(axis=1, keepdims=True)
        out = out + sigma * rng.standard_normal((B, L))
    return out, bits


def corrupt(signal, mask: MaskSpec, rng: np.random.Generator):
    """Single-signal form of :func:`corrupt_batch`."""
    signal = np.asarray(signal, dtype=np.float64)
    out, bits = corrupt_batch(signal[None, :], mask, rng)
    return out[0], bits[0]
