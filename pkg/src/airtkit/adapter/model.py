"""Convolutional masked autoencoder: architecture, forward passes, checkpoints."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .layers import (
    Conv1d,
    ConvTranspose1d,
    LeakyReLU,
    Linear,
    Reshape,
    SelfAttention,
    Sequential,
    SqueezeExcite,
    TemporalMean,
)

CKPT_MAGIC = b"AVLM"
CKPT_VERSION = 1


@dataclass
class ArchSpec:
    input_len: int = 512
    channels: tuple = (16, 32, 64)
    kernel: int = 7
    stride: int = 2
    se_reduction: int = 4
    attention: bool = True
    latent_dim: int = 10
    slope: float = 0.01
    signal_norm: str = "rms"  # "rms": each signal scaled to unit RMS; "global": one scale for all

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.signal_norm not in ("rms", "global"):
            raise FormatError(f"signal_norm must be 'rms' or 'global', got {self.signal_norm!r}")
        if self.latent_dim < 1 or not self.channels or self.kernel < 1 or self.stride < 1:
            raise FormatError(f"invalid ArchSpec {self}")
        if self.input_len % (self.stride ** len(self.channels)):
            raise FormatError(
                f"input_len {self.input_len} must be divisible by stride**blocks = {self.stride ** len(self.channels)}"
            )

    @property
    def bottleneck_len(self) -> int:
        return self.input_len // self.stride ** len(self.channels)


def build_encoder(arch: ArchSpec, rng) -> Sequential:
    pad = arch.kernel // 2
    layers, c_in = [], 1
    for c in arch.channels:
        layers += [
            Conv1d(c_in, c, arch.kernel, arch.stride, pad, rng),
            LeakyReLU(arch.slope),
            SqueezeExcite(c, arch.se_reduction, rng, arch.slope),
        ]
        c_in = c
    if arch.attention:
        layers.append(SelfAttention(c_in, rng))
    layers += [TemporalMean(), Linear(c_in, arch.latent_dim, rng)]
    return Sequential(layers)


def build_decoder(arch: ArchSpec, rng) -> Sequential:
    pad = arch.kernel // 2
    op = arch.stride - 1 + 2 * pad - arch.kernel + 1  # makes each block exactly x stride
    chans = list(reversed(arch.channels))
    layers = [
        Linear(arch.latent_dim, chans[0] * arch.bottleneck_len, rng),
        Reshape((chans[0], arch.bottleneck_len)),
        LeakyReLU(arch.slope),
    ]
    targets = chans[1:] + [1]
    for i, (c_in, c_out) in enumerate(zip(chans, targets)):
        layers.append(ConvTranspose1d(c_in, c_out, arch.kernel, arch.stride, pad, op, rng))
        if i < len(targets) - 1:
            layers.append(LeakyReLU(arch.slope))
    return Sequential(layers)


def resample(signals: np.ndarray, length: int) -> np.ndarray:
    """Linearly interpolate each row of ``signals`` onto ``length`` evenly spaced samples.

    When shrinking, rows are first box-averaged over the decimation factor
    so that dropped samples still contribute.
    """
    signals = np.atleast_2d(np.asarray(signals, dtype=np.float64))
    n = signals.shape[1]
    if n == length:
        return signals.copy()
    width = int(round(n / length))
    if width > 1:
        c = np.cumsum(np.pad(signals, ((0, 0), (1, 0))), axis=1)
        half = width // 2
        lo_i = np.clip(np.arange(n) - half, 0, n)
        hi_i = np.clip(np.arange(n) - half + width, 0, n)
        signals = (c[:, hi_i] - c[:, lo_i]) / (hi_i - lo_i)
    pos = np.linspace(0.0, n - 1, length)
    lo = np.minimum(np.floor(pos).astype(int), n - 2)
    w = pos - lo
    return signals[:, lo] * (1 - w) + signals[:, lo + 1] * w


@dataclass
class AdapterModel:
    arch: ArchSpec
    encoder: Sequential
    decoder: Sequential
    input_scale: float = 1.0
    provenance: dict = field(default_factory=dict)

    @classmethod
    def initialize(cls, arch: ArchSpec, seed=0, input_scale=1.0) -> "AdapterModel":
        rng = np.random.default_rng(seed)
        return cls(arch, build_encoder(arch, rng), build_decoder(arch, rng), float(input_scale))

    @property
    def latent_dim(self) -> int:
        return self.arch.latent_dim

    @property
    def encoder_params(self) -> np.ndarray:
        return self.encoder.get_flat()

    @property
    def decoder_params(self) -> np.ndarray:
        return self.decoder.get_flat()

    def prepare(self, signals) -> np.ndarray:
        """Resample centred signals to ``input_len`` and bring them to network scale."""
        x = resample(signals, self.arch.input_len)
        if self.arch.signal_norm == "rms":
            rms = np.sqrt(np.mean(x * x, axis=1, keepdims=True))
            x = x / np.where(rms > 0, rms, 1.0)
        return x / self.input_scale

    def encode_batch(self, x: np.ndarray) -> np.ndarray:
        """Network-domain batch (B, input_len) -> latents (B, l)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.arch.input_len:
            raise FormatError(f"encoder expects (B, {self.arch.input_len}) input, got {x.shape}")
        return self.encoder.forward(x[:, None, :])

    def decode_batch(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise FormatError(f"decoder expects (B, {self.latent_dim}) latents, got {z.shape}")
        return self.decoder.forward(z)[:, 0, :]

    def encode_signals(self, signals, batch_size=1024) -> np.ndarray:
        """Centred signals (P, n_t) of any length -> latents (P, l)."""
        x = self.prepare(signals)
        out = [self.encode_batch(x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.latent_dim))

    def canonicalize_signs(self, signals) -> np.ndarray:
        """Flip latent channels so each has non-negative skewness over ``signals``.

        The decoder's input weights are flipped with them, so reconstructions
        are unchanged. Returns the sign vector applied.
        """
        z = self.encode_signals(signals)
        zc = z - z.mean(axis=0)
        signs = np.where(np.mean(zc**3, axis=0) < 0, -1.0, 1.0)
        enc_out, dec_in = self.encoder.layers[-1], self.decoder.layers[0]
        enc_out.params["W"] *= signs[:, None]
        enc_out.params["b"] *= signs
        dec_in.params["W"] *= signs[None, :]
        return signs

    def round_to_float32(self) -> None:
        """Snap parameters to float32-representable values so checkpoints round-trip exactly."""
        for seq in (self.encoder, self.decoder):
            seq.set_flat(seq.get_flat().astype(np.float32).astype(np.float64))


def encode(model: AdapterModel, signal) -> np.ndarray:
    """Latent vector of one network-domain signal of length ``arch.input_len``."""
    return model.encode_batch(np.asarray(signal, dtype=np.float64)[None, :])[0]


def decode(model: AdapterModel, latent) -> np.ndarray:
    return model.decode_batch(np.asarray(latent, dtype=np.float64)[None, :])[0]


def save_checkpoint(model: AdapterModel, path) -> None:
    header = {
        "arch": asdict(model.arch),
        "input_scale": model.input_scale,
        "n_encoder": model.encoder.n_params(),
        "n_decoder": model.decoder.n_params(),
        "provenance": model.provenance,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    flat = np.concatenate([model.encoder_params, model.decoder_params]).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + struct.pack("<HI", CKPT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(flat.tobytes())


def load_checkpoint(path) -> AdapterModel:
    data = Path(path).read_bytes()
    if data[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: bad checkpoint magic {data[:4]!r}", offset=0)
    if len(data) < 10:
        raise FormatError(f"{path}: truncated checkpoint header", offset=len(data))
    version, n_blob = struct.unpack_from("<HI", data, 4)
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}", offset=4)
    try:
        header = json.loads(data[10 : 10 + n_blob])
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt architecture header", offset=10) from exc
    arch = ArchSpec(**header["arch"])
    model = AdapterModel.initialize(arch, 0, header["input_scale"])
    model.provenance = header.get("provenance", {})
    n_enc, n_dec = header["n_encoder"], header["n_decoder"]
    if (n_enc, n_dec) != (model.encoder.n_params(), model.decoder.n_params()):
        raise FormatError(f"{path}: parameter counts do not match architecture", offset=10)
    off = 10 + n_blob
    if len(data) - off != 4 * (n_enc + n_dec):
        raise FormatError(f"{path}: parameter payload has wrong size", offset=off)
    flat = np.frombuffer(data, dtype="<f4", offset=off).astype(np.float64)
    model.encoder.set_flat(flat[:n_enc])
    model.decoder.set_flat(flat[n_enc:])
    return model
