"""Online training of the masked autoencoder on one sequence, and pooling of its latents."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import DivergenceError, FormatError
from ..seqcore import InspectionSequence, StandardizedSequence, standardize
from .masking import MaskSpec, corrupt_batch
from .model import AdapterModel, ArchSpec
from .optim import Adam

log = logging.getLogger(__name__)

POOLINGS = ("avg", "max", "pca")
# Desk-scale network used when TrainConfig.arch is unset: half the input
# length and half the channels of ArchSpec(), about 8x cheaper per epoch.
DESK_ARCH = {"input_len": 256, "channels": (8, 16, 32)}


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 100
    latent_dim: int = 10
    mask: MaskSpec = field(default_factory=MaskSpec)
    seed: int = 0
    max_pixels: int | None = 1024  # fixed random training subset; None trains on every pixel
    arch: ArchSpec | None = None

    def __post_init__(self):
        if isinstance(self.mask, dict):
            self.mask = MaskSpec(**self.mask)
        if isinstance(self.arch, dict):
            self.arch = ArchSpec(**self.arch)
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0 or self.latent_dim < 1:
            raise FormatError(f"invalid TrainConfig {self}")
        if self.max_pixels is not None and self.max_pixels < self.batch_size:
            raise FormatError("max_pixels must be >= batch_size")

    def resolved_arch(self) -> ArchSpec:
        base = asdict(self.arch) if self.arch is not None else dict(DESK_ARCH)
        base["latent_dim"] = self.latent_dim
        return ArchSpec(**base)


@dataclass
class LatentStack:
    images: np.ndarray  # (l, n_y, n_x)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if self.images.ndim != 3 or self.images.shape[0] < 1:
            raise FormatError(f"latent stack must be (l, n_y, n_x), got {self.images.shape}")
        if not np.all(np.isfinite(self.images)):
            raise FormatError("latent stack contains non-finite values")

    @property
    def latent_dim(self) -> int:
        return self.images.shape[0]


@dataclass
class AlignedImage:
    pixels: np.ndarray
    pooling: str = "avg"
    provenance: dict = field(default_factory=dict)


def _param_views(model: AdapterModel):
    params = {f"enc.{k}": v for k, v in model.encoder.named_params()}
    params.update({f"dec.{k}": v for k, v in model.decoder.named_params()})
    return params


def _grad_views(model: AdapterModel):
    grads = {f"enc.{k}": v for k, v in model.encoder.named_grads()}
    grads.update({f"dec.{k}": v for k, v in model.decoder.named_grads()})
    return grads


def reconstruction_step(model: AdapterModel, corrupted: np.ndarray, clean: np.ndarray) -> float:
    """Forward + backward of the mean squared reconstruction error; fills layer grads."""
    model.encoder.zero_grad()
    model.decoder.zero_grad()
    z = model.encoder.forward(corrupted[:, None, :])
    recon = model.decoder.forward(z)[:, 0, :]
    diff = recon - clean
    loss = float(np.mean(diff * diff))
    d_recon = (2.0 / diff.size) * diff
    dz = model.decoder.backward(d_recon[:, None, :])
    model.encoder.backward(dz)
    return loss


def train(std_seq: StandardizedSequence, cfg: TrainConfig):
    """Fit the autoencoder to the sequence's centred pixel signals.

    Returns ``(model, loss_history)`` with one mean loss per epoch. The loss
    compares the reconstruction with the uncorrupted signal at every time
    step, in the network domain (resampled, divided by the global RMS).
    """
    signals = np.asarray(std_seq.signals, dtype=np.float64)
    P = signals.shape[0]
    arch = cfg.resolved_arch()
    rng = np.random.default_rng(cfg.seed)
    model = AdapterModel.initialize(arch, rng.integers(0, 2**63 - 1))

    X = model.prepare(signals)
    rms = float(np.sqrt(np.mean(X * X)))
    model.input_scale = rms if rms > 0 else 1.0
    X /= model.input_scale

    if P < cfg.batch_size:
        raise FormatError(f"need at least batch_size={cfg.batch_size} pixels, got {P}")
    pool = np.arange(P)
    if cfg.max_pixels is not None and P > cfg.max_pixels:
        pool = np.sort(rng.choice(P, cfg.max_pixels, replace=False))
    mask_rng = np.random.default_rng([cfg.mask.seed, cfg.seed])
    opt = Adam(lr=cfg.learning_rate)
    params = _param_views(model)

    history = []
    strikes = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(pool)
        total = 0.0
        for i in range(0, len(order), cfg.batch_size):
            clean = X[order[i : i + cfg.batch_size]]
            corrupted, _ = corrupt_batch(clean, cfg.mask, mask_rng)
            loss = reconstruction_step(model, corrupted, clean)
            opt.step(params, _grad_views(model))
            total += loss * len(clean)
        epoch_loss = total / len(order)
        if not math.isfinite(epoch_loss):
            raise DivergenceError("training loss is not finite", epoch)
        history.append(epoch_loss)
        strikes = strikes + 1 if epoch_loss > 10 * history[0] else 0
        if strikes >= 5:
            raise DivergenceError("loss above 10x its initial value for 5 epochs", epoch)
        log.debug("epoch %d loss %.6g", epoch, epoch_loss)

    model.round_to_float32()
    model.canonicalize_signs(signals)
    model.provenance = {
        "input_len": arch.input_len,
        "input_scale": model.input_scale,
        "train_pixels": int(len(pool)),
        "epochs": cfg.epochs,
        "learning_rate": cfg.learning_rate,
        "batch_size": cfg.batch_size,
        "mask": asdict(cfg.mask),
        "seed": cfg.seed,
    }
    return model, history


def latent_stack(model: AdapterModel, std_seq: StandardizedSequence) -> LatentStack:
    """Encode every pixel's centred signal; channel i becomes latent image i."""
    z = model.encode_signals(std_seq.signals)
    n_y, n_x = std_seq.image_shape
    return LatentStack(z.T.reshape(model.latent_dim, n_y, n_x))


def _pca_pool(images: np.ndarray) -> np.ndarray:
    l, n_y, n_x = images.shape
    Z = images.reshape(l, -1).T
    Zc = Z - Z.mean(axis=0)
    _, _, Vt = np.linalg.svd(Zc, full_matrices=False)
    proj = Zc @ Vt[0]
    if np.mean(proj**3) < 0:
        proj = -proj
    return proj.reshape(n_y, n_x)


def pool(stack: LatentStack, op: str = "avg") -> AlignedImage:
    """Collapse the latent stack to one image by channel mean, max, or first principal component."""
    imgs = stack.images
    if op == "avg":
        out = imgs.mean(axis=0)
    elif op == "max":
        out = imgs.max(axis=0)
    elif op == "pca":
        out = _pca_pool(imgs)
    else:
        raise FormatError(f"unknown pooling {op!r}; expected one of {POOLINGS}")
    return AlignedImage(out, op, {"latent_dim": stack.latent_dim})


def run_adapter(seq: InspectionSequence, cfg: TrainConfig | None = None, pooling: str = "avg", return_stack=False):
    """Centre, train, encode and pool one sequence end to end."""
    cfg = cfg or TrainConfig()
    std_seq = standardize(seq)
    model, history = train(std_seq, cfg)
    stack = latent_stack(model, std_seq)
    img = pool(stack, pooling)
    img.provenance.update(model.provenance)
    img.provenance["final_loss"] = history[-1] if history else None
    if return_stack:
        return img, stack, model, history
    return img
