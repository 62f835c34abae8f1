"""scikit-learn front end for the masked autoencoder adapter."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..seqcore import StandardizedSequence
from .masking import MaskSpec
from .model import ArchSpec
from .training import POOLINGS, TrainConfig, _pca_pool, train


class PixelCentering(BaseEstimator, TransformerMixin):
    """Stateless row-wise centring of a (n_pixels, n_t) signal matrix."""

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        X = check_array(X, dtype=np.float64)
        return X - X.mean(axis=1, keepdims=True)


class MaskedAutoencoderAdapter(BaseEstimator, TransformerMixin):
    """Masked denoising autoencoder trained online on one sequence's pixels.

    ``fit`` takes centred pixel signals ``(n_pixels, n_t)``; ``transform``
    returns their latent codes ``(n_pixels, latent_dim)``. Use
    :meth:`pool_image` to get a single aligned image back.

    Parameters mirror :class:`TrainConfig`, :class:`MaskSpec` and
    :class:`ArchSpec`.
    """

    def __init__(
        self,
        latent_dim=10,
        learning_rate=1e-3,
        batch_size=32,
        epochs=100,
        patch_len=16,
        mask_ratio=0.5,
        noise_std=0.1,
        max_pixels=1024,
        input_len=256,
        channels=(8, 16, 32),
        signal_norm="rms",
        attention=True,
        random_state=0,
    ):
        self.latent_dim = latent_dim
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.patch_len = patch_len
        self.mask_ratio = mask_ratio
        self.noise_std = noise_std
        self.max_pixels = max_pixels
        self.input_len = input_len
        self.channels = channels
        self.signal_norm = signal_norm
        self.attention = attention
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            latent_dim=self.latent_dim,
            mask=MaskSpec(self.patch_len, self.mask_ratio, self.noise_std, self.random_state),
            seed=self.random_state,
            max_pixels=self.max_pixels,
            arch=ArchSpec(
                input_len=self.input_len,
                channels=tuple(self.channels),
                attention=self.attention,
                signal_norm=self.signal_norm,
                latent_dim=self.latent_dim,
            ),
        )

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        std = StandardizedSequence(X, np.zeros(X.shape[0]), (X.shape[1], X.shape[0], 1))
        self.model_, self.loss_history_ = train(std, self._config())
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return self.model_.encode_signals(X)

    def pool_image(self, X, shape, pooling="avg"):
        """Latents of ``X`` reshaped to ``shape`` and pooled over channels."""
        if pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}")
        stack = self.transform(X).T.reshape((self.latent_dim,) + tuple(shape))
        if pooling == "avg":
            return stack.mean(axis=0)
        if pooling == "max":
            return stack.max(axis=0)
        return _pca_pool(stack)
