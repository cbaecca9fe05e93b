"""scikit-learn style wrapper: ``fit`` trains on images, ``transform`` embeds them."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .backbone import ModelConfig
from .data.images import to_chw
from .exceptions import ValidationError
from .losses import LossWeights
from .trainer import TrainConfig, TrainSet, embed_all, run_training


def check_images(X, image_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Coerce ``X`` to float32 ``N x 3 x H x W`` in [0, 1] and check its geometry."""
    arr = np.asarray(X)
    if arr.size == 0:
        raise ValidationError("no images given")
    if arr.dtype != np.uint8:
        if not np.issubdtype(arr.dtype, np.floating) and not np.issubdtype(arr.dtype, np.integer):
            raise ValidationError(f"images must be numeric, got dtype {arr.dtype}")
        if not np.all(np.isfinite(arr)):
            raise ValidationError("images contain NaN or inf")
    out = to_chw(arr)
    if arr.dtype != np.uint8 and (out.min() < 0.0 or out.max() > 1.0):
        raise ValidationError("float images must lie in [0, 1]")
    if image_shape is not None and out.shape[2:] != tuple(image_shape):
        raise ValidationError(f"expected images of size {tuple(image_shape)}, got {out.shape[2:]}")
    return out


def check_modality(modality, n: int) -> np.ndarray:
    """Accept a scalar (broadcast) or one entry per sample, each 0 (optical) or 1 (SAR)."""
    if modality is None:
        raise ValidationError("modality is required (0 = optical, 1 = SAR)")
    m = np.asarray(modality)
    if m.ndim == 0:
        m = np.full(n, int(m), dtype=np.int64)
    if m.shape != (n,):
        raise ValidationError(f"modality must have shape ({n},), got {m.shape}")
    if not np.isin(m, (0, 1)).all():
        raise ValidationError("modality entries must be 0 or 1")
    return m.astype(np.int64)


def check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValidationError(f"y must have shape ({n},), got {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        raise ValidationError("identity labels must be integers")
    return y.astype(np.int64)


class SDFNetReID(TransformerMixin, BaseEstimator):
    """Cross-modal ship re-identification embedder.

    ``fit(X, y, modality=...)`` trains from scratch; ``transform(X, modality=...)``
    returns L2-normalised embeddings suitable for cosine retrieval.
    """

    def __init__(self, epochs=30, lr_base=0.05, weight_decay=1e-4, momentum=0.0, P=4, K=4,
                 scl_on=True, dfl_on=True, fusion_mode="additive", struct_layer=3,
                 layers=6, dim=64, heads=4, patch=8, lambda_orth=10.0, lambda_struct=1.0,
                 label_smoothing=0.1, augment=True, dtype="float32", random_state=0):
        self.epochs = epochs
        self.lr_base = lr_base
        self.weight_decay = weight_decay
        self.momentum = momentum
        self.P = P
        self.K = K
        self.scl_on = scl_on
        self.dfl_on = dfl_on
        self.fusion_mode = fusion_mode
        self.struct_layer = struct_layer
        self.layers = layers
        self.dim = dim
        self.heads = heads
        self.patch = patch
        self.lambda_orth = lambda_orth
        self.lambda_struct = lambda_struct
        self.label_smoothing = label_smoothing
        self.augment = augment
        self.dtype = dtype
        self.random_state = random_state

    def _train_config(self, image_hw, num_identities) -> TrainConfig:
        model = ModelConfig(image_h=image_hw[0], image_w=image_hw[1], patch=self.patch,
                            layers=self.layers, dim=self.dim, heads=self.heads,
                            struct_layer=self.struct_layer, num_identities=num_identities)
        loss = LossWeights(self.lambda_orth, self.lambda_struct, self.label_smoothing)
        return TrainConfig(lr_base=self.lr_base, weight_decay=self.weight_decay, momentum=self.momentum,
                           epochs=self.epochs, P=self.P, K=self.K, scl_on=self.scl_on, dfl_on=self.dfl_on,
                           fusion_mode=self.fusion_mode, augment=self.augment, seed=int(self.random_state),
                           dtype=self.dtype, model=model, loss=loss)

    def fit(self, X, y, modality=None):
        X = check_images(X)
        y = check_labels(y, X.shape[0])
        m = check_modality(modality, X.shape[0])
        data = TrainSet.from_arrays(X, y, m)
        cfg = self._train_config(X.shape[2:], data.num_identities)
        log: list = []
        self.model_, self.checkpoint_, _ = run_training(cfg, data, log=log)
        self.train_log_ = log
        self.classes_ = data.identities
        self.image_shape_ = tuple(X.shape[2:])
        self.n_features_out_ = self.model_.feature_dim
        return self

    def transform(self, X, modality=None):
        check_is_fitted(self, "model_")
        X = check_images(X, self.image_shape_)
        m = check_modality(modality, X.shape[0])
        return embed_all(self.model_, X, m)

    def fit_transform(self, X, y=None, modality=None):
        # TransformerMixin would drop ``modality`` on the way to transform
        return self.fit(X, y, modality=modality).transform(X, modality=modality)
