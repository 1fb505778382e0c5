"""scikit-learn style estimators so the regressor and the patch pipeline
compose with Pipelines, grid search and the rest of the ecosystem.

`PoseRegressor.fit(X, y)` trains on normalized patches/labels;
`DepthPatchExtractor.transform` turns DepthFrames into network-ready
patches. Both expose get_params/set_params via BaseEstimator.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin

from .data import TrainingSet
from .model import DEFAULT_CHANNELS, Model, ModelSpec
from .preprocess import PreprocessConfig, preprocess_frame
from .train import TrainConfig, train

__all__ = ["PoseRegressor", "DepthPatchExtractor"]


def _validate_patches(X, input_size):
    """Accept (N, S, S), (N, 1, S, S) or flat (N, S*S); return (N, 1, S, S)."""
    arr = np.asarray(X, dtype=np.float32)
    if arr.ndim == 2 and arr.shape[1] == input_size * input_size:
        arr = arr.reshape(-1, 1, input_size, input_size)
    elif arr.ndim == 3:
        arr = arr[:, None]
    if arr.ndim != 4 or arr.shape[1:] != (1, input_size, input_size):
        raise ValueError(
            f"X must be (N, {input_size}, {input_size}) patches "
            f"(optionally flat or with a channel axis), got {np.shape(X)}"
        )
    if arr.shape[0] == 0:
        raise ValueError("X has no samples")
    if not np.isfinite(arr).all():
        raise ValueError("X contains non-finite values")
    return arr


class PoseRegressor(RegressorMixin, BaseEstimator):
    """Direct coordinate regression on depth patches.

    X: patches in [-1, 1], shape (N, S, S), (N, 1, S, S) or (N, S*S).
    y: cube-normalized joint coordinates, shape (N, 3*joints).
    Predictions are in the same normalized space; convert to world mm with
    the owning crop's denormalization.
    """

    def __init__(
        self,
        variant="region-ensemble",
        joints=16,
        grid_n=2,
        fc_dim=2048,
        fc2_dim=None,
        channels=DEFAULT_CHANNELS,
        input_size=96,
        dropout=0.5,
        batch_size=128,
        lr0=0.005,
        lr_drop_every=50000,
        lr_factor=10.0,
        max_iters=200000,
        weight_decay=0.0005,
        momentum=0.9,
        seed=0,
    ):
        self.variant = variant
        self.joints = joints
        self.grid_n = grid_n
        self.fc_dim = fc_dim
        self.fc2_dim = fc2_dim
        self.channels = channels
        self.input_size = input_size
        self.dropout = dropout
        self.batch_size = batch_size
        self.lr0 = lr0
        self.lr_drop_every = lr_drop_every
        self.lr_factor = lr_factor
        self.max_iters = max_iters
        self.weight_decay = weight_decay
        self.momentum = momentum
        self.seed = seed

    def _spec(self):
        return ModelSpec(
            variant=self.variant,
            joints=self.joints,
            grid_n=self.grid_n,
            fc_dim=self.fc_dim,
            fc2_dim=self.fc2_dim,
            channels=tuple(tuple(p) for p in self.channels),
            input_size=self.input_size,
            dropout=self.dropout,
        )

    def _train_config(self):
        return TrainConfig(
            batch_size=self.batch_size,
            lr0=self.lr0,
            lr_drop_every=self.lr_drop_every,
            lr_factor=self.lr_factor,
            max_iters=self.max_iters,
            weight_decay=self.weight_decay,
            momentum=self.momentum,
            seed=self.seed,
            augment=False,  # plain arrays carry no crop transforms
        )

    def fit(self, X, y):
        X = _validate_patches(X, self.input_size)
        y = np.asarray(y, dtype=np.float32)
        spec = self._spec()
        if y.ndim != 2 or y.shape[1] != spec.output_dim:
            raise ValueError(f"y must be (N, {spec.output_dim}), got {np.shape(y)}")
        if len(X) != len(y):
            raise ValueError(f"X and y disagree on sample count: {len(X)} vs {len(y)}")
        dataset = TrainingSet(X[:, 0], y)
        result = train(Model(spec, seed=self.seed), dataset, self._train_config())
        self.model_ = result.model
        self.history_ = result.history
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def predict(self, X):
        if not hasattr(self, "model_"):
            raise RuntimeError("this PoseRegressor is not fitted yet; call fit first")
        X = _validate_patches(X, self.input_size)
        return self.model_.predict(X)


class DepthPatchExtractor(TransformerMixin, BaseEstimator):
    """DepthFrame -> normalized cube-crop patch, as a transformer.

    Stateless (fit is a no-op). `transform` returns (N, 1, S, S) patches;
    `extract` additionally returns the CropResults needed to map network
    outputs back to world millimeters.
    """

    def __init__(self, cube_mm=150.0, out_size=96, near_mm=100.0, far_mm=700.0):
        self.cube_mm = cube_mm
        self.out_size = out_size
        self.near_mm = near_mm
        self.far_mm = far_mm

    def _config(self):
        return PreprocessConfig(
            cube_mm=self.cube_mm,
            out_size=self.out_size,
            near_mm=self.near_mm,
            far_mm=self.far_mm,
        )

    def fit(self, X, y=None):
        return self

    def extract(self, frames):
        cfg = self._config()
        crops = [preprocess_frame(f, cfg) for f in frames]
        patches = np.stack([c.patch for c in crops])[:, None]
        return patches, crops

    def transform(self, X):
        patches, _ = self.extract(X)
        return patches
