"""scikit-learn style wrappers around the training and inference pipeline.

Frames go in as a 2-D array, an ``(N, H, W)`` stack or a list of frames;
``transform`` returns an ``(N, H, W)`` float64 stack.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DimMismatch, InvariantViolation
from .imagecore import as_array
from .pipeline import (
    DatasetSplit,
    RecurrentConfig,
    TrainConfig,
    compute_masks,
    enhance_recurrent,
    train_self_supervised,
    train_supervised_reference,
)
from .rldeconv import DEFAULT_ITERATIONS, richardson_lucy
from .simulate import psf_from_dict

DEFAULT_PSF = {"kind": "gaussian", "fwhm_um": 7.0, "pitch_z_um": 1.75, "support_px": 21}


def check_frames(X, name="X") -> np.ndarray:
    """Validate frames and return a float64 ``(N, H, W)`` stack."""
    if isinstance(X, (list, tuple)):
        arrs = [as_array(f) for f in X]
        if not arrs:
            raise InvariantViolation(f"{name} holds no frames")
        if len({a.shape for a in arrs}) != 1:
            raise DimMismatch(f"{name} frames differ in shape")
        a = np.stack(arrs)
    else:
        a = np.asarray(as_array(X) if not isinstance(X, np.ndarray) else X, dtype=np.float64)
        if a.ndim == 2:
            a = a[None]
    if a.ndim != 3 or 0 in a.shape:
        raise DimMismatch(f"{name} must be a frame or a non-empty (N, H, W) stack, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvariantViolation(f"{name} contains non-finite values")
    if np.any(a < 0):
        raise InvariantViolation(f"{name} contains negative intensities")
    return a.astype(np.float64, copy=False)


class _NetworkTransformer(TransformerMixin, BaseEstimator):
    def _config(self, regime, variant) -> TrainConfig:
        return TrainConfig(
            regime=regime, variant=variant, weights=getattr(self, "weights", None),
            lr=self.lr, epochs=self.epochs, batch_size=self.batch_size,
            g=getattr(self, "g", 1), psf=dict(getattr(self, "psf", None) or DEFAULT_PSF),
            seed=self.seed,
            model={"depth": self.depth, "base_channels": self.base_channels},
            dtype=self.dtype,
        )

    def transform(self, X):
        check_is_fitted(self, "checkpoint_")
        X = check_frames(X)
        rc = RecurrentConfig(self.recurrent_steps, self.blend_input)
        return np.stack([as_array(enhance_recurrent(self.checkpoint_, x, rc)[0]) for x in X])


class OPressEnhancer(_NetworkTransformer):
    """Self-supervised axial resolution enhancer.

    Parameters
    ----------
    regime : {"known_psf_ei", "unknown_psf_ei_fs"}
        With a known PSF ``X`` must already be the blurred observations.
    variant : str, optional
        ``model_ei``, ``model_s`` or ``model_r``; picks the loss weights and
        learning rate unless those are given.
    psf : dict, optional
        PSF description; in the unknown-PSF regime only its FWHM, pitch and
        support are used to build the Gaussian estimate.
    recurrent_steps, blend_input
        Inference schedule used by ``transform``; one step is a single pass.
    """

    def __init__(self, regime="unknown_psf_ei_fs", variant=None, psf=None, depth=3,
                 base_channels=16, epochs=50, batch_size=8, lr=None, weights=None, g=4,
                 tau=3.0, recurrent_steps=1, blend_input=0.3, seed=0, dtype="float32"):
        self.regime = regime
        self.variant = variant
        self.psf = psf
        self.depth = depth
        self.base_channels = base_channels
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weights = weights
        self.g = g
        self.tau = tau
        self.recurrent_steps = recurrent_steps
        self.blend_input = blend_input
        self.seed = seed
        self.dtype = dtype

    def fit(self, X, y=None):
        X = check_frames(X)
        config = self._config(self.regime, self.variant)
        config.tau = self.tau
        masks = compute_masks(list(X), self.tau, config.bilateral_params(),
                              fallback=config.regime == "known_psf_ei")
        self.checkpoint_, self.history_ = train_self_supervised(
            config, list(X), masks, config.training_psf())
        self.config_ = config
        return self


class SupervisedEnhancer(_NetworkTransformer):
    """The same network trained on (input, ground truth) pairs; the reference upper bound."""

    def __init__(self, depth=3, base_channels=16, epochs=50, batch_size=8, lr=5e-4,
                 recurrent_steps=1, blend_input=0.3, seed=0, dtype="float32"):
        self.depth = depth
        self.base_channels = base_channels
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.recurrent_steps = recurrent_steps
        self.blend_input = blend_input
        self.seed = seed
        self.dtype = dtype

    def fit(self, X, y):
        X = check_frames(X)
        Y = check_frames(y, "y")
        if X.shape != Y.shape:
            raise DimMismatch(f"X {X.shape} and y {Y.shape} differ")
        config = self._config("known_psf_ei", "model_ei")
        self.checkpoint_ = train_supervised_reference(config, DatasetSplit(list(Y)), list(X))
        self.history_ = self.checkpoint_.history
        return self


class RichardsonLucyDeconvolver(TransformerMixin, BaseEstimator):
    """Richardson-Lucy baseline; stateless, so ``fit`` only validates."""

    def __init__(self, psf=None, iterations=DEFAULT_ITERATIONS, epsilon=1e-12):
        self.psf = psf
        self.iterations = iterations
        self.epsilon = epsilon

    def fit(self, X, y=None):
        check_frames(X)
        self.psf_ = psf_from_dict(self.psf or DEFAULT_PSF)
        return self

    def transform(self, X):
        check_is_fitted(self, "psf_")
        X = check_frames(X)
        return np.stack([richardson_lucy(x, self.psf_, self.iterations, self.epsilon) for x in X])
