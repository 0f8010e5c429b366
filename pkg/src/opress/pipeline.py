"""Training regimes, dataset splitting and inference.

Two self-supervised regimes are supported:

``known_psf_ei``
    Ground-truth frames are blurred with the known PSF to form the inputs;
    the network minimizes MC + EI with that same PSF inside the losses.
``unknown_psf_ei_fs``
    Observed frames are used directly; the PSF is a Gaussian estimate
    (narrowed for the ``model_r`` variant) and all three losses are used
    with masks computed once per frame.

Only :func:`train` touches ground truth, and only to synthesize inputs in
the known-PSF regime. :func:`train_self_supervised` sees inputs and masks.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .diffnet import autodiff as ad
from .diffnet.adam import AdamState, adam_step
from .diffnet.checkpoint import Checkpoint
from .diffnet.model import Model, apply, bind, build_model, collect_grads, forward
from .exceptions import InvariantViolation, NoSurfaceFound, NonFiniteLoss, TooFewFrames
from .imagecore import as_array, like
from .maskgen import BilateralParams, generate_mask
from .objectives import LossWeights, ShiftBatch, build_loss_graph
from .simulate import (
    Psf,
    add_noise,
    axial_interpolate,
    degrade,
    gaussian_psf,
    psf_from_dict,
    random_shifts,
)

log = logging.getLogger(__name__)

REGIMES = ("known_psf_ei", "unknown_psf_ei_fs")
VARIANT_DEFAULTS = {
    # variant: (regime, weights, lr)
    "model_ei": ("known_psf_ei", (1.0, 1.0, 0.0), 5e-4),
    "model_s": ("unknown_psf_ei_fs", (1.0, 10.0, 10.0), 5e-4),
    "model_r": ("unknown_psf_ei_fs", (1.0, 10.0, 10.0), 1e-3),
}
NARROW_PSF_FACTOR = 0.5


@dataclass
class TrainConfig:
    regime: str = "known_psf_ei"
    variant: str | None = None
    weights: tuple | None = None
    lr: float | None = None
    epochs: int = 50
    batch_size: int = 8
    g: int = 4
    psf: dict = field(default_factory=lambda: {
        "kind": "gaussian", "fwhm_um": 7.0, "pitch_z_um": 1.75, "support_px": 21})
    psf_narrowing: float | None = None
    noise_sigma: float = 0.0
    interpolation_factor: int | None = None
    shift_axes: str = "both"
    seed: int = 0
    model: dict = field(default_factory=lambda: {"depth": 3, "base_channels": 16})
    dtype: str = "float32"
    tau: float = 3.0
    bilateral: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise InvariantViolation(f"regime must be one of {REGIMES}")
        if self.variant is None:
            self.variant = "model_ei" if self.regime == "known_psf_ei" else "model_s"
        if self.variant not in VARIANT_DEFAULTS:
            raise InvariantViolation(f"unknown variant {self.variant!r}")
        if VARIANT_DEFAULTS[self.variant][0] != self.regime:
            raise InvariantViolation(f"variant {self.variant} belongs to another regime")
        _, weights, lr = VARIANT_DEFAULTS[self.variant]
        if self.weights is None:
            self.weights = weights
        self.weights = tuple(float(w) for w in self.weights)
        LossWeights(*self.weights)
        if self.lr is None:
            self.lr = lr
        if self.psf_narrowing is None:
            self.psf_narrowing = NARROW_PSF_FACTOR if self.variant == "model_r" else 1.0
        if self.epochs < 0 or self.batch_size < 1 or self.g < 1 or self.lr < 0:
            raise InvariantViolation("epochs >= 0, batch_size >= 1, g >= 1 and lr >= 0 required")

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(*self.weights)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = list(self.weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if d.get("weights") is not None:
            d["weights"] = tuple(d["weights"])
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def build_model(self) -> Model:
        spec = dict(self.model)
        return build_model(seed=self.seed, dtype=self.dtype, **spec)

    def training_psf(self) -> Psf:
        """The PSF used inside the losses for this regime."""
        if self.regime == "known_psf_ei":
            return psf_from_dict(self.psf)
        p = self.psf
        return gaussian_psf(p["fwhm_um"] * self.psf_narrowing, p["pitch_z_um"], p["support_px"])

    def bilateral_params(self) -> BilateralParams:
        return BilateralParams(**self.bilateral)


@dataclass
class DatasetSplit:
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)
    test: list = field(default_factory=list)
    folds: list | None = None

    def fold(self, i: int) -> "DatasetSplit":
        """Hold out fold ``i`` as validation and train on the remaining folds."""
        if self.folds is None:
            raise InvariantViolation("split was not made with k folds")
        train = [f for j, fold in enumerate(self.folds) if j != i for f in fold]
        return DatasetSplit(train, list(self.folds[i]), list(self.test))


def split_dataset(frames, ratios=None, k=None, seed=0, sizes=None) -> DatasetSplit:
    """Seeded shuffle, then partition by ``ratios``, exact ``sizes`` or ``k`` folds.

    Ratio parts are floored and the remainder goes to the training part.
    """
    frames = list(frames)
    n = len(frames)
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [frames[i] for i in order]
    if k is not None:
        if k < 2 or n < k:
            raise TooFewFrames(f"cannot make {k} folds from {n} frames")
        bounds = np.linspace(0, n, k + 1).round().astype(int)
        folds = [shuffled[bounds[i]:bounds[i + 1]] for i in range(k)]
        return DatasetSplit(folds=folds)
    if sizes is None:
        ratios = (0.75, 0.17, 0.08) if ratios is None else tuple(ratios)
        if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1) > 1e-9:
            raise InvariantViolation("ratios must be three non-negative numbers summing to 1")
        n_val = int(math.floor(ratios[1] * n + 1e-9))
        n_test = int(math.floor(ratios[2] * n + 1e-9))
        sizes = (n - n_val - n_test, n_val, n_test)
        wanted = ratios
    else:
        wanted = sizes
    n_train, n_val, n_test = (int(s) for s in sizes)
    if n_train + n_val + n_test > n:
        raise TooFewFrames(f"need {n_train + n_val + n_test} frames, have {n}")
    if any(w > 0 and s == 0 for w, s in zip(wanted, (n_train, n_val, n_test))):
        raise TooFewFrames(f"{n} frames leave an empty partition")
    return DatasetSplit(shuffled[:n_train], shuffled[n_train:n_train + n_val],
                        shuffled[n_train + n_val:n_train + n_val + n_test])


# --- training ------------------------------------------------------------------

def _stack(frames, dtype):
    return np.stack([as_array(f) for f in frames]).astype(dtype)


def compute_masks(frames, tau=3.0, params: BilateralParams | None = None, fallback=False):
    """One mask per frame. With ``fallback`` a frame without a surface gets an all-ones mask."""
    params = params or BilateralParams()
    masks = []
    for f in frames:
        try:
            masks.append(np.asarray(generate_mask(f, params, tau), dtype=np.float64))
        except NoSurfaceFound:
            if not fallback:
                raise
            masks.append(np.ones(as_array(f).shape))
    return masks


def prepare_inputs(config: TrainConfig, frames):
    """Interpolate (if configured) and, in the known-PSF regime, blur and add noise."""
    frames = [as_array(f) for f in frames]
    if config.interpolation_factor:
        frames = [as_array(axial_interpolate(f, config.interpolation_factor)) for f in frames]
    if config.regime != "known_psf_ei":
        return frames
    psf = psf_from_dict(config.psf)
    out = []
    for i, f in enumerate(frames):
        low = as_array(degrade(f, psf))
        if config.noise_sigma > 0:
            low = as_array(add_noise(low, config.noise_sigma, [config.seed, i]))
        out.append(low)
    return out


def _epoch_batches(rng, n, batch_size):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def train_self_supervised(config: TrainConfig, inputs, masks, psf: Psf,
                          model: Model | None = None, adam: AdamState | None = None,
                          start_epoch=0, history=None, epoch_callback=None):
    """Minimize the weighted self-supervised objective; returns ``(Checkpoint, history)``.

    Every epoch draws its batch order and shifts from
    ``default_rng([seed, epoch])``, so a run resumed from an epoch-boundary
    checkpoint reproduces the uninterrupted run bit for bit.
    """
    model = config.build_model() if model is None else model
    adam = AdamState.for_model(model, lr=config.lr) if adam is None else adam
    history = [] if history is None else list(history)
    x_all = _stack(inputs, model.dtype)
    m_all = _stack(masks, model.dtype)
    n, rows, cols = x_all.shape
    weights = config.loss_weights
    step = adam.t
    for epoch in range(start_epoch, config.epochs):
        rng = np.random.default_rng([config.seed, epoch])
        sums = dict.fromkeys(("mc", "ei", "fs", "total"), 0.0)
        for idx in _epoch_batches(rng, n, config.batch_size):
            shifts = ShiftBatch(random_shifts(rng, config.g, rows, cols, config.shift_axes))
            terms, p = build_loss_graph(model, x_all[idx], psf, m_all[idx], shifts, weights)
            vals = terms.values()
            if not all(math.isfinite(v) for v in vals.values()):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}, step {step}: {vals}")
            ad.backward(terms.total)
            adam_step(model, collect_grads(p), adam)
            step += 1
            for k in sums:
                sums[k] += vals[k] * len(idx) / n
        row = {"epoch": epoch, **sums}
        history.append(row)
        log.info("epoch %d  mc=%.6g ei=%.6g fs=%.6g total=%.6g", epoch, sums["mc"],
                 sums["ei"], sums["fs"], sums["total"])
        if epoch_callback is not None:
            epoch_callback(Checkpoint(model, step, epoch + 1, config.to_dict(), adam, history))
    ckpt = Checkpoint(model, step, config.epochs, config.to_dict(), adam, history)
    return ckpt, history


def train(config: TrainConfig, split: DatasetSplit, resume: Checkpoint | None = None,
          epoch_callback=None):
    """Train on ``split.train``; see the module docstring for the two regimes."""
    if not split.train:
        raise TooFewFrames("training split is empty")
    inputs = prepare_inputs(config, split.train)
    masks = compute_masks(inputs, config.tau, config.bilateral_params(),
                          fallback=config.regime == "known_psf_ei")
    kwargs = {}
    if resume is not None:
        kwargs = dict(model=resume.model, adam=resume.adam, start_epoch=resume.epoch,
                      history=resume.history)
    return train_self_supervised(config, inputs, masks, config.training_psf(),
                                 epoch_callback=epoch_callback, **kwargs)


def train_supervised_reference(config: TrainConfig, split: DatasetSplit,
                               inputs=None) -> Checkpoint:
    """Same network trained on (input, ground truth) pairs with a plain MSE loss.

    Inputs default to the known-PSF synthesis applied to ``split.train``.
    """
    targets = [as_array(f) for f in split.train]
    if config.interpolation_factor:
        targets = [as_array(axial_interpolate(f, config.interpolation_factor)) for f in targets]
    if inputs is None:
        inputs = prepare_inputs(replace(config, regime="known_psf_ei", variant="model_ei"),
                                split.train)
    model = config.build_model()
    adam = AdamState.for_model(model, lr=config.lr)
    x_all = _stack(inputs, model.dtype)
    y_all = _stack(targets, model.dtype)
    history = []
    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, epoch])
        total = 0.0
        for idx in _epoch_batches(rng, len(x_all), config.batch_size):
            p = bind(model)
            out = apply(model, ad.leaf(x_all[idx]), p)
            loss = ad.mean_square(ad.sub(out, ad.leaf(y_all[idx])))
            if not math.isfinite(float(loss.value)):
                raise NonFiniteLoss(f"non-finite supervised loss at epoch {epoch}")
            ad.backward(loss)
            adam_step(model, collect_grads(p), adam)
            total += float(loss.value) * len(idx) / len(x_all)
        history.append({"epoch": epoch, "mse": total})
    return Checkpoint(model, adam.t, config.epochs, config.to_dict(), adam, history)


def supervised_loss(model: Model, inputs, targets) -> float:
    out = forward(model, _stack(inputs, model.dtype))
    return float(np.mean((out.astype(np.float64) - _stack(targets, np.float64)) ** 2))


def write_history_csv(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "L1", "L2", "L3", "total"))
        for row in history:
            w.writerow((row["epoch"], repr(row["mc"]), repr(row["ei"]), repr(row["fs"]),
                        repr(row["total"])))


# --- inference ------------------------------------------------------------------

@dataclass(frozen=True)
class RecurrentConfig:
    steps: int = 1
    blend_input: float = 0.3

    def __post_init__(self):
        if self.steps < 0:
            raise InvariantViolation("steps must be >= 0")
        if not 0 <= self.blend_input <= 1:
            raise InvariantViolation("blend_input must lie in [0, 1]")


def _model_of(checkpoint_or_model) -> Model:
    return checkpoint_or_model.model if isinstance(checkpoint_or_model, Checkpoint) \
        else checkpoint_or_model


def enhance(checkpoint, frame, autopad=True):
    """One forward pass. Frames whose size is not a multiple of ``2**depth``
    are wrap-padded and cropped back when ``autopad`` is set."""
    model = _model_of(checkpoint)
    a = as_array(frame)
    rows, cols = a.shape
    m = model.multiple
    pad_r, pad_c = (-rows) % m, (-cols) % m
    if autopad and (pad_r or pad_c):
        a = np.pad(a, ((0, pad_r), (0, pad_c)), mode="wrap")
    out = forward(model, a)[:rows, :cols].astype(np.float64)
    return like(frame, out)


def enhance_recurrent(checkpoint, frame, rc: RecurrentConfig = RecurrentConfig(), autopad=True):
    """``out_k = Φ(b * frame + (1 - b) * out_{k-1})`` with ``out_0 = frame``.

    Returns ``(final, [out_1, ..., out_steps])``.
    """
    x = as_array(frame)
    prev = x
    steps = []
    for _ in range(rc.steps):
        blended = x + (1.0 - rc.blend_input) * (prev - x)
        prev = as_array(enhance(checkpoint, blended, autopad))
        steps.append(like(frame, prev))
    return like(frame, prev.copy()), steps
