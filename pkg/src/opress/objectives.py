"""Self-supervision losses.

All three terms are per-pixel mean squared errors over the whole batch:

* measurement consistency  ``mean(((I - H(Φ(I))) * M) ** 2)``
* equivariance             ``mean over g of mean((T_g Φ(I) - Φ(H(T_g Φ(I)))) ** 2)``
* free space               ``mean((Φ(I) * (1 - M)) ** 2)``

Gradients flow through both applications of Φ in the equivariance term.
Each public function returns ``(value, grads)`` where ``grads`` maps
parameter names to arrays shaped like ``model.params``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffnet import autodiff as ad
from .diffnet.model import Model, apply, bind, collect_grads
from .exceptions import DimMismatch, InvariantViolation
from .imagecore import BFrame
from .simulate import coverage_check


@dataclass(frozen=True)
class LossWeights:
    mc: float = 1.0
    ei: float = 1.0
    fs: float = 0.0

    def __post_init__(self):
        w = (self.mc, self.ei, self.fs)
        if any(x < 0 for x in w) or not any(x > 0 for x in w):
            raise InvariantViolation("loss weights must be >= 0 with at least one > 0")

    def as_tuple(self):
        return (self.mc, self.ei, self.fs)


@dataclass(frozen=True)
class ShiftBatch:
    shifts: tuple

    def __post_init__(self):
        object.__setattr__(self, "shifts", tuple(self.shifts))
        if not self.shifts:
            raise InvariantViolation("a shift batch needs at least one transform")

    def validate(self, rows, cols, n_object=None) -> None:
        for t in self.shifts:
            t.validate(rows, cols)
        if n_object is not None and not coverage_check(len(self.shifts), rows, n_object):
            raise InvariantViolation(
                f"{len(self.shifts)} shifts of {rows} rows cannot cover {n_object} samples")

    def __len__(self):
        return len(self.shifts)

    def __iter__(self):
        return iter(self.shifts)


@dataclass
class LossTerms:
    """Graph nodes for the individual terms (float64 scalars) and their total."""

    mc: ad.Tensor | None
    ei: ad.Tensor | None
    fs: ad.Tensor | None
    total: ad.Tensor

    def values(self) -> dict:
        out = {k: (float(getattr(self, k).value) if getattr(self, k) is not None else 0.0)
               for k in ("mc", "ei", "fs")}
        out["total"] = float(self.total.value)
        return out


def _stack(model, images):
    a = np.asarray(images.data if isinstance(images, BFrame) else images, dtype=model.dtype)
    return a[None] if a.ndim == 2 else a


def _mask_stack(mask, shape, dtype):
    m = np.asarray(mask, dtype=dtype)
    if m.ndim == 2 and m.shape == tuple(shape[-2:]):
        m = np.broadcast_to(m, shape)
    if m.shape != shape:
        raise DimMismatch(f"mask {m.shape} does not match frames {shape}")
    return m


def build_loss_graph(model: Model, images, psf, mask, shifts, weights: LossWeights, p=None):
    """Build the weighted objective on one graph; terms with zero weight are skipped.

    ``images`` is a frame or an ``(N, H, W)`` stack; ``mask`` matches it (a
    single 2-D mask is broadcast). Returns ``(LossTerms, bound_params)``.
    """
    x = _stack(model, images)
    if p is None:
        p = bind(model)
    inp = ad.leaf(x)
    y = apply(model, inp, p)
    mc = ei = fs = None
    if weights.mc > 0:
        m = _mask_stack(mask, x.shape, x.dtype)
        resid = ad.sub(inp, ad.axial_blur(y, psf))
        mc = ad.mean_square(ad.mul_const(resid, m))
    if weights.ei > 0:
        shifts = shifts if isinstance(shifts, ShiftBatch) else ShiftBatch(shifts)
        shifts.validate(*x.shape[-2:])
        ty = ad.roll_stack(y, shifts)
        y2 = apply(model, ad.axial_blur(ty, psf), p)
        ei = ad.mean_square(ad.sub(ty, y2))
    if weights.fs > 0:
        m = _mask_stack(mask, x.shape, x.dtype)
        fs = ad.mean_square(ad.mul_const(y, 1.0 - m))
    used = [(t, w) for t, w in ((mc, weights.mc), (ei, weights.ei), (fs, weights.fs))
            if t is not None]
    total = ad.weighted_sum([t for t, _ in used], [w for _, w in used])
    return LossTerms(mc, ei, fs, total), p


def _evaluate(model, images, psf, mask, shifts, weights):
    terms, p = build_loss_graph(model, images, psf, mask, shifts, weights)
    ad.backward(terms.total)
    return terms, collect_grads(p)


def mc_loss(images, model, psf, mask):
    terms, grads = _evaluate(model, images, psf, mask, None, LossWeights(1.0, 0.0, 0.0))
    return float(terms.mc.value), grads


def ei_loss(images, model, psf, shifts):
    terms, grads = _evaluate(model, images, psf, None, shifts, LossWeights(0.0, 1.0, 0.0))
    return float(terms.ei.value), grads


def fs_loss(images, model, mask):
    terms, grads = _evaluate(model, images, None, mask, None, LossWeights(0.0, 0.0, 1.0))
    return float(terms.fs.value), grads


def total_loss(images, model, psf, mask, shifts, weights: LossWeights):
    """Weighted sum of the three terms and its gradient."""
    terms, grads = _evaluate(model, images, psf, mask, shifts, weights)
    return float(terms.total.value), grads
