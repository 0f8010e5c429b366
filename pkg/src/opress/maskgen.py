"""Free-space / tissue masks from a thresholded axial gradient.

Pipeline: bilateral smoothing, absolute axial first difference, and a
per-column first-crossing rule that produces one surface per A-line.
Mask value 1 marks tissue (foreground), 0 marks free space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import DimMismatch, InvariantViolation, NoSurfaceFound
from .imagecore import as_array, like

# The threshold is quoted on an 8-bit display scale; frames live in [0, 1].
DISPLAY_LEVELS = 255.0
DEFAULT_TAU = 3.0


@dataclass(frozen=True)
class BilateralParams:
    sigma_spatial: float = 3.0
    sigma_range: float = 0.1
    radius: int = 7

    def __post_init__(self):
        if not (self.sigma_spatial > 0 and self.sigma_range > 0 and self.radius > 0):
            raise InvariantViolation("bilateral parameters must be positive")
        if self.radius < math.ceil(2 * self.sigma_spatial):
            raise InvariantViolation("radius must be >= ceil(2 * sigma_spatial)")


@dataclass(frozen=True)
class Mask:
    """Monotone-column binary mask plus the surface row of every column.

    ``missing_columns`` lists the columns where no surface was detected;
    those columns are all tissue (surface row 0).
    """

    data: np.ndarray
    surface_rows: np.ndarray
    missing_columns: tuple = ()

    def __post_init__(self):
        m = np.asarray(self.data)
        if m.ndim != 2 or not np.isin(m, (0, 1)).all():
            raise InvariantViolation("mask must be a 2-D {0,1} grid")
        if np.any(np.diff(m.astype(np.int8), axis=0) < 0):
            raise InvariantViolation("mask columns must be 0...0 followed by 1...1")
        m = m.astype(np.uint8)
        m.setflags(write=False)
        object.__setattr__(self, "data", m)

    @classmethod
    def from_surface(cls, surface_rows, rows, missing_columns=()) -> "Mask":
        surface = np.asarray(surface_rows, dtype=int)
        data = (np.arange(rows)[:, None] >= surface[None, :]).astype(np.uint8)
        return cls(data, surface, tuple(missing_columns))

    @property
    def shape(self):
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.data, dtype=dtype)


def _pad(a, radius, mode):
    modes = (mode, mode) if isinstance(mode, str) else tuple(mode)
    a = np.pad(a, ((radius, radius), (0, 0)), mode=modes[0])
    return np.pad(a, ((0, 0), (radius, radius)), mode=modes[1])


def bilateral_filter(frame, p: BilateralParams = BilateralParams(), mode="edge"):
    """Bilateral filter with Gaussian spatial and range kernels.

    ``mode`` is a numpy pad mode, or a ``(axial, lateral)`` pair of them;
    the default replicates edge pixels. ``sigma_range=inf`` reduces to a
    normalized Gaussian blur.
    """
    a = as_array(frame)
    r = p.radius
    padded = _pad(a, r, mode)
    rows, cols = a.shape
    num = np.zeros_like(a)
    den = np.zeros_like(a)
    inv_s = 1.0 / (2.0 * p.sigma_spatial**2)
    inv_r = 0.0 if math.isinf(p.sigma_range) else 1.0 / (2.0 * p.sigma_range**2)
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            nb = padded[r + di:r + di + rows, r + dj:r + dj + cols]
            w = math.exp(-(di * di + dj * dj) * inv_s)
            if inv_r:
                w = w * np.exp(-((nb - a) ** 2) * inv_r)
            num += w * nb
            den += w
    return like(frame, num / den)


def axial_gradient(frame):
    """|f(i+1, j) - f(i, j)| with the last row repeating the one above it."""
    a = as_array(frame)
    if a.shape[0] < 2:
        raise InvariantViolation("axial gradient needs at least two rows")
    g = np.empty_like(a)
    g[:-1] = np.abs(np.diff(a, axis=0))
    g[-1] = g[-2]
    return like(frame, g)


def detect_surface(frame, p: BilateralParams = BilateralParams(), tau=DEFAULT_TAU):
    """Per-column surface row, or -1 where nothing crosses the threshold.

    The lateral boundary wraps so the result follows circular lateral
    shifts of the input exactly.
    """
    if not tau > 0:
        raise InvariantViolation("tau must be positive")
    smooth = bilateral_filter(frame, p, mode=("edge", "wrap"))
    grad = axial_gradient(smooth)
    hits = grad > tau / DISPLAY_LEVELS
    found = hits.any(axis=0)
    # grad[i] measures the step between rows i and i+1, so tissue starts at i+1
    first = np.argmax(hits, axis=0) + 1
    return np.where(found, np.minimum(first, hits.shape[0] - 1), -1)


def generate_mask(frame, p: BilateralParams = BilateralParams(), tau=DEFAULT_TAU) -> Mask:
    """Free-space mask of one frame.

    Raises :class:`NoSurfaceFound` when more than half of the columns have
    no threshold crossing; otherwise such columns become all tissue and are
    listed in ``Mask.missing_columns``.
    """
    a = as_array(frame)
    surface = detect_surface(a, p, tau)
    missing = np.flatnonzero(surface < 0)
    if missing.size * 2 > a.shape[1]:
        raise NoSurfaceFound(
            f"{missing.size} of {a.shape[1]} columns have no surface", missing)
    surface = np.where(surface < 0, 0, surface)
    return Mask.from_surface(surface, a.shape[0], tuple(int(c) for c in missing))


def mask_apply(frame, mask, keep_foreground=True):
    a = as_array(frame)
    m = np.asarray(mask, dtype=a.dtype)
    if m.shape != a.shape:
        raise DimMismatch(f"mask {m.shape} does not match frame {a.shape}")
    return like(frame, a * (m if keep_foreground else 1.0 - m))
