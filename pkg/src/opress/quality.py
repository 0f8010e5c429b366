"""Image quality metrics and resolution probes.

Conventions: population standard deviations, float64 accumulation, PSNR
capped at 160 dB for identical frames and ENL capped at 1e9 for
zero-variance regions so every value is finite in CSV output.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    ColOutOfRange,
    DimMismatch,
    FrameTooSmall,
    InvariantViolation,
    NoHalfCrossing,
    NonPositiveContrast,
    ZeroBackgroundVariance,
    ZeroDenominator,
)
from .imagecore import Roi, as_array

PSNR_CAP_DB = 160.0
ENL_CAP = 1e9
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = as_array(a)
    b = as_array(b)
    if a.shape != b.shape:
        raise DimMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak=1.0) -> float:
    if not peak > 0:
        raise InvariantViolation("peak must be positive")
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(peak * peak / mse))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA) -> np.ndarray:
    """Normalized 2-D Gaussian window (outer product of 1-D kernels)."""
    half = size // 2
    g = np.exp(-(np.arange(-half, half + 1) ** 2) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def _filter_valid(a, g1):
    k = g1.size
    v = np.lib.stride_tricks.sliding_window_view(a, k, axis=0) @ g1
    return np.lib.stride_tricks.sliding_window_view(v, k, axis=1) @ g1


def ssim_map(a, b, data_range=1.0) -> np.ndarray:
    """Local SSIM over every fully contained 11x11 Gaussian window."""
    a, b = _pair(a, b)
    if min(a.shape) < SSIM_WINDOW:
        raise FrameTooSmall(f"SSIM needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    half = SSIM_WINDOW // 2
    g1 = np.exp(-(np.arange(-half, half + 1) ** 2) / (2.0 * SSIM_SIGMA**2))
    g1 /= g1.sum()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = _filter_valid(a, g1)
    mu_b = _filter_valid(b, g1)
    var_a = _filter_valid(a * a, g1) - mu_a * mu_a
    var_b = _filter_valid(b * b, g1) - mu_b * mu_b
    cov = _filter_valid(a * b, g1) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, data_range=1.0) -> float:
    """Mean local SSIM; identical frames give exactly 1."""
    return float(np.mean(ssim_map(a, b, data_range)))


def epi(net_frame, orig_frame) -> float:
    """Edge preservation index: summed |axial first difference| of net over original."""
    n, o = _pair(net_frame, orig_frame)
    den = float(np.sum(np.abs(np.diff(o, axis=0))))
    if den == 0:
        raise ZeroDenominator("original frame has no axial variation")
    return float(np.sum(np.abs(np.diff(n, axis=0)))) / den


def _stats(frame, roi: Roi):
    v = roi.extract(frame)
    return float(np.mean(v)), float(np.std(v))


def enl(frame, roi: Roi) -> float:
    """Equivalent number of looks ``mean**2 / var`` over ``roi``; zero variance gives the cap."""
    mu, sd = _stats(frame, roi)
    if sd == 0:
        return ENL_CAP
    return min(ENL_CAP, mu * mu / (sd * sd))


def snr_db(frame, signal_roi: Roi, bg_roi: Roi) -> float:
    mu_s, _ = _stats(frame, signal_roi)
    _, sd_b = _stats(frame, bg_roi)
    if sd_b == 0:
        raise ZeroBackgroundVariance("background region has zero variance")
    return 10.0 * math.log10(mu_s * mu_s / (sd_b * sd_b)) if mu_s > 0 else -math.inf


def cnr_db(frame, signal_roi: Roi, bg_roi: Roi) -> float:
    mu_s, sd_s = _stats(frame, signal_roi)
    mu_b, sd_b = _stats(frame, bg_roi)
    if sd_b == 0:
        raise ZeroBackgroundVariance("background region has zero variance")
    if not mu_s > mu_b:
        raise NonPositiveContrast("signal mean does not exceed background mean")
    return 10.0 * math.log10((mu_s - mu_b) / math.sqrt(sd_s * sd_s + sd_b * sd_b))


def snr_cnr(frame, signal_roi: Roi, bg_roi: Roi):
    """``(SNR dB, CNR dB)`` with the background taken as the noise region."""
    return snr_db(frame, signal_roi, bg_roi), cnr_db(frame, signal_roi, bg_roi)


def fwhm_of_peak(aline, peak_index: int) -> float:
    """Full width at half maximum (pixels) with linear interpolation of both crossings."""
    v = np.asarray(aline, dtype=np.float64).ravel()
    p = int(peak_index)
    if not 0 <= p < v.size or not v[p] > 0:
        raise InvariantViolation("peak must be a positive sample inside the A-line")
    if (p > 0 and v[p - 1] > v[p]) or (p < v.size - 1 and v[p + 1] > v[p]):
        raise InvariantViolation(f"index {p} is not a local maximum")
    half = v[p] / 2.0
    i = p
    while i > 0 and v[i - 1] >= half:
        i -= 1
    if i == 0:
        raise NoHalfCrossing("no half-maximum crossing left of the peak")
    left = (i - 1) + (half - v[i - 1]) / (v[i] - v[i - 1])
    j = p
    while j < v.size - 1 and v[j + 1] >= half:
        j += 1
    if j == v.size - 1:
        raise NoHalfCrossing("no half-maximum crossing right of the peak")
    right = j + (v[j] - half) / (v[j] - v[j + 1])
    return right - left


def aline_spectrum(frame, col: int, avg_cols: int = 1) -> np.ndarray:
    """Normalized |DFT| (non-negative frequencies) of the mean of ``avg_cols`` A-lines."""
    a = as_array(frame)
    if avg_cols < 1 or avg_cols % 2 == 0:
        raise InvariantViolation("avg_cols must be odd and positive")
    h = avg_cols // 2
    if col - h < 0 or col + h >= a.shape[1]:
        raise ColOutOfRange(f"columns {col - h}..{col + h} outside 0..{a.shape[1] - 1}")
    mag = np.abs(np.fft.rfft(a[:, col - h:col + h + 1].mean(axis=1)))
    peak = mag.max()
    return mag / peak if peak > 0 else mag


def high_band_energy(spectrum) -> float:
    """Energy in the upper half of the frequency bins."""
    s = np.asarray(spectrum, dtype=np.float64)
    return float(np.sum(s[s.size // 2:] ** 2))


# --- reports -----------------------------------------------------------------

METRIC_COLUMNS = ("psnr", "ssim", "epi", "enl", "snr", "cnr")


@dataclass
class MetricsReport:
    """Per-frame metric rows plus mean/std aggregates (NaN marks a missing value)."""

    rows: list = field(default_factory=list)

    def add(self, frame: str, **values) -> None:
        row = {"frame": frame}
        for k in METRIC_COLUMNS:
            v = values.get(k)
            row[k] = math.nan if v is None else float(v)
        self.rows.append(row)

    def aggregate(self) -> dict:
        out = {}
        for stat, fn in (("mean", np.mean), ("std", np.std)):
            out[stat] = {}
            for k in METRIC_COLUMNS:
                vals = np.array([r[k] for r in self.rows if not math.isnan(r[k])])
                out[stat][k] = float(fn(vals)) if vals.size else math.nan
        return out

    def to_csv(self, path) -> None:
        agg = self.aggregate()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("frame",) + METRIC_COLUMNS)
            for r in self.rows:
                w.writerow([r["frame"]] + [_fmt(r[k]) for k in METRIC_COLUMNS])
            for stat in ("mean", "std"):
                w.writerow([stat] + [_fmt(agg[stat][k]) for k in METRIC_COLUMNS])


def _fmt(v) -> str:
    return "" if math.isnan(v) else repr(float(v))


def evaluate_frame(output, reference=None, original=None, signal_roi=None, bg_roi=None,
                   enl_roi=None) -> dict:
    """Every metric that the given inputs allow; failures leave the value as None."""
    vals = dict.fromkeys(METRIC_COLUMNS)
    if reference is not None:
        vals["psnr"] = psnr(output, reference)
        vals["ssim"] = ssim(output, reference)
    if original is not None:
        try:
            vals["epi"] = epi(output, original)
        except ZeroDenominator:
            pass
    if enl_roi is not None:
        vals["enl"] = enl(output, enl_roi)
    if signal_roi is not None and bg_roi is not None:
        try:
            vals["snr"] = snr_db(output, signal_roi, bg_roi)
            vals["cnr"] = cnr_db(output, signal_roi, bg_roi)
        except (ZeroBackgroundVariance, NonPositiveContrast):
            pass
    return vals
