"""FD-OCT acquisition physics and synthetic retina-like phantoms.

The degradation operator is a circular convolution along the depth axis,
which makes it commute exactly with circular shifts. A PSF tap at
``center_index + d`` moves energy from depth ``i`` to depth ``i + d``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import (
    EmptyReflectivity,
    InvariantViolation,
    KernelTooLarge,
    SpecInvalid,
    SupportTooSmall,
)
from .imagecore import ALine, BFrame, as_array, like, pitch_of

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


@dataclass(frozen=True)
class Psf:
    """Axial point spread function with unit L1 norm."""

    taps: np.ndarray
    center_index: int
    pitch_z_um: float = 1.0

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 1 or taps.size < 1:
            raise InvariantViolation("PSF taps must be a non-empty vector")
        if not np.all(np.isfinite(taps)) or np.any(taps < 0):
            raise InvariantViolation("PSF taps must be finite and non-negative")
        if abs(taps.sum() - 1.0) > 1e-12:
            raise InvariantViolation(f"PSF taps sum to {taps.sum()!r}, expected 1")
        if not 0 <= self.center_index < taps.size:
            raise InvariantViolation("PSF center index outside the taps")
        taps = taps.copy()
        taps.setflags(write=False)
        object.__setattr__(self, "taps", taps)
        object.__setattr__(self, "center_index", int(self.center_index))

    @property
    def support(self) -> int:
        return self.taps.size

    @classmethod
    def from_taps(cls, taps, center_index=None, pitch_z_um=1.0) -> "Psf":
        taps = np.asarray(taps, dtype=np.float64)
        if center_index is None:
            center_index = taps.size // 2
        return cls(taps / taps.sum(), center_index, pitch_z_um)

    def to_dict(self) -> dict:
        return {
            "kind": "taps",
            "taps": [float(t) for t in self.taps],
            "center_index": self.center_index,
            "pitch_z_um": self.pitch_z_um,
        }


def delta_psf(pitch_z_um=1.0, support_px=1) -> Psf:
    taps = np.zeros(support_px)
    taps[support_px // 2] = 1.0
    return Psf(taps, support_px // 2, pitch_z_um)


def _gaussian_taps(sigma_px, support_px, offset_px=0.0):
    half = support_px // 2
    i = np.arange(-half, half + 1, dtype=np.float64) - offset_px
    if sigma_px == 0:
        return (i == 0).astype(np.float64)
    return np.exp(-(i * i) / (2.0 * sigma_px * sigma_px))


def fwhm_to_sigma_px(fwhm_um, pitch_z_um) -> float:
    return fwhm_um / (FWHM_PER_SIGMA * pitch_z_um)


def _check_support(support_px, reach_px):
    if support_px < 3 or support_px % 2 == 0:
        raise SupportTooSmall(f"support must be odd and >= 3, got {support_px}")
    if support_px < reach_px:
        raise SupportTooSmall(f"support {support_px} px < required {reach_px:.2f} px")


def gaussian_psf(fwhm_um, pitch_z_um, support_px) -> Psf:
    """Gaussian PSF of the given FWHM sampled at ``pitch_z_um``.

    A FWHM below a tenth of the pitch degenerates to a delta.
    """
    return sidelobe_psf(fwhm_um, pitch_z_um, 0.0, 1, support_px)


def sidelobe_psf(fwhm_um, pitch_z_um, lobe_ratio, lobe_offset_px, support_px) -> Psf:
    """Gaussian main lobe plus one displaced side lobe of peak ratio ``lobe_ratio``."""
    if not fwhm_um > 0 or not pitch_z_um > 0:
        raise InvariantViolation("fwhm_um and pitch_z_um must be positive")
    if not 0 <= lobe_ratio < 1:
        raise InvariantViolation("lobe_ratio must lie in [0, 1)")
    if lobe_offset_px == 0:
        raise InvariantViolation("lobe_offset_px must be non-zero")
    sigma = 0.0 if fwhm_um < pitch_z_um / 10 else fwhm_to_sigma_px(fwhm_um, pitch_z_um)
    _check_support(support_px, 6 * sigma)
    if lobe_ratio > 0:
        _check_support(support_px, 2 * (abs(lobe_offset_px) + 3 * sigma) + 1)
    taps = _gaussian_taps(sigma, support_px)
    if lobe_ratio > 0:
        taps = taps + lobe_ratio * _gaussian_taps(sigma, support_px, lobe_offset_px)
    return Psf(taps / taps.sum(), support_px // 2, pitch_z_um)


def psf_from_dict(d: dict) -> Psf:
    kind = d.get("kind", "gaussian")
    if kind == "gaussian":
        return gaussian_psf(d["fwhm_um"], d["pitch_z_um"], d["support_px"])
    if kind == "sidelobe":
        return sidelobe_psf(d["fwhm_um"], d["pitch_z_um"], d["lobe_ratio"],
                            d["lobe_offset_px"], d["support_px"])
    if kind == "delta":
        return delta_psf(d.get("pitch_z_um", 1.0), d.get("support_px", 1))
    if kind == "taps":
        return Psf.from_taps(d["taps"], d.get("center_index"), d.get("pitch_z_um", 1.0))
    raise SpecInvalid(f"unknown PSF kind {kind!r}")


def load_psf(path) -> Psf:
    with open(path) as fh:
        return psf_from_dict(json.load(fh))


def _circular_axial(a, taps, center, axis, adjoint):
    out = np.zeros_like(a)
    sign = -1 if adjoint else 1
    for k, t in enumerate(taps):
        if t != 0.0:
            out += t * np.roll(a, sign * (k - center), axis=axis)
    return out


def convolve_axial(a, psf: Psf, axis=-2, adjoint=False) -> np.ndarray:
    """Circular convolution of ``a`` with ``psf`` along ``axis``.

    ``adjoint=True`` applies the transpose (circular correlation). Taps are
    accumulated in a fixed order, so results are bitwise reproducible.
    """
    a = np.asarray(a)
    if psf.support > a.shape[axis]:
        raise KernelTooLarge(f"PSF support {psf.support} exceeds {a.shape[axis]} samples")
    taps = psf.taps.astype(a.dtype) if np.issubdtype(a.dtype, np.floating) else psf.taps
    return _circular_axial(a, taps, psf.center_index, axis, adjoint)


def degrade(frame, psf: Psf):
    """The imaging operator H: blur every A-line with ``psf`` (circular)."""
    return like(frame, convolve_axial(as_array(frame), psf, axis=0))


def add_noise(frame, sigma, seed):
    """Additive i.i.d. Gaussian noise from ``numpy.random.default_rng(seed)``, clamped at 0."""
    if sigma < 0:
        raise InvariantViolation("sigma must be non-negative")
    a = as_array(frame)
    if sigma == 0:
        return like(frame, a.copy())
    rng = np.random.default_rng(seed)
    noisy = a + rng.normal(0.0, sigma, size=a.shape)
    return like(frame, np.maximum(noisy, 0.0))


def add_complex_noise(frame, sigma, seed, looks=1):
    """Magnitude-detection noise floor: ``mean over looks of |x + n_re + i n_im|``.

    ``n_re`` and ``n_im`` are i.i.d. zero-mean Gaussians of std ``sigma``, so
    signal-free pixels follow a Rayleigh law with a positive mean, as in the
    background of a detected OCT image.
    """
    if sigma < 0 or looks < 1:
        raise InvariantViolation("sigma must be non-negative and looks >= 1")
    a = as_array(frame)
    if sigma == 0:
        return like(frame, a.copy())
    rng = np.random.default_rng(seed)
    acc = np.zeros_like(a)
    for _ in range(int(looks)):
        acc += np.hypot(a + rng.normal(0.0, sigma, a.shape), rng.normal(0.0, sigma, a.shape))
    return like(frame, acc / looks)


@dataclass(frozen=True)
class ShiftTransform:
    """Circular shift by ``dz`` rows (depth) and ``dx`` columns (A-lines)."""

    dz: int = 0
    dx: int = 0

    def validate(self, rows, cols) -> None:
        if not (0 <= self.dz < rows and 0 <= self.dx < cols):
            raise InvariantViolation(f"{self} out of range for a {rows}x{cols} frame")

    def inverse(self, rows, cols) -> "ShiftTransform":
        return ShiftTransform((rows - self.dz) % rows, (cols - self.dx) % cols)

    def apply(self, a: np.ndarray, inverse=False) -> np.ndarray:
        s = -1 if inverse else 1
        return np.roll(a, (s * self.dz, s * self.dx), axis=(-2, -1))


def shift(frame, t: ShiftTransform):
    a = as_array(frame)
    t.validate(*a.shape)
    return like(frame, t.apply(a))


def random_shifts(rng, g, rows, cols, axes="both") -> list:
    """Draw ``g`` shift transforms uniformly; ``axes`` is 'both', 'lateral' or 'axial'."""
    out = []
    for _ in range(g):
        dz = int(rng.integers(rows)) if axes in ("both", "axial") else 0
        dx = int(rng.integers(cols)) if axes in ("both", "lateral") else 0
        out.append(ShiftTransform(dz, dx))
    return out


def coverage_check(g, m, n) -> bool:
    """True when ``g`` shifted observations of size ``m`` can span size ``n``."""
    if min(g, m, n) <= 0:
        raise InvariantViolation("g, M and N must be positive")
    return g * m >= n


def axial_interpolate(frame, factor: int):
    """Circular linear interpolation along depth by an integer factor."""
    if int(factor) != factor or factor < 2:
        raise InvariantViolation("interpolation factor must be an integer >= 2")
    factor = int(factor)
    a = as_array(frame)
    nxt = np.roll(a, -1, axis=0)
    out = np.empty((a.shape[0] * factor, a.shape[1]), dtype=a.dtype)
    for j in range(factor):
        w = j / factor
        out[j::factor] = a if j == 0 else (1.0 - w) * a + w * nxt
    return like(frame, out, pitch_of(frame) / factor)


# Spectral-domain acquisition -------------------------------------------------

@dataclass(frozen=True)
class SourceSpectrum:
    """Power spectral density sampled uniformly on ``[k_min, k_max)`` (rad/um)."""

    samples: np.ndarray
    k_min: float
    k_max: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.size < 2 or not np.all(np.isfinite(s)) or np.any(s < 0):
            raise InvariantViolation("spectrum samples must be finite, non-negative, len >= 2")
        if not self.k_min < self.k_max:
            raise InvariantViolation("k_min must be below k_max")
        object.__setattr__(self, "samples", s)

    @property
    def wavenumbers(self) -> np.ndarray:
        n = self.samples.size
        return self.k_min + (self.k_max - self.k_min) * np.arange(n) / n

    @classmethod
    def gaussian(cls, k_center, k_fwhm, k_min, k_max, n) -> "SourceSpectrum":
        k = k_min + (k_max - k_min) * np.arange(n) / n
        sigma = k_fwhm / FWHM_PER_SIGMA
        return cls(np.exp(-((k - k_center) ** 2) / (2 * sigma**2)), k_min, k_max)


@dataclass(frozen=True)
class Reflectivity:
    """Sample reflectivity on an object-space depth grid ``z_n = n * granularity_um``."""

    values: np.ndarray
    granularity_um: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or not np.all(np.isfinite(v)) or np.any(v < 0):
            raise InvariantViolation("reflectivity must be a finite non-negative vector")
        if not self.granularity_um > 0:
            raise InvariantViolation("granularity must be positive")
        object.__setattr__(self, "values", v)

    @property
    def depths(self) -> np.ndarray:
        return np.arange(self.values.size) * self.granularity_um


def image_pitch_um(spectrum: SourceSpectrum) -> float:
    """Depth spanned by one reconstructed pixel: pi / (k_max - k_min)."""
    return math.pi / (spectrum.k_max - spectrum.k_min)


def simulate_spectral_acquisition(r: Reflectivity, s: SourceSpectrum, m_samples: int):
    """Spectral fringe of a sample and its IDFT reconstruction.

    The reference reflectivity is 1. The spectrum is resampled to
    ``m_samples`` wavenumbers spanning the same band. Returns the real
    fringe and the magnitude reconstruction over positive depths.
    """
    if r.values.size == 0:
        raise EmptyReflectivity("reflectivity has no samples")
    if m_samples > s.samples.size or m_samples < 2:
        raise InvariantViolation("m_samples must be in [2, number of spectrum samples]")
    k = s.k_min + (s.k_max - s.k_min) * np.arange(m_samples) / m_samples
    s_k = np.interp(k, s.wavenumbers, s.samples) if m_samples != s.samples.size else s.samples
    z = r.depths
    fringe = 2.0 * s_k * (np.cos(2.0 * np.outer(k, z)) @ r.values) * r.granularity_um
    recon = np.abs(np.fft.ifft(fringe))[: m_samples // 2]
    pitch = math.pi / (m_samples * (k[1] - k[0]))
    return fringe, ALine(recon, pitch)


def spectrum_psf_magnitude(s: SourceSpectrum, m_samples=None) -> np.ndarray:
    """|IDFT{S(k)}| centred with fftshift, the coherence function behind h(z)."""
    m = s.samples.size if m_samples is None else m_samples
    k = s.k_min + (s.k_max - s.k_min) * np.arange(m) / m
    s_k = np.interp(k, s.wavenumbers, s.samples) if m != s.samples.size else s.samples
    return np.fft.fftshift(np.abs(np.fft.ifft(s_k)))


# Phantoms -----------------------------------------------------------------

@dataclass
class PhantomSpec:
    """Layered, speckled retina-like phantom.

    Layer boundaries are depth offsets (rows) below the tissue surface; the
    first must be 0 and the last layer extends to the bottom, except for
    ``bottom_margin_rows`` dark rows where the signal has faded out. The
    margin keeps the circular axial blur from wrapping deep tissue into the
    free space at the top. The surface row of column ``c`` is
    ``free_space_rows + round(surface_amplitude * (1 - cos(2*pi*(c/surface_period
    + surface_phase))) / 2)``.
    """

    rows: int = 64
    cols: int = 64
    free_space_rows: int = 16
    layer_boundaries: list = field(default_factory=lambda: [0, 6, 14, 24, 34])
    layer_amplitudes: list = field(default_factory=lambda: [0.8, 0.3, 0.55, 0.2, 0.7])
    point_reflectors: list = field(default_factory=list)
    speckle_sigma: float = 0.3
    noise_sigma: float = 0.0
    surface_amplitude: float = 0.0
    surface_period: float = 64.0
    surface_phase: float = 0.0
    bottom_margin_rows: int = 0
    pitch_z_um: float = 1.75
    seed: int = 0

    def validate(self) -> None:
        if self.rows < 8 or self.cols < 8:
            raise SpecInvalid("phantom must be at least 8x8")
        if self.free_space_rows < 4:
            raise SpecInvalid("free_space_rows must be >= 4")
        b = list(self.layer_boundaries)
        if not b or b[0] != 0 or any(y <= x for x, y in zip(b, b[1:])):
            raise SpecInvalid("layer boundaries must start at 0 and strictly increase")
        if len(self.layer_amplitudes) != len(b):
            raise SpecInvalid("need one amplitude per layer")
        amps = list(self.layer_amplitudes) + [p[2] for p in self.point_reflectors]
        if any(not 0 <= a <= 1 for a in amps):
            raise SpecInvalid("amplitudes must lie in [0, 1]")
        for p in self.point_reflectors:
            if not (0 <= p[0] < self.rows and 0 <= p[1] < self.cols):
                raise SpecInvalid(f"point reflector {p} outside the frame")
        if self.speckle_sigma < 0 or self.noise_sigma < 0 or self.surface_amplitude < 0:
            raise SpecInvalid("sigmas and surface amplitude must be non-negative")
        if self.surface_period <= 0:
            raise SpecInvalid("surface_period must be positive")
        if self.bottom_margin_rows < 0:
            raise SpecInvalid("bottom_margin_rows must be non-negative")
        if (self.free_space_rows + math.ceil(self.surface_amplitude)
                >= self.rows - self.bottom_margin_rows):
            raise SpecInvalid("surface leaves no tissue rows")

    def surface_rows(self) -> np.ndarray:
        c = np.arange(self.cols)
        bend = (1 - np.cos(2 * np.pi * (c / self.surface_period + self.surface_phase))) / 2
        return self.free_space_rows + np.round(self.surface_amplitude * bend).astype(int)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["point_reflectors"] = [list(p) for p in self.point_reflectors]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise SpecInvalid(f"unknown phantom fields: {sorted(unknown)}")
        try:
            spec = cls(**d)
        except TypeError as exc:
            raise SpecInvalid(str(exc)) from exc
        spec.point_reflectors = [tuple(p) for p in spec.point_reflectors]
        spec.validate()
        return spec

    @classmethod
    def from_json(cls, path) -> "PhantomSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def make_phantom(spec: PhantomSpec):
    """Render a phantom. Returns ``(BFrame, surface_rows)``; deterministic per seed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    surface = spec.surface_rows()
    depth = np.arange(spec.rows)[:, None] - surface[None, :]
    bounds = np.asarray(spec.layer_boundaries)
    amps = np.asarray(spec.layer_amplitudes, dtype=np.float64)
    layer = np.searchsorted(bounds, np.maximum(depth, 0), side="right") - 1
    img = np.where(depth >= 0, amps[layer], 0.0)
    if spec.bottom_margin_rows:
        img[spec.rows - spec.bottom_margin_rows:] = 0.0
    if spec.speckle_sigma > 0:
        s = spec.speckle_sigma
        img = img * np.exp(s * rng.standard_normal(img.shape) - 0.5 * s * s)
    for row, col, amp in spec.point_reflectors:
        img[int(row), int(col)] = amp
    if spec.noise_sigma > 0:
        img = img + spec.noise_sigma * rng.standard_normal(img.shape)
    img = np.clip(img, 0.0, 1.0)
    return BFrame(img, spec.pitch_z_um), surface


def random_phantom_spec(rng, rows=64, cols=64, **overrides) -> PhantomSpec:
    """A randomized retina-like spec; used to build synthetic datasets.

    The bottom ``rows // 5`` rows are left dark unless overridden.
    """
    bottom = int(overrides.get("bottom_margin_rows", rows // 5))
    free = int(rng.integers(8, max(9, rows // 4)))
    n_layers = int(rng.integers(3, 6))
    room = rows - free - 6 - bottom
    cuts = np.sort(rng.choice(np.arange(3, max(4, room - 2)), size=n_layers - 1, replace=False))
    bounds = [0] + [int(c) for c in cuts]
    amps = [float(rng.uniform(0.55, 0.95))] + [float(rng.uniform(0.15, 0.8)) for _ in bounds[1:]]
    surf_amp = float(rng.uniform(0, max(0, min(6, rows - free - bottom - 10))))
    params = dict(
        rows=rows, cols=cols, free_space_rows=free, layer_boundaries=bounds,
        layer_amplitudes=amps, speckle_sigma=0.3, noise_sigma=0.0,
        surface_amplitude=surf_amp, surface_period=float(rng.uniform(cols / 2, 2 * cols)),
        surface_phase=float(rng.uniform(0, 1)), bottom_margin_rows=bottom,
        seed=int(rng.integers(2**31)),
    )
    params.update(overrides)
    spec = PhantomSpec(**params)
    if "point_reflectors" not in overrides:
        surface = spec.surface_rows()
        pts = []
        for _ in range(int(rng.integers(1, 4))):
            col = int(rng.integers(cols))
            row = int(rng.integers(surface[col] + 3, rows - bottom - 2))
            pts.append((row, col, 1.0))
        spec.point_reflectors = pts
    spec.validate()
    return spec
