"""Frame containers, normalization and the OCTB / PGM file formats.

Frames are 2-D arrays indexed ``[depth, a_line]`` holding linear amplitude
in ``[0, 1]``. Library functions accept either a bare ``numpy.ndarray`` or a
:class:`BFrame`; :func:`as_array` and :func:`like` convert in and out so a
caller gets back the same kind of object it passed in.

OCTB layout (all little-endian)::

    b"OCTB" | u32 version=1 | u32 rows | u32 cols | f32 pitch_z_um
    | rows*cols f32, row-major
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    AllZeroFrame,
    BadMagic,
    InvariantViolation,
    IoFailure,
    NonFiniteData,
    TruncatedFile,
)

MAGIC = b"OCTB"
VERSION = 1
_HEADER = struct.Struct("<4sIIIf")
MIN_PIPELINE_SIZE = 8


@dataclass(frozen=True)
class BFrame:
    """A B-scan: rows are axial depth samples, columns are A-lines."""

    data: np.ndarray
    pitch_z_um: float = 1.0

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise InvariantViolation(f"frame must be 2-D, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise InvariantViolation(f"frame has an empty axis: {data.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        if not np.all(np.isfinite(data)):
            raise InvariantViolation("frame contains non-finite values")
        if np.any(data < 0):
            raise InvariantViolation("frame contains negative amplitudes")
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "pitch_z_um", float(self.pitch_z_um))

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.data, dtype=dtype)

    def with_data(self, data, pitch_z_um=None) -> "BFrame":
        return BFrame(data, self.pitch_z_um if pitch_z_um is None else pitch_z_um)


@dataclass(frozen=True)
class ALine:
    depth_samples: np.ndarray
    pitch_z_um: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.depth_samples, dtype=np.float64)
        if v.ndim != 1 or v.size < 2:
            raise InvariantViolation("an A-line needs at least two samples")
        if not np.all(np.isfinite(v)):
            raise InvariantViolation("A-line contains non-finite values")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "depth_samples", v)

    def __len__(self):
        return self.depth_samples.size


@dataclass(frozen=True)
class Roi:
    """Rectangular region ``[row0:row0+rows, col0:col0+cols]``."""

    row0: int
    col0: int
    rows: int
    cols: int

    def check(self, shape) -> None:
        r, c = shape
        if min(self.row0, self.col0) < 0 or self.rows < 1 or self.cols < 1:
            raise InvariantViolation(f"invalid ROI {self}")
        if self.row0 + self.rows > r or self.col0 + self.cols > c:
            raise InvariantViolation(f"ROI {self} exceeds frame of shape {shape}")

    def extract(self, frame) -> np.ndarray:
        a = as_array(frame)
        self.check(a.shape)
        return a[self.row0:self.row0 + self.rows, self.col0:self.col0 + self.cols]

    @classmethod
    def from_dict(cls, d) -> "Roi":
        return cls(int(d["row0"]), int(d["col0"]), int(d["rows"]), int(d["cols"]))

    def to_dict(self) -> dict:
        return {"row0": self.row0, "col0": self.col0, "rows": self.rows, "cols": self.cols}


def as_array(frame, dtype=np.float64) -> np.ndarray:
    """Return the pixel grid of ``frame`` (BFrame or array) as a 2-D array."""
    if isinstance(frame, BFrame):
        frame = frame.data
    a = np.asarray(frame, dtype=dtype)
    if a.ndim != 2:
        raise InvariantViolation(f"expected a 2-D frame, got shape {a.shape}")
    return a


def like(template, data, pitch_z_um=None):
    """Wrap ``data`` the same way ``template`` was wrapped."""
    if isinstance(template, BFrame):
        return template.with_data(data, pitch_z_um)
    return data


def pitch_of(frame, default=1.0) -> float:
    return frame.pitch_z_um if isinstance(frame, BFrame) else default


def normalize(frame):
    """Scale a frame so its maximum is exactly 1."""
    a = as_array(frame)
    peak = a.max()
    if not peak > 0:
        raise AllZeroFrame("cannot normalize a frame whose maximum is not positive")
    if peak == 1.0:
        return like(frame, a.copy())
    return like(frame, a / peak)


def write_octb(frame, path) -> None:
    if not isinstance(frame, BFrame):
        frame = BFrame(frame)
    data = np.ascontiguousarray(frame.data, dtype="<f4")
    header = _HEADER.pack(MAGIC, VERSION, frame.rows, frame.cols, frame.pitch_z_um)
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(data.tobytes(order="C"))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_octb(path) -> BFrame:
    """Read an OCTB file; values come back as float32 exactly as stored."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if raw[:4] != MAGIC:
        raise BadMagic(f"{path}: magic bytes {raw[:4]!r} != {MAGIC!r}")
    if len(raw) < _HEADER.size:
        raise TruncatedFile(f"{path}: header truncated")
    _, version, rows, cols, pitch = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise BadMagic(f"{path}: unsupported OCTB version {version}")
    expected = _HEADER.size + 4 * rows * cols
    if len(raw) < expected:
        raise TruncatedFile(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", count=rows * cols, offset=_HEADER.size)
    data = data.reshape(rows, cols).astype(np.float32)
    if not np.all(np.isfinite(data)):
        raise NonFiniteData(f"{path}: non-finite samples")
    try:
        return BFrame(data, pitch)
    except InvariantViolation as exc:
        raise NonFiniteData(f"{path}: {exc}") from exc


def db_to_pgm16(values, db_floor: float, db_ceil: float) -> np.ndarray:
    """Map linear amplitudes to 16-bit display levels on a dB scale."""
    if not db_floor < db_ceil:
        raise InvariantViolation("db_floor must be below db_ceil")
    v = np.asarray(values, dtype=np.float64)
    db = 20.0 * np.log10(np.maximum(v, 1e-8))
    scaled = 65535.0 * (db - db_floor) / (db_ceil - db_floor)
    return np.clip(np.round(scaled), 0, 65535).astype(np.uint16)


def _write_pgm(path, pixels: np.ndarray, maxval: int) -> None:
    rows, cols = pixels.shape
    header = f"P5\n{cols} {rows}\n{maxval}\n".encode("ascii")
    body = pixels.astype(">u2" if maxval > 255 else "u1").tobytes()
    try:
        with open(path, "wb") as fh:
            fh.write(header + body)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def export_pgm16(frame, path, db_floor: float = -60.0, db_ceil: float = 0.0) -> None:
    _write_pgm(path, db_to_pgm16(as_array(frame), db_floor, db_ceil), 65535)


def export_mask_pgm(mask, path) -> None:
    """1-bit mask as P5 with maxval 1."""
    m = np.asarray(mask)
    _write_pgm(path, (m > 0).astype(np.uint8), 1)


def read_pgm(path) -> np.ndarray:
    """Minimal P5 reader, used to check exported previews."""
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    pos += 1
    if tokens[0] != b"P5":
        raise BadMagic(f"{path}: not a P5 PGM")
    cols, rows, maxval = (int(t) for t in tokens[1:])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(raw, dtype=dtype, count=rows * cols, offset=pos).reshape(rows, cols)


def ensure_dir(path) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {path}: {exc}") from exc
    return str(path)
