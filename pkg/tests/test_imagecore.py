import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from opress.exceptions import AllZeroFrame, BadMagic, InvariantViolation, TruncatedFile
from opress.imagecore import (
    BFrame,
    Roi,
    db_to_pgm16,
    export_mask_pgm,
    export_pgm16,
    normalize,
    read_octb,
    read_pgm,
    write_octb,
)

frames = arrays(np.float32, st.tuples(st.integers(1, 12), st.integers(1, 12)),
                elements=st.floats(0, 1, width=32))


def test_octb_roundtrip_bits(tmp_path):
    a = np.random.default_rng(0).random((16, 16)).astype(np.float32)
    write_octb(BFrame(a, 1.75), tmp_path / "f.octb")
    back = read_octb(tmp_path / "f.octb")
    assert back.data.tobytes() == a.tobytes()
    assert back.pitch_z_um == np.float32(1.75)


def test_octb_layout_size_and_header(tmp_path):
    write_octb(np.ones((2, 3)), tmp_path / "f.octb")
    raw = (tmp_path / "f.octb").read_bytes()
    assert len(raw) == 44
    assert struct.unpack_from("<4sIII", raw) == (b"OCTB", 1, 2, 3)
    assert np.frombuffer(raw[20:], "<f4").tolist() == [1.0] * 6


def test_octb_zeros(tmp_path):
    write_octb(np.zeros((8, 8)), tmp_path / "z.octb")
    assert np.array_equal(read_octb(tmp_path / "z.octb").data, np.zeros((8, 8)))


def test_octb_bad_magic(tmp_path):
    p = tmp_path / "bad.octb"
    write_octb(np.ones((2, 2)), p)
    raw = p.read_bytes()
    p.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(BadMagic):
        read_octb(p)


def test_octb_truncated(tmp_path):
    p = tmp_path / "t.octb"
    write_octb(np.ones((4, 4)), p)
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(TruncatedFile):
        read_octb(p)


def test_zero_row_frame_rejected():
    with pytest.raises(InvariantViolation):
        BFrame(np.zeros((0, 3)))


def test_frame_invariants():
    with pytest.raises(InvariantViolation):
        BFrame(np.array([[1.0, -0.1]]))
    with pytest.raises(InvariantViolation):
        BFrame(np.array([[np.nan, 1.0]]))


@settings(max_examples=50, deadline=None)
@given(frames)
def test_octb_roundtrip_property(tmp_path_factory, a):
    p = tmp_path_factory.mktemp("rt") / "f.octb"
    write_octb(a, p)
    back = read_octb(p)
    assert back.data.tobytes() == a.tobytes()
    write_octb(back, p.with_suffix(".b"))
    assert p.read_bytes() == p.with_suffix(".b").read_bytes()


def test_normalize_examples():
    a = np.array([[4.0, 2.0], [1.0, 0.0]])
    assert np.array_equal(normalize(a), a / 4)
    n = normalize(a)
    assert np.array_equal(normalize(n), n)
    with pytest.raises(AllZeroFrame):
        normalize(np.zeros((3, 3)))
    assert isinstance(normalize(BFrame(a)), BFrame)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (5, 4), elements=st.floats(0, 1e6)))
def test_normalize_idempotent(a):
    if a.max() <= 0:
        return
    n = normalize(a)
    assert n.max() == 1.0
    assert np.array_equal(normalize(n), n)


def test_pgm_mapping_examples():
    assert db_to_pgm16([10 ** (-5 / 20)], -60, -5)[0] == 65535
    assert db_to_pgm16([0.0], -160, 0)[0] == 0
    mid = 10 ** (-30 / 20)
    assert abs(int(db_to_pgm16([mid], -60, 0)[0]) - 32768) <= 1


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 2), st.floats(0, 2))
def test_pgm_monotone(v1, v2):
    lo, hi = sorted((v1, v2))
    p = db_to_pgm16([lo, hi], -60, 0)
    assert p[0] <= p[1]


def test_pgm_files(tmp_path):
    a = np.random.default_rng(1).random((5, 7))
    export_pgm16(a, tmp_path / "a.pgm")
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n7 5\n65535\n")
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), db_to_pgm16(a, -60, 0))
    m = (a > 0.5).astype(np.uint8)
    export_mask_pgm(m, tmp_path / "m.pgm")
    assert (tmp_path / "m.pgm").read_bytes().startswith(b"P5\n7 5\n1\n")
    assert np.array_equal(read_pgm(tmp_path / "m.pgm"), m)


def test_roi():
    a = np.arange(20.0).reshape(4, 5)
    r = Roi(1, 2, 2, 3)
    assert np.array_equal(r.extract(a), a[1:3, 2:5])
    assert Roi.from_dict(r.to_dict()) == r
    with pytest.raises(InvariantViolation):
        Roi(3, 0, 2, 1).extract(a)
