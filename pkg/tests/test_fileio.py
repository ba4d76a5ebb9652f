"""PFM/PGM round trips, hand-encoded fixtures, and parse errors."""

import struct

import numpy as np
import pytest

from touchstereo.fileio import (
    FileFormatError,
    image_to_u16,
    load_pfm,
    load_pgm,
    save_pfm,
    save_pgm8,
    save_pgm16,
    u16_to_image,
)


def test_pfm_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    arr = rng.normal(size=(7, 11)).astype(np.float32)
    arr[0, 0] = np.nan
    arr[3, 4] = -0.0
    p = tmp_path / "m.pfm"
    save_pfm(p, arr)
    back = load_pfm(p)
    assert back.dtype == np.float32
    assert arr.tobytes() == back.tobytes()


def test_pfm_known_fixture_bytes(tmp_path):
    # 2x2 image [[1.5, -2.25], [0.0, 375.0]]; PFM stores rows bottom-to-top.
    payload = struct.pack("<4f", 0.0, 375.0, 1.5, -2.25)
    p = tmp_path / "fix.pfm"
    p.write_bytes(b"Pf\n2 2\n-1.0\n" + payload)
    arr = load_pfm(p)
    np.testing.assert_array_equal(arr, np.array([[1.5, -2.25], [0.0, 375.0]], np.float32))


def test_pfm_big_endian_scale(tmp_path):
    payload = struct.pack(">4f", 0.0, 4.0, 1.0, 2.0)
    p = tmp_path / "be.pfm"
    p.write_bytes(b"Pf\n2 2\n1.0\n" + payload)
    arr = load_pfm(p)
    np.testing.assert_array_equal(arr, np.array([[1.0, 2.0], [0.0, 4.0]], np.float32))


def test_pfm_empty_file_errors(tmp_path):
    p = tmp_path / "e.pfm"
    p.write_bytes(b"")
    with pytest.raises(FileFormatError):
        load_pfm(p)


def test_pfm_truncated_payload_reports_offset(tmp_path):
    p = tmp_path / "t.pfm"
    p.write_bytes(b"Pf\n2 2\n-1.0\n" + b"\x00" * 7)
    with pytest.raises(FileFormatError) as ei:
        load_pfm(p)
    assert "truncated" in str(ei.value)
    assert ei.value.byte_offset == len(b"Pf\n2 2\n-1.0\n")


def test_pfm_bad_header_token(tmp_path):
    p = tmp_path / "b.pfm"
    p.write_bytes(b"Pf\ntwo 2\n-1.0\n" + b"\x00" * 16)
    with pytest.raises(FileFormatError):
        load_pfm(p)


def test_pgm16_roundtrip_value_exact(tmp_path):
    rng = np.random.default_rng(1)
    arr = rng.integers(0, 65536, size=(5, 9)).astype(np.uint16)
    p = tmp_path / "i.pgm"
    save_pgm16(p, arr)
    back = load_pgm(p)
    assert back.dtype == np.uint16
    np.testing.assert_array_equal(arr, back)


def test_pgm8_roundtrip(tmp_path):
    arr = np.array([[0, 64], [128, 255]], dtype=np.uint8)
    p = tmp_path / "m8.pgm"
    save_pgm8(p, arr)
    back = load_pgm(p)
    assert back.dtype == np.uint8
    np.testing.assert_array_equal(arr, back)


def test_pgm_header_comment_skipped(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# a comment\n2 1\n255\n\x07\x09")
    back = load_pgm(p)
    np.testing.assert_array_equal(back, np.array([[7, 9]], np.uint8))


def test_pgm_truncated(tmp_path):
    p = tmp_path / "t.pgm"
    p.write_bytes(b"P5\n4 4\n65535\n\x00\x01")
    with pytest.raises(FileFormatError) as ei:
        load_pgm(p)
    assert "truncated" in str(ei.value)


def test_image_quantization_roundtrip():
    rng = np.random.default_rng(2)
    img = rng.uniform(size=(6, 6))
    q = image_to_u16(img)
    back = u16_to_image(q)
    assert np.max(np.abs(back - img)) <= 0.5 / 65535.0 + 1e-12
    # quantized values themselves survive a second trip exactly
    np.testing.assert_array_equal(image_to_u16(back), q)
