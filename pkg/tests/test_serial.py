"""Binary container round-trips and corruption diagnostics."""

import numpy as np
import pytest

from ehicl.serial import (
    BadMagicError,
    ManifestMismatchError,
    TruncatedBlobError,
    read_blob,
    write_blob,
)


@pytest.fixture
def blob(tmp_path):
    path = tmp_path / "x.bin"
    arrays = {
        "a": np.arange(12, dtype=np.float64).reshape(3, 4),
        "idx": np.array([3, 1, 2], dtype=np.int64),
    }
    write_blob(path, "TESTB1", {"seed": 9, "note": "x"}, arrays)
    return path, arrays


def test_round_trip_bit_exact(blob):
    path, arrays = blob
    meta, loaded = read_blob(path, "TESTB1")
    assert meta == {"seed": 9, "note": "x"}
    assert np.array_equal(loaded["a"], arrays["a"])
    assert loaded["idx"].dtype == np.int64
    assert np.array_equal(loaded["idx"], arrays["idx"])


def test_bad_magic(blob):
    path, _ = blob
    with pytest.raises(BadMagicError):
        read_blob(path, "OTHER1")


def test_truncated_payload(blob):
    path, _ = blob
    raw = path.read_bytes()
    path.write_bytes(raw[:-16])
    with pytest.raises(TruncatedBlobError):
        read_blob(path, "TESTB1")


def test_trailing_bytes_mismatch(blob):
    path, _ = blob
    raw = path.read_bytes()
    path.write_bytes(raw + b"\x00" * 8)
    with pytest.raises(ManifestMismatchError):
        read_blob(path, "TESTB1")
