"""Archive format: round trip, exact byte layout, error handling."""

import struct

import numpy as np
import pytest

from braunet.checkpoint import MAGIC, CheckpointError, load_arrays, save_arrays


def test_round_trip(tmp_path):
    arrays = {
        "weight": np.random.default_rng(0).normal(size=(3, 4)).astype(np.float32),
        "bias": np.arange(5, dtype=np.float64),
        "scalarish": np.float32([7.5]),
    }
    path = tmp_path / "state.ckpt"
    save_arrays(path, arrays)
    loaded = load_arrays(path)
    assert set(loaded) == set(arrays)
    for name in arrays:
        assert loaded[name].dtype == arrays[name].dtype
        assert np.array_equal(loaded[name], arrays[name])


def test_exact_byte_layout(tmp_path):
    path = tmp_path / "one.ckpt"
    save_arrays(path, {"ab": np.array([[1.0, 2.0]], dtype=np.float32)})
    expected = (
        MAGIC
        + struct.pack("<Q", 1)                      # entry count
        + struct.pack("<Q", 2) + b"ab"              # name
        + struct.pack("<BQ", 1, 2)                  # dtype tag float32, rank 2
        + struct.pack("<QQ", 1, 2)                  # extents
        + np.array([1.0, 2.0], dtype="<f4").tobytes()
    )
    assert path.read_bytes() == expected


def test_deterministic_bytes_regardless_of_insertion(tmp_path):
    a = {"x": np.ones(2, dtype=np.float32), "y": np.zeros(3, dtype=np.float32)}
    b = dict(reversed(list(a.items())))
    pa, pb = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_arrays(pa, a)
    save_arrays(pb, b)
    assert pa.read_bytes() == pb.read_bytes()


def test_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 8)
    with pytest.raises(CheckpointError):
        load_arrays(path)


def test_rejects_truncation(tmp_path):
    path = tmp_path / "trunc.ckpt"
    save_arrays(path, {"w": np.ones((2, 2), dtype=np.float32)})
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(CheckpointError):
        load_arrays(path)


def test_rejects_unsupported_dtype(tmp_path):
    with pytest.raises(CheckpointError):
        save_arrays(tmp_path / "int.ckpt", {"w": np.ones(2, dtype=np.int64)})
