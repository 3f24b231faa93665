"""Checkpoint file format round-trips and corruption handling."""

import numpy as np
import pytest

from mmt_micro.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from mmt_micro.errors import FormatError
from mmt_micro.tensor import Rng


def sample_checkpoint():
    rng = Rng(1)
    return Checkpoint(
        arrays={
            "param/w": rng.normal((4, 3)).astype(np.float32),
            "param/b": np.zeros(3, dtype=np.float32),
            "adam/m/w": rng.normal((4, 3)).astype(np.float32),
        },
        meta={"epoch": 3, "config": "arch = fa\n", "nested": {"seed": 7}},
    )


def test_roundtrip_preserves_arrays_and_meta(tmp_path):
    ckpt = sample_checkpoint()
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, ckpt)
    loaded = load_checkpoint(path)
    assert loaded.meta == ckpt.meta
    assert set(loaded.arrays) == set(ckpt.arrays)
    for name, arr in ckpt.arrays.items():
        np.testing.assert_array_equal(loaded.arrays[name], arr)


def test_save_load_save_byte_identical(tmp_path):
    ckpt = sample_checkpoint()
    a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(a, ckpt)
    save_checkpoint(b, load_checkpoint(a))
    assert a.read_bytes() == b.read_bytes()


def test_truncated_file_rejected_cleanly(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, sample_checkpoint())
    raw = path.read_bytes()
    for cut in (3, 8, len(raw) // 2, len(raw) - 1):
        path.write_bytes(raw[:cut])
        with pytest.raises(FormatError):
            load_checkpoint(path)


def test_bit_flip_detected(tmp_path):
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, sample_checkpoint())
    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0x40
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="CRC"):
        load_checkpoint(path)


def test_bad_magic(tmp_path):
    path = tmp_path / "model.ckpt"
    path.write_bytes(b"WRONG!" + b"\x00" * 64)
    with pytest.raises(FormatError, match="magic"):
        load_checkpoint(path)
