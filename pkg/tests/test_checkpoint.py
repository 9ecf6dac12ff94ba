"""Checkpoint container: byte determinism, round trips, corruption handling."""

import json
import os

import numpy as np
import pytest

from wavebridge.checkpoint import (
    MAGIC,
    CheckpointError,
    atomic_write_bytes,
    load_checkpoint,
    save_checkpoint,
)


def _sample_tensors(rng):
    return {
        "enc.w": rng.standard_normal((3, 2, 5)),
        "enc.b": rng.standard_normal(3),
        "gain": np.array(1.5),  # zero-dim
    }


def test_round_trip(tmp_path, rng):
    path = str(tmp_path / "m.ckpt")
    tensors = _sample_tensors(rng)
    save_checkpoint(path, "codec", {"sample_rate": 8000}, tensors, extra={"scale": 2.0})
    kind, config, loaded, extra = load_checkpoint(path)
    assert kind == "codec"
    assert config == {"sample_rate": 8000}
    assert extra == {"scale": 2.0}
    assert set(loaded) == set(tensors)
    for name, arr in tensors.items():
        assert loaded[name].shape == arr.shape
        assert loaded[name].dtype == np.float64
        # storage is float32, so equality holds exactly at that precision
        assert np.array_equal(loaded[name].astype(np.float32), arr.astype(np.float32))


def test_bytes_deterministic(tmp_path, rng):
    tensors = _sample_tensors(rng)
    pa, pb = str(tmp_path / "a.ckpt"), str(tmp_path / "b.ckpt")
    save_checkpoint(pa, "codec", {"x": 1}, tensors)
    save_checkpoint(pb, "codec", {"x": 1}, tensors)
    with open(pa, "rb") as f:
        a = f.read()
    with open(pb, "rb") as f:
        b = f.read()
    assert a == b


def test_bad_magic_rejected(tmp_path):
    path = str(tmp_path / "junk.ckpt")
    with open(path, "wb") as f:
        f.write(b"RIFFnothing")
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_corrupt_header_rejected(tmp_path):
    path = str(tmp_path / "hdr.ckpt")
    bad = b"{not json"
    with open(path, "wb") as f:
        f.write(MAGIC + np.uint64(len(bad)).tobytes() + bad)
    with pytest.raises(CheckpointError, match="corrupt header"):
        load_checkpoint(path)


def test_unknown_format_rejected(tmp_path):
    path = str(tmp_path / "fmt.ckpt")
    head = json.dumps({"format": "other", "tensors": []}).encode()
    with open(path, "wb") as f:
        f.write(MAGIC + np.uint64(len(head)).tobytes() + head)
    with pytest.raises(CheckpointError, match="unknown format"):
        load_checkpoint(path)


def test_truncated_payload_rejected(tmp_path, rng):
    path = str(tmp_path / "t.ckpt")
    save_checkpoint(path, "codec", {}, {"w": rng.standard_normal(100)})
    with open(path, "rb") as f:
        raw = f.read()
    with open(path, "wb") as f:
        f.write(raw[:-40])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    path = str(tmp_path / "out.bin")
    atomic_write_bytes(path, b"payload")
    with open(path, "rb") as f:
        assert f.read() == b"payload"
    leftovers = [n for n in os.listdir(tmp_path) if n.startswith(".ckpt-")]
    assert leftovers == []


def test_atomic_write_replaces_existing(tmp_path):
    path = str(tmp_path / "out.bin")
    atomic_write_bytes(path, b"first")
    atomic_write_bytes(path, b"second")
    with open(path, "rb") as f:
        assert f.read() == b"second"
