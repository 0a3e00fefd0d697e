"""Checkpoint format round trips and corruption handling."""

import struct

import numpy as np
import pytest

from cos.assembly import init_bridge
from cos.checkpoint import (
    MAGIC,
    CheckpointError,
    load_bridge,
    load_tensors,
    save_bridge,
    save_tensors,
)
from cos.numerics import Tensor
from cos.presets import PRETRAIN, make_config


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "a": rng.normal(size=(3, 4)),
        "b.c": rng.normal(size=(7,)) * 1e-3,
        "scalarish": rng.normal(size=(1,)),
    }
    path = tmp_path / "t.ckpt"
    save_tensors(path, tensors)
    loaded = load_tensors(path)
    assert set(loaded) == set(tensors)
    for name, arr in tensors.items():
        as32 = arr.astype("<f4")
        assert loaded[name].dtype == np.float32
        assert np.array_equal(loaded[name], as32), name
        # saving what was loaded reproduces identical bytes
    save_tensors(path, loaded)
    reloaded = load_tensors(path)
    for name in tensors:
        assert loaded[name].tobytes() == reloaded[name].tobytes()


def test_accepts_tensor_objects(tmp_path):
    path = tmp_path / "t.ckpt"
    save_tensors(path, {"w": Tensor(np.eye(3))})
    assert np.array_equal(load_tensors(path)["w"], np.eye(3, dtype=np.float32))


def test_empty_checkpoint_rejected(tmp_path):
    with pytest.raises(CheckpointError):
        save_tensors(tmp_path / "t.ckpt", {})


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "t.ckpt"
    path.write_bytes(b"NOTACKPT" + b"\x00" * 64)
    with pytest.raises(CheckpointError, match="magic"):
        load_tensors(path)


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "t.ckpt"
    save_tensors(path, {"w": np.ones((4, 4))})
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 10])
    with pytest.raises(CheckpointError, match="truncated|trailing|outside"):
        load_tensors(path)


def test_unsupported_version_rejected(tmp_path):
    path = tmp_path / "t.ckpt"
    save_tensors(path, {"w": np.ones(2)})
    blob = bytearray(path.read_bytes())
    blob[8:12] = struct.pack("<I", 99)
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="version"):
        load_tensors(path)


def test_overlapping_offsets_rejected(tmp_path):
    # hand-build a table whose two tensors alias the same payload bytes
    def entry(name, dims, offset):
        enc = name.encode()
        out = struct.pack("<I", len(enc)) + enc
        out += struct.pack("<II", 0, len(dims))
        out += struct.pack(f"<{len(dims)}I", *dims)
        out += struct.pack("<Q", offset)
        return out

    payload = np.zeros(4, dtype="<f4").tobytes()
    blob = (
        MAGIC
        + struct.pack("<II", 1, 2)
        + entry("a", (3,), 0)
        + entry("b", (2,), 4)  # starts inside a's 12-byte span
        + struct.pack("<Q", len(payload))
        + payload
    )
    path = tmp_path / "t.ckpt"
    path.write_bytes(blob)
    with pytest.raises(CheckpointError, match="overlap"):
        load_tensors(path)


def test_out_of_bounds_offset_rejected(tmp_path):
    def entry(name, dims, offset):
        enc = name.encode()
        return (
            struct.pack("<I", len(enc))
            + enc
            + struct.pack("<II", 0, len(dims))
            + struct.pack(f"<{len(dims)}I", *dims)
            + struct.pack("<Q", offset)
        )

    payload = np.zeros(2, dtype="<f4").tobytes()
    blob = (
        MAGIC
        + struct.pack("<II", 1, 1)
        + entry("a", (4,), 0)
        + struct.pack("<Q", len(payload))
        + payload
    )
    path = tmp_path / "t.ckpt"
    path.write_bytes(blob)
    with pytest.raises(CheckpointError, match="outside"):
        load_tensors(path)


def test_duplicate_names_rejected(tmp_path):
    def entry(name, dims, offset):
        enc = name.encode()
        return (
            struct.pack("<I", len(enc))
            + enc
            + struct.pack("<II", 0, len(dims))
            + struct.pack(f"<{len(dims)}I", *dims)
            + struct.pack("<Q", offset)
        )

    payload = np.zeros(2, dtype="<f4").tobytes()
    blob = (
        MAGIC
        + struct.pack("<II", 1, 2)
        + entry("a", (1,), 0)
        + entry("a", (1,), 4)
        + struct.pack("<Q", len(payload))
        + payload
    )
    path = tmp_path / "t.ckpt"
    path.write_bytes(blob)
    with pytest.raises(CheckpointError, match="duplicate"):
        load_tensors(path)


class TestBridgeCheckpoints:
    def test_bridge_round_trip(self, tmp_path):
        cfg = PRETRAIN[32]
        params = init_bridge(cfg, np.random.default_rng(1))
        path = tmp_path / "bridge.ckpt"
        save_bridge(path, params)
        loaded = load_bridge(path, cfg)
        src = params.named_tensors()
        for name, t in loaded.named_tensors().items():
            want = src[name].data.astype("<f4").astype(np.float64)
            assert np.array_equal(t.data, want), name
            assert t.requires_grad

    def test_second_save_is_stable(self, tmp_path):
        # once quantized to 32-bit, further round trips change nothing
        cfg = PRETRAIN[32]
        params = init_bridge(cfg, np.random.default_rng(2))
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_bridge(p1, params)
        save_bridge(p2, load_bridge(p1, cfg))
        assert p1.read_bytes() == p2.read_bytes()

    def test_missing_tensor_rejected(self, tmp_path):
        cfg = PRETRAIN[32]
        params = init_bridge(cfg, np.random.default_rng(3))
        named = params.named_tensors()
        named.pop("out_proj")
        path = tmp_path / "t.ckpt"
        save_tensors(path, named)
        with pytest.raises(CheckpointError, match="missing"):
            load_bridge(path, cfg)

    def test_extra_tensor_rejected(self, tmp_path):
        cfg = PRETRAIN[32]
        params = init_bridge(cfg, np.random.default_rng(4))
        named = dict(params.named_tensors())
        named["stowaway"] = np.zeros(3)
        path = tmp_path / "t.ckpt"
        save_tensors(path, named)
        with pytest.raises(CheckpointError, match="unexpected"):
            load_bridge(path, cfg)

    def test_wrong_config_shape_rejected(self, tmp_path):
        cfg = PRETRAIN[32]
        params = init_bridge(cfg, np.random.default_rng(5))
        path = tmp_path / "t.ckpt"
        save_bridge(path, params)
        other = make_config(448, [(32, 16), (8, 4)])
        with pytest.raises(CheckpointError):
            load_bridge(path, other)
