"""Round-trip and validation tests for the binary array containers."""

import json

import numpy as np
import pytest

from slotloc import arrayio
from slotloc.arrayio import (
    ArchiveError,
    CHECKPOINT_MAGIC,
    canonical_json,
    load_archive,
    load_checkpoint,
    save_archive,
    save_checkpoint,
)


def _sample_arrays(rng):
    return {
        "f32": rng.standard_normal((3, 4)).astype(np.float32),
        "f64": rng.standard_normal((2, 2, 2)),
        "u8": rng.integers(0, 255, size=(5,), dtype=np.uint8),
        "u16": rng.integers(0, 60000, size=(2, 3), dtype=np.uint16),
        "i32": rng.integers(-100, 100, size=(4,), dtype=np.int32),
        "i64": rng.integers(-100, 100, size=(1, 6), dtype=np.int64),
        "scalarish": np.array(3.5, dtype=np.float64).reshape(()),
    }


def test_canonical_json_is_sorted_and_compact():
    blob = canonical_json({"b": 1, "a": {"z": [1, 2], "y": None}})
    assert blob == b'{"a":{"y":null,"z":[1,2]},"b":1}'
    # byte-level determinism regardless of insertion order
    assert blob == canonical_json({"a": {"y": None, "z": [1, 2]}, "b": 1})


def test_archive_round_trip_exact(tmp_path):
    rng = np.random.default_rng(0)
    arrays = _sample_arrays(rng)
    meta = {"kind": "test", "nested": {"x": [1, 2, 3]}}
    save_archive(tmp_path / "arc", arrays, meta)
    meta2, loaded = load_archive(tmp_path / "arc")
    assert meta2 == meta
    assert set(loaded) == set(arrays)
    for name, arr in arrays.items():
        assert loaded[name].dtype == arr.dtype.newbyteorder("=")
        assert loaded[name].shape == arr.shape
        np.testing.assert_array_equal(loaded[name], arr)


def test_archive_loaded_arrays_are_writable(tmp_path):
    save_archive(tmp_path / "arc", {"a": np.zeros(3, dtype=np.float32)})
    _, arrays = load_archive(tmp_path / "arc")
    arrays["a"][0] = 1.0  # must not raise


def test_archive_missing_manifest(tmp_path):
    with pytest.raises(ArchiveError, match="manifest"):
        load_archive(tmp_path / "nope")


def test_archive_missing_payload(tmp_path):
    save_archive(tmp_path / "arc", {"a": np.zeros(3, dtype=np.float32)})
    (tmp_path / "arc" / "a.bin").unlink()
    with pytest.raises(ArchiveError, match="missing"):
        load_archive(tmp_path / "arc")


def test_archive_size_mismatch(tmp_path):
    save_archive(tmp_path / "arc", {"a": np.zeros(3, dtype=np.float32)})
    (tmp_path / "arc" / "a.bin").write_bytes(b"\x00" * 8)
    with pytest.raises(ArchiveError, match="size mismatch"):
        load_archive(tmp_path / "arc")


def test_archive_rejects_unsupported_dtype(tmp_path):
    with pytest.raises(ArchiveError, match="dtype"):
        save_archive(tmp_path / "arc", {"a": np.zeros(3, dtype=np.complex64)})


def test_archive_version_check(tmp_path):
    save_archive(tmp_path / "arc", {"a": np.zeros(1, dtype=np.float32)})
    mpath = tmp_path / "arc" / "manifest.json"
    doc = json.loads(mpath.read_text())
    doc["format_version"] = 99
    mpath.write_bytes(canonical_json(doc))
    with pytest.raises(ArchiveError, match="version"):
        load_archive(tmp_path / "arc")


def test_checkpoint_round_trip_exact(tmp_path):
    rng = np.random.default_rng(1)
    arrays = _sample_arrays(rng)
    meta = {"kind": "unit", "step": 7}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, meta, arrays)
    meta2, loaded = load_checkpoint(path)
    assert meta2 == meta
    assert list(loaded) == list(arrays)  # manifest preserves order
    for name, arr in arrays.items():
        np.testing.assert_array_equal(loaded[name], arr)
        assert loaded[name].dtype == arr.dtype.newbyteorder("=")


def test_checkpoint_write_is_deterministic(tmp_path):
    arrays = {"w": np.arange(6, dtype=np.float32).reshape(2, 3)}
    save_checkpoint(tmp_path / "a.ckpt", {"k": 1}, arrays)
    save_checkpoint(tmp_path / "b.ckpt", {"k": 1}, arrays)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_layout_manual_decode(tmp_path):
    # independent reader: magic | u32 manifest length | manifest | raw payload
    arr = np.array([1.0, -2.0, 3.5], dtype=np.float32)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {"kind": "t"}, {"a": arr})
    raw = path.read_bytes()
    assert raw[:8] == CHECKPOINT_MAGIC
    mlen = int.from_bytes(raw[8:12], "little")
    manifest = json.loads(raw[12 : 12 + mlen])
    assert manifest["meta"] == {"kind": "t"}
    (entry,) = manifest["arrays"]
    assert entry["name"] == "a" and entry["dtype"] == "float32" and entry["shape"] == [3]
    payload = raw[12 + mlen :]
    assert payload == arr.astype("<f4").tobytes()


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "x.ckpt"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(ArchiveError, match="not a checkpoint"):
        load_checkpoint(path)


def test_checkpoint_truncated_payload(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {}, {"a": np.zeros(4, dtype=np.float64)})
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ArchiveError, match="truncated payload"):
        load_checkpoint(path)


def test_checkpoint_trailing_bytes(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {}, {"a": np.zeros(2, dtype=np.float32)})
    path.write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(ArchiveError, match="trailing"):
        load_checkpoint(path)


def test_checkpoint_version_check(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, {}, {})
    raw = bytearray(path.read_bytes())
    mlen = int.from_bytes(raw[8:12], "little")
    doc = json.loads(bytes(raw[12 : 12 + mlen]))
    doc["format_version"] = 2
    blob = canonical_json(doc)
    path.write_bytes(bytes(raw[:8]) + len(blob).to_bytes(4, "little") + blob)
    with pytest.raises(ArchiveError, match="version"):
        load_checkpoint(path)


def test_non_contiguous_array_round_trips(tmp_path):
    base = np.arange(24, dtype=np.float32).reshape(4, 6)
    view = base[:, ::2]  # non-contiguous
    save_checkpoint(tmp_path / "m.ckpt", {}, {"v": view})
    _, loaded = load_checkpoint(tmp_path / "m.ckpt")
    np.testing.assert_array_equal(loaded["v"], view)


def test_big_endian_input_round_trips(tmp_path):
    arr = np.arange(5, dtype=">f4")
    save_checkpoint(tmp_path / "m.ckpt", {}, {"a": arr})
    _, loaded = load_checkpoint(tmp_path / "m.ckpt")
    np.testing.assert_array_equal(loaded["a"], arr.astype("<f4"))
    assert loaded["a"].dtype == np.dtype("float32")
