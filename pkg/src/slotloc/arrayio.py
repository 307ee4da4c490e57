"""Binary array containers: JSON manifests next to raw little-endian payloads.

Two layouts share one dtype table:

* directory archives, a ``manifest.json`` plus one ``<name>.bin`` per array,
  used for scene bundles and semantic volumes;
* single-file checkpoints, ``magic | u32 manifest length | manifest | payloads``,
  used for model weights and oracle parameters.

Both round-trip bit-identically: payloads are written in C order with an
explicit byte order, and manifests are serialized canonically (sorted keys,
no whitespace).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
CHECKPOINT_MAGIC = b"SLCKPT01"

# dtype tag -> numpy little-endian spec
_DTYPES = {
    "float32": "<f4",
    "float64": "<f8",
    "uint8": "<u1",
    "uint16": "<u2",
    "int32": "<i4",
    "int64": "<i8",
}
_TAG_BY_KIND = {np.dtype(spec).str: tag for tag, spec in _DTYPES.items()}


class ArchiveError(RuntimeError):
    """An archive, checkpoint, or pack failed structural validation."""


def _dtype_tag(arr: np.ndarray) -> str:
    key = arr.dtype.newbyteorder("<").str
    if key not in _TAG_BY_KIND:
        raise ArchiveError(f"unsupported array dtype {arr.dtype}")
    return _TAG_BY_KIND[key]


def _as_le_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()


def _from_le_bytes(buf: bytes, tag: str, shape) -> np.ndarray:
    if tag not in _DTYPES:
        raise ArchiveError(f"unknown dtype tag {tag!r}")
    dt = np.dtype(_DTYPES[tag])
    expected = dt.itemsize * int(np.prod(shape, dtype=np.int64)) if shape else dt.itemsize
    if len(buf) != expected:
        raise ArchiveError(f"payload size mismatch: have {len(buf)} bytes, manifest says {expected}")
    arr = np.frombuffer(buf, dtype=dt).reshape(shape)
    # native byte order, writable copy
    return arr.astype(arr.dtype.newbyteorder("="), copy=True)


def canonical_json(obj) -> bytes:
    """Deterministic JSON bytes: sorted keys, fixed separators."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


# ---------------------------------------------------------------------------
# directory archives


def save_archive(path: str | Path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write ``arrays`` under directory ``path`` with a manifest describing them."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, arr in arrays.items():
        tag = _dtype_tag(arr)
        fname = f"{name}.bin"
        (path / fname).write_bytes(_as_le_bytes(arr))
        entries[name] = {"dtype": tag, "shape": list(arr.shape), "file": fname}
    manifest = {
        "format_version": FORMAT_VERSION,
        "meta": meta or {},
        "arrays": entries,
    }
    (path / "manifest.json").write_bytes(canonical_json(manifest))


def load_archive(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a directory archive. Returns (meta, arrays)."""
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.is_file():
        raise ArchiveError(f"no manifest.json under {path}")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as e:
        raise ArchiveError(f"malformed manifest under {path}: {e}") from e
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ArchiveError(f"unsupported archive version {manifest.get('format_version')!r}")
    arrays = {}
    for name, entry in manifest.get("arrays", {}).items():
        fpath = path / entry["file"]
        if not fpath.is_file():
            raise ArchiveError(f"archive payload missing: {fpath}")
        arrays[name] = _from_le_bytes(fpath.read_bytes(), entry["dtype"], tuple(entry["shape"]))
    return manifest.get("meta", {}), arrays


# ---------------------------------------------------------------------------
# single-file checkpoints


def save_checkpoint(path: str | Path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write a single-file container: magic, manifest, concatenated payloads."""
    entries = []
    payloads = []
    for name, arr in arrays.items():
        buf = _as_le_bytes(arr)
        entries.append(
            {"name": name, "dtype": _dtype_tag(arr), "shape": list(arr.shape), "nbytes": len(buf)}
        )
        payloads.append(buf)
    manifest = {"format_version": FORMAT_VERSION, "meta": meta, "arrays": entries}
    blob = canonical_json(manifest)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(len(blob).to_bytes(4, "little"))
        f.write(blob)
        for buf in payloads:
            f.write(buf)


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read a single-file container. Returns (meta, arrays) in manifest order."""
    raw = Path(path).read_bytes()
    if len(raw) < len(CHECKPOINT_MAGIC) + 4 or raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ArchiveError(f"{path}: not a checkpoint container")
    off = len(CHECKPOINT_MAGIC)
    mlen = int.from_bytes(raw[off : off + 4], "little")
    off += 4
    if off + mlen > len(raw):
        raise ArchiveError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[off : off + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ArchiveError(f"{path}: malformed manifest: {e}") from e
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ArchiveError(f"unsupported checkpoint version {manifest.get('format_version')!r}")
    off += mlen
    arrays = {}
    for entry in manifest["arrays"]:
        n = int(entry["nbytes"])
        if off + n > len(raw):
            raise ArchiveError(f"{path}: truncated payload for {entry['name']!r}")
        arrays[entry["name"]] = _from_le_bytes(raw[off : off + n], entry["dtype"], tuple(entry["shape"]))
        off += n
    if off != len(raw):
        raise ArchiveError(f"{path}: {len(raw) - off} trailing bytes")
    return manifest["meta"], arrays
