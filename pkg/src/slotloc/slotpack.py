"""Single-file interchange format for grouped clips.

Layout: 8-byte magic, u32 little-endian manifest length, canonical JSON
manifest, then the assignment map (uint16 LE, row-major) and the alpha
volume (float32 LE). The manifest pins T, H', W', K, the patch size, the
format version, and the per-slot label records, so a pack is self-contained
for rendering and evaluation. Writing is byte-deterministic: identical
content produces identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .arrayio import ArchiveError, canonical_json

MAGIC = b"SLOTPAK1"
VERSION = 1


@dataclass
class SlotPack:
    patch_size: int
    assignment: np.ndarray  # (T, H', W') uint16
    alpha: np.ndarray  # (K, T, H', W') float32
    labels: list[dict] | None = None  # one record per slot, None before labeling
    meta: dict = field(default_factory=dict)

    @property
    def num_slots(self) -> int:
        return self.alpha.shape[0]

    @property
    def num_frames(self) -> int:
        return self.alpha.shape[1]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.alpha.shape[2], self.alpha.shape[3]

    def validate(self) -> None:
        K, T, gh, gw = self.alpha.shape
        if self.assignment.shape != (T, gh, gw):
            raise ArchiveError(
                f"assignment shape {self.assignment.shape} vs alpha {self.alpha.shape}"
            )
        if self.assignment.size and int(self.assignment.max()) >= K:
            raise ArchiveError(
                f"assignment references slot {int(self.assignment.max())} but K={K}"
            )
        if self.labels is not None and len(self.labels) != K:
            raise ArchiveError(f"{len(self.labels)} label records for K={K} slots")
        if self.patch_size < 1:
            raise ArchiveError("patch_size must be >= 1")


def pack_bytes(pack: SlotPack) -> bytes:
    pack.validate()
    K, T, gh, gw = pack.alpha.shape
    manifest = {
        "version": VERSION,
        "T": T,
        "Hp": gh,
        "Wp": gw,
        "K": K,
        "p": int(pack.patch_size),
        "labels": pack.labels,
        "meta": pack.meta,
    }
    blob = canonical_json(manifest)
    asn = np.ascontiguousarray(pack.assignment, dtype="<u2").tobytes()
    alp = np.ascontiguousarray(pack.alpha, dtype="<f4").tobytes()
    return MAGIC + len(blob).to_bytes(4, "little") + blob + asn + alp


def write_slotpack(path: str | Path, pack: SlotPack) -> None:
    Path(path).write_bytes(pack_bytes(pack))


def read_slotpack(path: str | Path) -> SlotPack:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise ArchiveError(f"{path}: not a slot pack")
    off = len(MAGIC)
    mlen = int.from_bytes(raw[off : off + 4], "little")
    off += 4
    if off + mlen > len(raw):
        raise ArchiveError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[off : off + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ArchiveError(f"{path}: malformed manifest: {e}") from e
    off += mlen
    if manifest.get("version") != VERSION:
        raise ArchiveError(f"{path}: unsupported pack version {manifest.get('version')!r}")
    T, gh, gw, K = (int(manifest[k]) for k in ("T", "Hp", "Wp", "K"))
    n_asn = T * gh * gw * 2
    n_alp = K * T * gh * gw * 4
    if len(raw) - off != n_asn + n_alp:
        raise ArchiveError(
            f"{path}: payload is {len(raw) - off} bytes, manifest implies {n_asn + n_alp}"
        )
    assignment = (
        np.frombuffer(raw[off : off + n_asn], dtype="<u2").reshape(T, gh, gw).astype(np.uint16)
    )
    off += n_asn
    alpha = (
        np.frombuffer(raw[off:], dtype="<f4").reshape(K, T, gh, gw).astype(np.float32)
    )
    pack = SlotPack(
        patch_size=int(manifest["p"]),
        assignment=assignment,
        alpha=alpha,
        labels=manifest.get("labels"),
        meta=manifest.get("meta", {}),
    )
    pack.validate()
    return pack
