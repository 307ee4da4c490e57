"""Qualitative overlays: per-frame PNGs of slot masks and captions.

Each rendered slot keeps one palette color across all frames. Named slots
are captioned with their label; unnamed slots get their best candidate
prefixed with an underscore. Frames where no rendered slot owns a patch
come out as the plain video frame.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .slotpack import SlotPack

PALETTE = (
    (230, 60, 60),
    (60, 140, 230),
    (70, 190, 90),
    (235, 180, 50),
    (170, 90, 220),
    (60, 200, 200),
    (240, 120, 180),
    (150, 150, 60),
    (90, 90, 230),
    (230, 130, 60),
    (120, 220, 150),
    (200, 200, 200),
)

BLEND = 0.55


def _caption(record: dict | None, slot: int) -> str:
    if record is None:
        return f"slot{slot}"
    if record.get("named") and record.get("name"):
        return str(record["name"])
    best = record.get("best_name")
    return f"_{best}" if best else "_"


def render_slots(pack: SlotPack) -> list[int]:
    """Which slots an overlay should draw: the manifest's foreground if
    present, otherwise every active (or all) slots."""
    meta = pack.meta or {}
    if "foreground" in meta:
        return [int(k) for k in meta["foreground"]]
    if pack.labels is not None:
        return [k for k, rec in enumerate(pack.labels) if rec.get("active", True)]
    return list(range(pack.num_slots))


def export_overlays(
    pack: SlotPack,
    video: np.ndarray,
    out_dir: str | Path,
    slots: list[int] | None = None,
) -> list[Path]:
    """Write one PNG per frame; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    T, gh, gw = pack.assignment.shape
    p = pack.patch_size
    if video.shape[0] != T or video.shape[1] != gh * p or video.shape[2] != gw * p:
        raise ValueError(
            f"video {video.shape} does not match pack grid {T}x{gh * p}x{gw * p}"
        )
    draw_slots = render_slots(pack) if slots is None else slots
    paths = []
    for t in range(T):
        frame = (np.clip(video[t], 0.0, 1.0) * 255).astype(np.uint8).copy()
        captions = []
        for k in draw_slots:
            mask = pack.assignment[t] == k
            if not mask.any():
                continue
            color = np.asarray(PALETTE[k % len(PALETTE)], dtype=np.float32)
            px = np.repeat(np.repeat(mask, p, axis=0), p, axis=1)
            frame[px] = (
                (1 - BLEND) * frame[px].astype(np.float32) + BLEND * color
            ).astype(np.uint8)
            rr, cc = np.nonzero(mask)
            rec = pack.labels[k] if pack.labels is not None else None
            captions.append((int(cc.min()) * p, int(rr.min()) * p, _caption(rec, k)))
        img = Image.fromarray(frame)
        drawer = ImageDraw.Draw(img)
        for x, y, text in captions:
            drawer.text((x + 1, max(0, y - 11) + 1), text, fill=(0, 0, 0))
            drawer.text((x, max(0, y - 11)), text, fill=(255, 255, 255))
        path = out_dir / f"frame_{t:03d}.png"
        img.save(path)
        paths.append(path)
    return paths
