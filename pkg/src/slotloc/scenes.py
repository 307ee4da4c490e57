"""Deterministic moving-sprite scenes with patch-aligned ground truth.

A scene is a short clip of flat-colored sprites (rectangles and crosses)
translating at constant velocity over a static background. Sprites live on
the patch grid, so ground-truth masks are exact at patch resolution and
boxes are tight pixel boxes of those masks. Later-indexed sprites occlude
earlier ones; per-frame masks are disjoint by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import arrayio

DEFAULT_CLASSES = ("car", "bus", "dog", "cat", "bird", "boat")
BACKGROUND_COLOR = (0.12, 0.12, 0.14)
BACKGROUND_ID = -1

SPRITE_SHAPES = ("rect", "cross")


class SceneConfigError(ValueError):
    """A SceneConfig violates its own invariants."""


@dataclass(frozen=True)
class SceneConfig:
    num_frames: int = 8
    height: int = 64
    width: int = 64
    patch_size: int = 8
    num_objects: int = 2
    class_catalog: tuple[str, ...] = DEFAULT_CLASSES
    velocity_range: int = 1  # per-axis patches/frame, sampled from [-v, v]
    noise_std: float = 0.0  # feature-space noise, consumed by oracle backends
    seed: int = 0
    distinct_classes: bool = True
    size_range: tuple[int, int] = (2, 3)  # sprite extent in patches

    def validate(self) -> None:
        if self.num_frames < 1:
            raise SceneConfigError("num_frames must be >= 1")
        if self.height < 1 or self.width < 1:
            raise SceneConfigError("resolution must be positive")
        if self.patch_size < 1:
            raise SceneConfigError("patch_size must be >= 1")
        if self.height % self.patch_size or self.width % self.patch_size:
            raise SceneConfigError(
                f"patch_size {self.patch_size} must divide resolution "
                f"{self.height}x{self.width}"
            )
        if not self.class_catalog:
            raise SceneConfigError("class catalog is empty")
        if len(set(self.class_catalog)) != len(self.class_catalog):
            raise SceneConfigError("class catalog has duplicate names")
        if self.num_objects < 0:
            raise SceneConfigError("num_objects must be >= 0")
        if self.distinct_classes and self.num_objects > len(self.class_catalog):
            raise SceneConfigError(
                f"cannot place {self.num_objects} distinct classes from a "
                f"catalog of {len(self.class_catalog)}"
            )
        if self.velocity_range < 0:
            raise SceneConfigError("velocity_range must be >= 0")
        lo, hi = self.size_range
        if not (1 <= lo <= hi):
            raise SceneConfigError("size_range must satisfy 1 <= lo <= hi")
        if self.noise_std < 0:
            raise SceneConfigError("noise_std must be >= 0")

    @property
    def grid_height(self) -> int:
        return self.height // self.patch_size

    @property
    def grid_width(self) -> int:
        return self.width // self.patch_size


@dataclass(frozen=True)
class Sprite:
    shape: str  # "rect" | "cross"
    size: tuple[int, int]  # patches, (rows, cols)
    class_id: int
    color: tuple[float, float, float]
    start: tuple[int, int]  # patch coords of the top-left cell at t=0, (row, col)
    velocity: tuple[int, int]  # patches/frame, (rows, cols)


def sprite_cells(shape: str, size: tuple[int, int]) -> np.ndarray:
    """Occupied cell offsets (n, 2) relative to the sprite's top-left corner."""
    h, w = size
    if shape == "rect":
        rr, cc = np.mgrid[0:h, 0:w]
        return np.stack([rr.ravel(), cc.ravel()], axis=1)
    if shape == "cross":
        rr, cc = np.mgrid[0:h, 0:w]
        mid_r, mid_c = h // 2, w // 2
        keep = (rr == mid_r) | (cc == mid_c)
        return np.stack([rr[keep], cc[keep]], axis=1)
    raise SceneConfigError(f"unknown sprite shape {shape!r}")


def sprite_patch_mask(sprite: Sprite, t: int, grid_hw: tuple[int, int]) -> np.ndarray:
    """Boolean occupancy of ``sprite`` at frame ``t`` on the patch grid.

    Position advances linearly, cells falling off the grid are clipped.
    """
    gh, gw = grid_hw
    cells = sprite_cells(sprite.shape, sprite.size)
    r = cells[:, 0] + sprite.start[0] + sprite.velocity[0] * t
    c = cells[:, 1] + sprite.start[1] + sprite.velocity[1] * t
    keep = (r >= 0) & (r < gh) & (c >= 0) & (c < gw)
    mask = np.zeros((gh, gw), dtype=bool)
    mask[r[keep], c[keep]] = True
    return mask


@dataclass
class GroundTruth:
    """Per-object patch masks (post-occlusion), class ids, and tight pixel boxes."""

    patch_masks: np.ndarray  # (num_objects, T, H', W') bool, disjoint per frame
    class_ids: np.ndarray  # (num_objects,) int32, indices into class_names
    class_names: tuple[str, ...]
    patch_size: int
    boxes: np.ndarray = field(default=None)  # (n, 6) int32: t, obj, x0, y0, x1, y1

    def __post_init__(self):
        if self.boxes is None:
            self.boxes = compute_boxes(self.patch_masks, self.patch_size)

    @property
    def num_objects(self) -> int:
        return self.patch_masks.shape[0]

    @property
    def num_frames(self) -> int:
        return self.patch_masks.shape[1]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.patch_masks.shape[2], self.patch_masks.shape[3]

    def object_name(self, obj: int) -> str:
        return self.class_names[int(self.class_ids[obj])]

    def frame_masks(self, t: int) -> np.ndarray:
        return self.patch_masks[:, t]

    def background_mask(self, t: int) -> np.ndarray:
        if self.num_objects == 0:
            return np.ones(self.grid_shape, dtype=bool)
        return ~self.patch_masks[:, t].any(axis=0)

    def boxes_in_frame(self, t: int) -> list[tuple[int, int, int, int, int]]:
        """[(obj, x0, y0, x1, y1)] for objects visible at frame t."""
        rows = self.boxes[self.boxes[:, 0] == t]
        return [tuple(int(v) for v in row[1:]) for row in rows]

    def patch_class_map(self, t: int) -> np.ndarray:
        """(H', W') int32 map of class ids, BACKGROUND_ID where no object sits."""
        out = np.full(self.grid_shape, BACKGROUND_ID, dtype=np.int32)
        for obj in range(self.num_objects):
            out[self.patch_masks[obj, t]] = self.class_ids[obj]
        return out


def compute_boxes(patch_masks: np.ndarray, patch_size: int) -> np.ndarray:
    """Tight pixel boxes of every nonempty per-frame mask, (n, 6) int32."""
    rows = []
    num_objects, num_frames = patch_masks.shape[:2]
    for t in range(num_frames):
        for obj in range(num_objects):
            box = mask_box(patch_masks[obj, t], patch_size)
            if box is not None:
                rows.append((t, obj, *box))
    if not rows:
        return np.zeros((0, 6), dtype=np.int32)
    return np.asarray(rows, dtype=np.int32)


def mask_box(mask: np.ndarray, patch_size: int) -> tuple[int, int, int, int] | None:
    """Tight (x0, y0, x1, y1) pixel box of a patch mask, None when empty."""
    rr, cc = np.nonzero(mask)
    if rr.size == 0:
        return None
    p = patch_size
    return (int(cc.min()) * p, int(rr.min()) * p, (int(cc.max()) + 1) * p, (int(rr.max()) + 1) * p)


def _sample_sprite(rng: np.random.Generator, config: SceneConfig, class_id: int) -> Sprite:
    gh, gw = config.grid_height, config.grid_width
    shape = SPRITE_SHAPES[int(rng.integers(0, len(SPRITE_SHAPES)))]
    lo, hi = config.size_range
    if shape == "cross":
        # odd extent so the arms have a center; at least 3 when the range allows
        s = int(rng.integers(lo, hi + 1))
        s = max(3, s | 1) if hi >= 3 else max(1, s | 1)
        size = (min(s, gh), min(s, gw))
    else:
        size = (
            int(min(rng.integers(lo, hi + 1), gh)),
            int(min(rng.integers(lo, hi + 1), gw)),
        )
    color = tuple(float(x) for x in rng.uniform(0.25, 0.95, size=3))

    v = config.velocity_range
    max_r = max(0, gh - size[0])
    max_c = max(0, gw - size[1])
    start = (0, 0)
    velocity = (0, 0)
    for _ in range(64):
        velocity = (int(rng.integers(-v, v + 1)), int(rng.integers(-v, v + 1)))
        start = (int(rng.integers(0, max_r + 1)), int(rng.integers(0, max_c + 1)))
        r_end = start[0] + velocity[0] * (config.num_frames - 1)
        c_end = start[1] + velocity[1] * (config.num_frames - 1)
        if 0 <= r_end <= max_r and 0 <= c_end <= max_c:
            break  # fully visible for the whole clip
    return Sprite(shape=shape, size=size, class_id=class_id, color=color, start=start, velocity=velocity)


def generate_scene(config: SceneConfig) -> tuple[np.ndarray, GroundTruth]:
    """Render one scene. Returns (video (T, H, W, 3) float32 in [0, 1], gt).

    Identical configs produce bit-identical outputs.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    gh, gw = config.grid_height, config.grid_width
    T = config.num_frames

    n_classes = len(config.class_catalog)
    class_ids = rng.choice(n_classes, size=config.num_objects, replace=not config.distinct_classes)
    sprites = [_sample_sprite(rng, config, int(cid)) for cid in class_ids]

    raw = np.zeros((config.num_objects, T, gh, gw), dtype=bool)
    for i, sprite in enumerate(sprites):
        for t in range(T):
            raw[i, t] = sprite_patch_mask(sprite, t, (gh, gw))

    # higher index occludes: visible mask drops cells owned by any later sprite
    visible = raw.copy()
    for i in range(config.num_objects):
        for j in range(i + 1, config.num_objects):
            visible[i] &= ~raw[j]

    gt = GroundTruth(
        patch_masks=visible,
        class_ids=np.asarray(class_ids, dtype=np.int32),
        class_names=tuple(config.class_catalog),
        patch_size=config.patch_size,
    )

    video = np.empty((T, config.height, config.width, 3), dtype=np.float32)
    video[:] = np.asarray(BACKGROUND_COLOR, dtype=np.float32)
    p = config.patch_size
    for i, sprite in enumerate(sprites):
        color = np.asarray(sprite.color, dtype=np.float32)
        for t in range(T):
            px = np.repeat(np.repeat(visible[i, t], p, axis=0), p, axis=1)
            video[t][px] = color
    return video, gt


@dataclass
class Scene:
    config: SceneConfig
    video: np.ndarray
    gt: GroundTruth


def generate_scenes(
    config: SceneConfig,
    count: int,
    seed: int | None = None,
    num_objects_range: tuple[int, int] | None = None,
) -> list[Scene]:
    """Generate ``count`` scenes, seeds derived from ``seed`` (or config.seed)."""
    base = config.seed if seed is None else seed
    picker = np.random.default_rng(base ^ 0x5CE9E5)
    out = []
    for i in range(count):
        cfg = replace(config, seed=base + i)
        if num_objects_range is not None:
            lo, hi = num_objects_range
            cfg = replace(cfg, num_objects=int(picker.integers(lo, hi + 1)))
        video, gt = generate_scene(cfg)
        out.append(Scene(config=cfg, video=video, gt=gt))
    return out


# ---------------------------------------------------------------------------
# scene archives


@dataclass
class SceneBundle:
    """A scene archive loaded from disk, optionally with cached oracle outputs."""

    meta: dict
    video: np.ndarray
    gt: GroundTruth
    features: np.ndarray | None = None  # (T, H', W', D) float32
    sem_patches: np.ndarray | None = None  # (T, H', W', D_sem) float32
    sem_summary: np.ndarray | None = None  # (T, D_sem) float32


def save_scene(
    path: str | Path,
    scene: Scene,
    features: np.ndarray | None = None,
    sem_patches: np.ndarray | None = None,
    sem_summary: np.ndarray | None = None,
) -> None:
    cfg = scene.config
    meta = {
        "kind": "scene",
        "T": cfg.num_frames,
        "H": cfg.height,
        "W": cfg.width,
        "p": cfg.patch_size,
        "classes": list(cfg.class_catalog),
        "seed": cfg.seed,
        "num_objects": scene.gt.num_objects,
    }
    arrays = {
        "video": scene.video.astype(np.float32, copy=False),
        "masks": scene.gt.patch_masks.astype(np.uint8),
        "class_ids": scene.gt.class_ids.astype(np.int32, copy=False),
        "boxes": scene.gt.boxes.astype(np.int32, copy=False),
    }
    if features is not None:
        arrays["features"] = features.astype(np.float32, copy=False)
    if sem_patches is not None:
        arrays["sem_patches"] = sem_patches.astype(np.float32, copy=False)
    if sem_summary is not None:
        arrays["sem_summary"] = sem_summary.astype(np.float32, copy=False)
    arrayio.save_archive(path, arrays, meta=meta)


def load_scene(path: str | Path) -> SceneBundle:
    meta, arrays = arrayio.load_archive(path)
    if meta.get("kind") != "scene":
        raise arrayio.ArchiveError(f"{path}: not a scene archive")
    for key in ("video", "masks", "class_ids", "boxes"):
        if key not in arrays:
            raise arrayio.ArchiveError(f"{path}: scene archive missing {key!r}")
    gt = GroundTruth(
        patch_masks=arrays["masks"].astype(bool),
        class_ids=arrays["class_ids"],
        class_names=tuple(meta["classes"]),
        patch_size=int(meta["p"]),
        boxes=arrays["boxes"],
    )
    return SceneBundle(
        meta=meta,
        video=arrays["video"],
        gt=gt,
        features=arrays.get("features"),
        sem_patches=arrays.get("sem_patches"),
        sem_summary=arrays.get("sem_summary"),
    )
