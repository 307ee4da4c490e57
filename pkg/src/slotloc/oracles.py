"""Oracle stand-ins for the frozen backbones.

The feature backend plays the role of a self-supervised video encoder: every
patch gets its object-class center (margin-separated by construction) plus
Gaussian noise. The semantic teacher plays the role of a vision-language
model: its text embeddings and frame summaries live in one space, while its
patch tokens are passed through a fixed random rotation so that, before
adaptation, patch-to-text retrieval sits at chance. Both are deterministic
given their seeds and are never updated by training.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import arrayio
from .scenes import BACKGROUND_ID, GroundTruth


class OracleConfigError(ValueError):
    """An oracle was configured inconsistently with its class list."""


def _orthonormal_rows(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """(n, dim) float64 with orthonormal rows, deterministic given rng state."""
    if n > dim:
        raise OracleConfigError(f"need dim >= {n} to fit {n} orthonormal centers, got {dim}")
    g = rng.normal(size=(dim, n))
    q, r = np.linalg.qr(g)
    q = q * np.sign(np.diag(r))  # fix QR sign ambiguity
    return q.T[:n]


def _hashed_unit(name: str, dim: int, seed: int) -> np.ndarray:
    """Deterministic unit vector for an out-of-catalog name."""
    digest = hashlib.sha256(f"{seed}|{name}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


class OracleFeatureBackend:
    """Margin-separated per-class feature centers plus a background center."""

    def __init__(
        self,
        class_names: tuple[str, ...],
        feature_dim: int = 32,
        margin: float = 4.0,
        noise_std: float = 0.0,
        seed: int = 0,
    ):
        if not class_names:
            raise OracleConfigError("class_names is empty")
        self.class_names = tuple(class_names)
        self.feature_dim = int(feature_dim)
        self.margin = float(margin)
        self.noise_std = float(noise_std)
        self.seed = int(seed)
        rng = np.random.default_rng(seed)
        # orthonormal rows scaled by margin/sqrt(2): pairwise distance == margin
        base = _orthonormal_rows(len(class_names) + 1, feature_dim, rng)
        scaled = (base * (margin / np.sqrt(2.0))).astype(np.float32)
        self.class_centers = scaled[: len(class_names)]  # (C, D)
        self.background_center = scaled[len(class_names)]  # (D,)

    def center_for(self, class_id: int) -> np.ndarray:
        if class_id == BACKGROUND_ID:
            return self.background_center
        return self.class_centers[class_id]

    def pairwise_margin(self) -> float:
        """Smallest distance between any two centers (background included)."""
        all_c = np.concatenate([self.class_centers, self.background_center[None]], axis=0)
        d = np.linalg.norm(all_c[:, None] - all_c[None, :], axis=-1)
        d[np.diag_indices_from(d)] = np.inf
        return float(d.min())

    def features(self, clip: np.ndarray, gt: GroundTruth, seed: int | None = None) -> np.ndarray:
        """(T, H', W', D) float32 feature volume for a clip.

        Each patch's feature is its class center (background center where no
        object sits) plus N(0, noise_std) noise. Deterministic given seed.
        """
        T = gt.num_frames
        gh, gw = gt.grid_shape
        if clip.shape[0] != T or clip.shape[1] != gh * gt.patch_size or clip.shape[2] != gw * gt.patch_size:
            raise ValueError(
                f"clip shape {clip.shape} does not match ground truth grid "
                f"({T} frames of {gh * gt.patch_size}x{gw * gt.patch_size})"
            )
        rng = np.random.default_rng(self.seed if seed is None else seed)
        out = np.empty((T, gh, gw, self.feature_dim), dtype=np.float64)
        for t in range(T):
            cmap = gt.patch_class_map(t)
            centers = np.where(
                (cmap == BACKGROUND_ID)[..., None],
                self.background_center[None, None].astype(np.float64),
                self.class_centers.astype(np.float64)[np.clip(cmap, 0, None)],
            )
            out[t] = centers
        if self.noise_std > 0:
            out += rng.normal(0.0, self.noise_std, size=out.shape)
        return out.astype(np.float32)

    def save(self, path: str | Path) -> None:
        meta = {
            "kind": "feature_backend",
            "class_names": list(self.class_names),
            "feature_dim": self.feature_dim,
            "margin": self.margin,
            "noise_std": self.noise_std,
            "seed": self.seed,
        }
        arrayio.save_checkpoint(
            path,
            meta,
            {"class_centers": self.class_centers, "background_center": self.background_center},
        )

    @classmethod
    def load(cls, path: str | Path) -> "OracleFeatureBackend":
        meta, arrays = arrayio.load_checkpoint(path)
        if meta.get("kind") != "feature_backend":
            raise arrayio.ArchiveError(f"{path}: not a feature backend checkpoint")
        obj = cls.__new__(cls)
        obj.class_names = tuple(meta["class_names"])
        obj.feature_dim = int(meta["feature_dim"])
        obj.margin = float(meta["margin"])
        obj.noise_std = float(meta["noise_std"])
        obj.seed = int(meta["seed"])
        obj.class_centers = arrays["class_centers"]
        obj.background_center = arrays["background_center"]
        return obj


def oracle_features(
    clip: np.ndarray, gt: GroundTruth, backend: OracleFeatureBackend, seed: int | None = None
) -> np.ndarray:
    return backend.features(clip, gt, seed=seed)


class OracleSemanticTeacher:
    """Frozen vision-language oracle over the scene catalog.

    Text embeddings are unit-norm class centers. Frame summaries are the
    dominant visible class's center plus noise, in text space. Patch tokens
    are centers plus noise passed through a fixed random rotation, so raw
    patch-to-text cosine retrieval is uninformative until an adapter undoes
    the rotation. ``rotate_patches=False`` removes the rotation (an oracle
    whose patch tokens are already text-aligned).
    """

    def __init__(
        self,
        class_names: tuple[str, ...],
        background_name: str = "grass",
        dim: int = 32,
        noise_std: float = 0.02,
        seed: int = 0,
        rotate_patches: bool = True,
    ):
        if not class_names:
            raise OracleConfigError("class_names is empty")
        if background_name in class_names:
            raise OracleConfigError(f"background name {background_name!r} collides with a class name")
        self.class_names = tuple(class_names)
        self.background_name = str(background_name)
        self.dim = int(dim)
        self.noise_std = float(noise_std)
        self.seed = int(seed)
        self.rotate_patches = bool(rotate_patches)
        rng = np.random.default_rng(seed)
        centers = _orthonormal_rows(len(class_names) + 1, dim, rng)  # unit rows
        self.class_centers = centers[: len(class_names)].astype(np.float32)
        self.background_center = centers[len(class_names)].astype(np.float32)
        rot = _orthonormal_rows(dim, dim, rng)  # full random rotation
        self.rotation = rot.astype(np.float32) if rotate_patches else np.eye(dim, dtype=np.float32)

    def _center_for(self, class_id: int) -> np.ndarray:
        if class_id == BACKGROUND_ID:
            return self.background_center
        return self.class_centers[class_id]

    def encode_frame(
        self, gt: GroundTruth, t: int, seed: int | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Teacher outputs for frame ``t``: (summary (D,), patch tokens (H', W', D)).

        The summary is the center of the most visible class (background when
        no object is visible); patch tokens are rotated noisy centers.
        """
        if not 0 <= t < gt.num_frames:
            raise ValueError(f"frame index {t} out of range [0, {gt.num_frames})")
        rng = np.random.default_rng((self.seed, 0xE11, t) if seed is None else seed)
        cmap = gt.patch_class_map(t)
        counts = {}
        for obj in range(gt.num_objects):
            n = int(gt.patch_masks[obj, t].sum())
            if n > 0:
                cid = int(gt.class_ids[obj])
                counts[cid] = counts.get(cid, 0) + n
        if counts:
            # dominant class: most visible patches, ties to the lower class id
            dominant = min(counts, key=lambda cid: (-counts[cid], cid))
        else:
            dominant = BACKGROUND_ID
        summary = self._center_for(dominant).astype(np.float64) + rng.normal(
            0.0, self.noise_std, size=self.dim
        )

        centers = np.where(
            (cmap == BACKGROUND_ID)[..., None],
            self.background_center[None, None].astype(np.float64),
            self.class_centers.astype(np.float64)[np.clip(cmap, 0, None)],
        )
        tokens = centers + rng.normal(0.0, self.noise_std, size=centers.shape)
        tokens = tokens @ self.rotation.astype(np.float64).T
        return summary.astype(np.float32), tokens.astype(np.float32)

    def embed_text(self, text: str) -> np.ndarray:
        """Unit-norm embedding of a prompt; known names match by substring."""
        known = list(self.class_names) + [self.background_name]
        hits = [n for n in known if n in text]
        if hits:
            name = max(hits, key=len)  # longest mention wins
            if name == self.background_name:
                return self.background_center.copy()
            return self.class_centers[self.class_names.index(name)].copy()
        return _hashed_unit(text, self.dim, self.seed).astype(np.float32)

    def save(self, path: str | Path) -> None:
        meta = {
            "kind": "semantic_teacher",
            "class_names": list(self.class_names),
            "background_name": self.background_name,
            "dim": self.dim,
            "noise_std": self.noise_std,
            "seed": self.seed,
            "rotate_patches": self.rotate_patches,
        }
        arrayio.save_checkpoint(
            path,
            meta,
            {
                "class_centers": self.class_centers,
                "background_center": self.background_center,
                "rotation": self.rotation,
            },
        )

    @classmethod
    def load(cls, path: str | Path) -> "OracleSemanticTeacher":
        meta, arrays = arrayio.load_checkpoint(path)
        if meta.get("kind") != "semantic_teacher":
            raise arrayio.ArchiveError(f"{path}: not a semantic teacher checkpoint")
        obj = cls.__new__(cls)
        obj.class_names = tuple(meta["class_names"])
        obj.background_name = meta["background_name"]
        obj.dim = int(meta["dim"])
        obj.noise_std = float(meta["noise_std"])
        obj.seed = int(meta["seed"])
        obj.rotate_patches = bool(meta["rotate_patches"])
        obj.class_centers = arrays["class_centers"]
        obj.background_center = arrays["background_center"]
        obj.rotation = arrays["rotation"]
        return obj

    def state_bytes(self) -> bytes:
        """Concatenated parameter bytes, for asserting the teacher stays frozen."""
        return b"".join(
            np.ascontiguousarray(a).tobytes()
            for a in (self.class_centers, self.background_center, self.rotation)
        )


def oracle_semantics(
    gt: GroundTruth, t: int, teacher: OracleSemanticTeacher, seed: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    return teacher.encode_frame(gt, t, seed=seed)
