"""Patch-level semantic readout trained against frozen frame summaries.

The teacher's pooled summary lives in text space but its patch tokens do
not. A single multi-head self-attention pass with a residual connection
re-expresses the patch tokens; summary-guided pooling turns them into one
vector per frame, and a symmetric contrastive loss pulls each pooled vector
toward its own frame's summary against the other frames in the batch. The
teacher is never updated.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import arrayio
from .oracles import OracleSemanticTeacher
from .scenes import GroundTruth
from .training import TrainingDivergedError, load_state_arrays, model_state_arrays


@dataclass(frozen=True)
class AdapterConfig:
    dim: int = 32
    heads: int = 4
    seed: int = 0

    def validate(self) -> None:
        if self.heads < 1:
            raise ValueError("heads must be >= 1")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} must be divisible by heads {self.heads}")


class AdapterModel(nn.Module):
    """One multi-head self-attention block applied residually to patch tokens."""

    def __init__(self, config: AdapterConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        config.validate()
        self.config = config
        d = config.dim
        self.to_q = nn.Linear(d, d)
        self.to_k = nn.Linear(d, d)
        self.to_v = nn.Linear(d, d)
        self.to_out = nn.Linear(d, d)
        g = torch.Generator().manual_seed(config.seed)
        for lin in (self.to_q, self.to_k, self.to_v, self.to_out):
            fan = math.sqrt(6.0 / (2 * d))
            with torch.no_grad():
                lin.weight.uniform_(-fan, fan, generator=g)
                lin.bias.zero_()
        self.to(dtype)

    @property
    def dtype(self) -> torch.dtype:
        return self.to_q.weight.dtype

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        """tokens (..., M, D) -> same shape: tokens + MHSA(tokens)."""
        single = tokens.dim() == 2
        x = tokens[None] if single else tokens
        B, M, D = x.shape
        h = self.config.heads
        dh = D // h

        def split(t):  # (B, M, D) -> (B, h, M, dh)
            return t.reshape(B, M, h, dh).transpose(1, 2)

        q, k, v = split(self.to_q(x)), split(self.to_k(x)), split(self.to_v(x))
        attn = torch.softmax((q @ k.transpose(-1, -2)) / math.sqrt(dh), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, M, D)
        out = x + self.to_out(out)
        return out[0] if single else out


def readout_patches(tokens: np.ndarray | torch.Tensor, model: AdapterModel) -> torch.Tensor:
    """Apply the adapter to teacher patch tokens (M, D) or (B, M, D)."""
    x = torch.as_tensor(tokens, dtype=model.dtype)
    if x.dim() not in (2, 3):
        raise ValueError(f"expected (M, D) or (B, M, D), got {tuple(x.shape)}")
    return model(x)


def cross_attention_pool(
    patches: torch.Tensor, summary: torch.Tensor, return_weights: bool = False
):
    """Summary-guided convex pooling of patch tokens.

    patches (M, D) or (B, M, D); summary (D,) or (B, D). Weights are a
    softmax over patches of the patch-summary dot products.
    """
    if patches.dim() == 2:
        w = torch.softmax(patches @ summary, dim=0)  # (M,)
        pooled = w @ patches
    else:
        logits = torch.einsum("bmd,bd->bm", patches, summary)
        w = torch.softmax(logits, dim=1)
        pooled = torch.einsum("bm,bmd->bd", w, patches)
    return (pooled, w) if return_weights else pooled


def similarity_matrix(pooled: torch.Tensor, summaries: torch.Tensor) -> torch.Tensor:
    """Pairwise cosine similarities, rows = pooled frames, cols = summaries."""
    pn = pooled.norm(dim=-1)
    sn = summaries.norm(dim=-1)
    if (pn == 0).any() or (sn == 0).any():
        raise ValueError("zero-norm row: cosine similarity undefined")
    a = pooled / pn[:, None]
    b = summaries / sn[:, None]
    return a @ b.T


def info_nce(sim: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy of each row against its diagonal entry."""
    if sim.dim() != 2 or sim.shape[0] != sim.shape[1]:
        raise ValueError(f"expected a square similarity matrix, got {tuple(sim.shape)}")
    return -torch.log_softmax(sim, dim=1).diagonal().mean()


@dataclass(frozen=True)
class TrainAdapterConfig:
    steps: int = 1000
    batch_size: int = 64
    learning_rate: float = 1e-3
    grad_clip: float = 1.0
    seed: int = 0


def train_adapter(
    frames: list[tuple[GroundTruth, int]],
    teacher: OracleSemanticTeacher,
    config: AdapterConfig,
    train: TrainAdapterConfig | None = None,
) -> tuple[AdapterModel, list[float]]:
    """Fit the adapter on (ground truth, frame index) samples.

    Returns the trained model and the per-step loss curve. Deterministic
    given the seeds; raises TrainingDivergedError if loss leaves the finite
    range.
    """
    if not frames:
        raise ValueError("empty frame list")
    train = train or TrainAdapterConfig()
    model = AdapterModel(config)
    opt = torch.optim.Adam(model.parameters(), lr=train.learning_rate)
    rng = np.random.default_rng(train.seed)
    curve: list[float] = []
    for step in range(train.steps):
        idx = rng.integers(0, len(frames), size=train.batch_size)
        noise_seeds = rng.integers(0, 2**31 - 1, size=train.batch_size)
        toks, sums = [], []
        for i, s in zip(idx, noise_seeds):
            gt, t = frames[int(i)]
            summary, tokens = teacher.encode_frame(gt, t, seed=int(s))
            toks.append(tokens.reshape(-1, teacher.dim))
            sums.append(summary)
        p_raw = torch.as_tensor(np.stack(toks), dtype=model.dtype)
        cls = torch.as_tensor(np.stack(sums), dtype=model.dtype)
        p_hat = model(p_raw)
        pooled = cross_attention_pool(p_hat, cls)
        loss = info_nce(similarity_matrix(pooled, cls))
        opt.zero_grad()
        loss.backward()
        if train.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(model.parameters(), train.grad_clip)
        opt.step()
        val = float(loss.detach())
        if not math.isfinite(val):
            raise TrainingDivergedError(step, val, curve[-5:])
        curve.append(val)
    return model, curve


def save_adapter_checkpoint(
    path: str | Path, model: AdapterModel, step: int | None = None, extra: dict | None = None
) -> None:
    meta = {"kind": "adapter_model", "config": asdict(model.config)}
    if step is not None:
        meta["step"] = int(step)
    if extra:
        meta["extra"] = extra
    arrayio.save_checkpoint(path, meta, model_state_arrays(model))


def load_adapter_checkpoint(path: str | Path) -> tuple[AdapterModel, dict]:
    meta, arrays = arrayio.load_checkpoint(path)
    if meta.get("kind") != "adapter_model":
        raise arrayio.ArchiveError(f"{path}: not an adapter checkpoint")
    model = AdapterModel(AdapterConfig(**meta["config"]))
    load_state_arrays(model, arrays)
    model.eval()
    return model, meta


def encode_semantic(
    gt: GroundTruth,
    t: int,
    teacher: OracleSemanticTeacher,
    model: AdapterModel | None = None,
    seed: int | None = None,
) -> np.ndarray:
    """(H', W', D) float32 semantic features for one frame.

    With a model, teacher patch tokens pass through the adapter; without one
    the raw teacher tokens are returned (the unadapted baseline).
    """
    _, tokens = teacher.encode_frame(gt, t, seed=seed)
    if model is None:
        return tokens
    gh, gw, d = tokens.shape
    with torch.no_grad():
        out = model(torch.as_tensor(tokens.reshape(-1, d), dtype=model.dtype))
    return out.cpu().numpy().astype(np.float32).reshape(gh, gw, d)


def semantic_volume(
    gt: GroundTruth,
    teacher: OracleSemanticTeacher,
    model: AdapterModel | None = None,
    seed: int | None = None,
) -> np.ndarray:
    """Stack encode_semantic over all frames: (T, H', W', D) float32."""
    frames = [
        encode_semantic(gt, t, teacher, model, seed=None if seed is None else seed + t)
        for t in range(gt.num_frames)
    ]
    return np.stack(frames)


def retrieval_accuracy(
    volume: np.ndarray, gt: GroundTruth, text_features: np.ndarray, row_for_class: dict[int, int]
) -> tuple[float, int]:
    """Top-1 patch-to-text accuracy over object patches of one clip.

    Returns (accuracy, number of object patches); accuracy is 0.0 when the
    clip has no object patches.
    """
    tf = text_features / np.linalg.norm(text_features, axis=1, keepdims=True)
    hits = 0
    total = 0
    for t in range(gt.num_frames):
        for obj in range(gt.num_objects):
            mask = gt.patch_masks[obj, t]
            if not mask.any():
                continue
            feats = volume[t][mask]  # (n, D)
            norms = np.linalg.norm(feats, axis=1, keepdims=True)
            norms[norms == 0] = 1.0
            sims = (feats / norms) @ tf.T
            pred = sims.argmax(axis=1)
            hits += int((pred == row_for_class[int(gt.class_ids[obj])]).sum())
            total += feats.shape[0]
    return (hits / total if total else 0.0), total
