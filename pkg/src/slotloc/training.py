"""Optimization loops and checkpoint plumbing for the trainable modules."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import arrayio
from .grouping import GroupingConfig, GroupingModel, reconstruction_loss


class TrainingDivergedError(RuntimeError):
    """Loss left the finite range; carries the step and the last few values."""

    def __init__(self, step: int, loss: float, recent: Sequence[float]):
        super().__init__(
            f"training diverged at step {step}: loss={loss!r}; recent losses {list(recent)}"
        )
        self.step = step
        self.loss = loss


def lr_at(step: int, base: float, warmup_steps: int, decay_rate: float, decay_steps: int) -> float:
    """Linear warm-up followed by smooth exponential decay."""
    warm = min(1.0, (step + 1) / warmup_steps) if warmup_steps > 0 else 1.0
    decay = decay_rate ** (step / decay_steps) if decay_steps > 0 else 1.0
    return base * warm * decay


@dataclass(frozen=True)
class TrainGroupingConfig:
    steps: int = 2000
    batch_size: int = 4
    learning_rate: float = 3e-3
    warmup_steps: int = 200
    decay_rate: float = 0.5
    decay_steps: int = 1000
    grad_clip: float = 1.0
    seed: int = 0


def train_grouping(
    dataset: Sequence[np.ndarray],
    config: GroupingConfig,
    train: TrainGroupingConfig | None = None,
) -> tuple[GroupingModel, list[float]]:
    """Fit the grouping model on feature volumes (each (T, H', W', D)).

    Deterministic given the seeds: batch order, slot-init noise, and
    parameter init all come from explicit generators. Raises
    TrainingDivergedError as soon as the loss stops being finite.
    """
    if not dataset:
        raise ValueError("empty dataset")
    train = train or TrainGroupingConfig()
    model = GroupingModel(config)
    volumes = [torch.as_tensor(np.ascontiguousarray(v), dtype=model.dtype) for v in dataset]
    opt = torch.optim.Adam(model.parameters(), lr=train.learning_rate)
    rng = np.random.default_rng(train.seed)
    g_noise = torch.Generator().manual_seed(train.seed ^ 0x9E3779B9)
    curve: list[float] = []
    for step in range(train.steps):
        lr = lr_at(step, train.learning_rate, train.warmup_steps, train.decay_rate, train.decay_steps)
        for group in opt.param_groups:
            group["lr"] = lr
        idx = rng.integers(0, len(volumes), size=train.batch_size)
        loss = None
        for i in idx:
            _, _, y, alpha = model(volumes[int(i)], generator=g_noise)
            li = reconstruction_loss(y, alpha, volumes[int(i)])
            loss = li if loss is None else loss + li
        loss = loss / len(idx)
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


# ---------------------------------------------------------------------------
# checkpoints


def model_state_arrays(model: torch.nn.Module) -> dict[str, np.ndarray]:
    """State dict as named float32 numpy arrays (parameter order preserved)."""
    return {
        name: tensor.detach().cpu().numpy().astype(np.float32)
        for name, tensor in model.state_dict().items()
    }


def load_state_arrays(model: torch.nn.Module, arrays: dict[str, np.ndarray]) -> None:
    state = {name: torch.from_numpy(np.ascontiguousarray(a)) for name, a in arrays.items()}
    model.load_state_dict(state, strict=True)


def save_grouping_checkpoint(
    path: str | Path, model: GroupingModel, step: int | None = None, extra: dict | None = None
) -> None:
    meta = {"kind": "grouping_model", "config": asdict(model.config)}
    if step is not None:
        meta["step"] = int(step)
    if extra:
        meta["extra"] = extra
    arrayio.save_checkpoint(path, meta, model_state_arrays(model))


def load_grouping_checkpoint(path: str | Path) -> tuple[GroupingModel, dict]:
    meta, arrays = arrayio.load_checkpoint(path)
    if meta.get("kind") != "grouping_model":
        raise arrayio.ArchiveError(f"{path}: not a grouping checkpoint")
    config = GroupingConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in meta["config"].items()})
    model = GroupingModel(config)
    load_state_arrays(model, arrays)
    model.eval()
    return model, meta
