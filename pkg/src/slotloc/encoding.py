"""Clip preprocessing, patch tokenization, and 3D sinusoidal position codes."""

from __future__ import annotations

import numpy as np
import torch


def preprocess_clip(clip: np.ndarray, patch_size: int, short_side: int | None = None) -> np.ndarray:
    """Resize a clip so both sides are multiples of ``patch_size``.

    Optionally rescales the short side to ``short_side`` first. Resolution is
    always handled by bilinear resizing, never padding. Returns the input
    unchanged when it already conforms.
    """
    if clip.ndim != 4 or clip.shape[-1] != 3:
        raise ValueError(f"expected clip (T, H, W, 3), got {clip.shape}")
    T, H, W = clip.shape[:3]
    if short_side is not None:
        scale = short_side / min(H, W)
        H2, W2 = int(round(H * scale)), int(round(W * scale))
    else:
        H2, W2 = H, W
    p = patch_size
    H3 = max(p, int(round(H2 / p)) * p)
    W3 = max(p, int(round(W2 / p)) * p)
    if (H3, W3) == (H, W):
        return clip
    x = torch.from_numpy(np.ascontiguousarray(clip, dtype=np.float32)).permute(0, 3, 1, 2)
    y = torch.nn.functional.interpolate(x, size=(H3, W3), mode="bilinear", align_corners=False)
    return y.permute(0, 2, 3, 1).contiguous().numpy()


def tokenize(clip: np.ndarray, patch_size: int) -> np.ndarray:
    """Cut a clip into patch tokens: (T, H', W', p*p*3) float32, row-major per patch."""
    if clip.ndim != 4 or clip.shape[-1] != 3:
        raise ValueError(f"expected clip (T, H, W, 3), got {clip.shape}")
    T, H, W, C = clip.shape
    p = patch_size
    if H % p or W % p:
        raise ValueError(f"resolution {H}x{W} not a multiple of patch size {p}")
    hp, wp = H // p, W // p
    x = clip.reshape(T, hp, p, wp, p, C)
    return np.ascontiguousarray(x.transpose(0, 1, 3, 2, 4, 5)).reshape(T, hp, wp, p * p * C).astype(np.float32)


def untokenize(tokens: np.ndarray, patch_size: int) -> np.ndarray:
    """Inverse of :func:`tokenize`."""
    T, hp, wp, F = tokens.shape
    p = patch_size
    C = F // (p * p)
    x = tokens.reshape(T, hp, wp, p, p, C).transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(x).reshape(T, hp * p, wp * p, C)


def positional_encoding(num_frames: int, grid_h: int, grid_w: int, dim: int) -> np.ndarray:
    """(T, H', W', dim) float64 sinusoidal codes over (t, h, w).

    dim is split evenly across the three axes (sin and cos per frequency);
    when dim is not divisible by 6 the trailing channels are zero. The code
    at (0, 0, 0) is zeros on sine channels and ones on cosine channels.
    """
    if dim < 6:
        raise ValueError(f"need dim >= 6 for a 3-axis code, got {dim}")
    d_axis = (dim // 6) * 2  # channels per axis
    n_freq = d_axis // 2
    i = np.arange(n_freq, dtype=np.float64)
    freqs = 1.0 / (10000.0 ** (2.0 * i / d_axis))  # (n_freq,)

    def axis_code(n: int) -> np.ndarray:
        pos = np.arange(n, dtype=np.float64)[:, None] * freqs[None, :]  # (n, n_freq)
        return np.concatenate([np.sin(pos), np.cos(pos)], axis=1)  # (n, d_axis)

    ct, ch, cw = axis_code(num_frames), axis_code(grid_h), axis_code(grid_w)
    out = np.zeros((num_frames, grid_h, grid_w, dim), dtype=np.float64)
    out[..., 0 * d_axis : 1 * d_axis] = ct[:, None, None, :]
    out[..., 1 * d_axis : 2 * d_axis] = ch[None, :, None, :]
    out[..., 2 * d_axis : 3 * d_axis] = cw[None, None, :, :]
    return out
