"""Spatio-temporal slot grouping over frozen patch features.

All T*H'*W' tokens of a clip compete for the same K slots, so a slot is one
object track across the whole clip. A broadcast decoder maps each slot back
to per-position features and mixture logits; training minimizes the masked
feature reconstruction error. ``per_frame`` mode runs the same attention
independently per frame (no shared slots across time).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .encoding import positional_encoding

GROUPING_MODES = ("spatiotemporal", "per_frame")


@dataclass(frozen=True)
class GroupingConfig:
    feature_dim: int = 32
    num_slots: int = 5
    slot_dim: int = 64
    iterations: int = 3
    mlp_hidden: int = 128
    decoder_hidden: int = 128
    grouping_mode: str = "spatiotemporal"
    pe_scale: float = 1.0  # scale of the positional code added to input tokens
    input_mlp_hidden: int = 0  # 0 = feed tokens to attention directly
    epsilon: float = 1e-8
    seed: int = 0

    def validate(self) -> None:
        if self.grouping_mode not in GROUPING_MODES:
            raise ValueError(f"grouping_mode must be one of {GROUPING_MODES}")
        if self.num_slots < 1:
            raise ValueError("num_slots must be >= 1")
        if min(self.feature_dim, self.slot_dim, self.iterations) < 1:
            raise ValueError("feature_dim, slot_dim, iterations must be >= 1")


def _xavier_(weight: torch.Tensor, g: torch.Generator) -> None:
    fan_out, fan_in = weight.shape
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    with torch.no_grad():
        weight.uniform_(-bound, bound, generator=g)


def _init_linear(lin: nn.Linear, g: torch.Generator) -> None:
    _xavier_(lin.weight, g)
    if lin.bias is not None:
        with torch.no_grad():
            lin.bias.zero_()


def _init_gru(gru: nn.GRUCell, g: torch.Generator) -> None:
    k = 1.0 / math.sqrt(gru.hidden_size)
    with torch.no_grad():
        for p in gru.parameters():
            p.uniform_(-k, k, generator=g)


class SlotAttention(nn.Module):
    """Iterative attention with softmax over slots and weighted-mean updates."""

    def __init__(self, in_dim: int, slot_dim: int, iterations: int, mlp_hidden: int, eps: float):
        super().__init__()
        self.iterations = iterations
        self.eps = eps
        self.scale = slot_dim ** -0.5
        # normalization carries no parameters; the learned state is exactly
        # the projections, the recurrent cell, the mlp, and the init stats
        self.norm_input = nn.LayerNorm(in_dim, elementwise_affine=False)
        self.norm_slots = nn.LayerNorm(slot_dim, elementwise_affine=False)
        self.norm_mlp = nn.LayerNorm(slot_dim, elementwise_affine=False)
        self.to_q = nn.Linear(slot_dim, slot_dim, bias=False)
        self.to_k = nn.Linear(in_dim, slot_dim, bias=False)
        self.to_v = nn.Linear(in_dim, slot_dim, bias=False)
        self.gru = nn.GRUCell(slot_dim, slot_dim)
        self.mlp = nn.Sequential(
            nn.Linear(slot_dim, mlp_hidden), nn.ReLU(), nn.Linear(mlp_hidden, slot_dim)
        )
        self.init_mu = nn.Parameter(torch.zeros(slot_dim))
        self.init_log_sigma = nn.Parameter(torch.zeros(slot_dim))

    def initial_slots(self, noise: torch.Tensor) -> torch.Tensor:
        return self.init_mu + torch.exp(self.init_log_sigma) * noise

    def forward(self, tokens: torch.Tensor, noise: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """tokens (N, D_in), noise (K, D_slot) -> (slots (K, D_slot), attn (K, N))."""
        inputs = self.norm_input(tokens)
        k = self.to_k(inputs)  # (N, D_slot)
        v = self.to_v(inputs)
        slots = self.initial_slots(noise)
        attn = None
        for _ in range(self.iterations):
            slots_prev = slots
            q = self.to_q(self.norm_slots(slots))  # (K, D_slot)
            logits = self.scale * (k @ q.T)  # (N, K)
            attn = torch.softmax(logits, dim=-1)  # normalized over slots per token
            weights = attn + self.eps
            weights = weights / weights.sum(dim=0, keepdim=True)  # over tokens per slot
            updates = weights.T @ v  # (K, D_slot)
            slots = self.gru(updates, slots_prev)
            slots = slots + self.mlp(self.norm_mlp(slots))
        return slots, attn.T


class BroadcastDecoder(nn.Module):
    """Shared 2-layer MLP over slot + position code, emitting features and a mixture logit."""

    def __init__(self, slot_dim: int, out_dim: int, hidden: int):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(slot_dim, hidden), nn.ReLU(), nn.Linear(hidden, out_dim + 1)
        )

    def forward(self, slots: torch.Tensor, codes: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """slots (K, D_slot), codes (T, H', W', D_slot) -> y (K,T,H',W',D), alpha (K,T,H',W')."""
        x = slots[:, None, None, None, :] + codes[None]
        out = self.net(x)
        y = out[..., :-1]
        alpha = torch.softmax(out[..., -1], dim=0)  # mixture over slots per position
        return y, alpha


@dataclass
class SlotSet:
    """Inference output on one clip (numpy views, detached)."""

    slots: np.ndarray  # (K, D_slot) or (T, K, D_slot) in per_frame mode
    attn: np.ndarray  # (K, N_tok) or (T, K, H'*W')
    y: np.ndarray  # (K, T, H', W', D)
    alpha: np.ndarray  # (K, T, H', W')
    assignment: np.ndarray  # (T, H', W') int64, argmax over slots


class GroupingModel(nn.Module):
    def __init__(self, config: GroupingConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        config.validate()
        self.config = config
        self.attention = SlotAttention(
            config.feature_dim, config.slot_dim, config.iterations, config.mlp_hidden, config.epsilon
        )
        self.decoder = BroadcastDecoder(config.slot_dim, config.feature_dim, config.decoder_hidden)
        # per-token feedforward ahead of the attention loop; identity when hidden=0
        if config.input_mlp_hidden > 0:
            self.norm_tokens = nn.LayerNorm(config.feature_dim, elementwise_affine=False)
            self.input_mlp = nn.Sequential(
                nn.Linear(config.feature_dim, config.input_mlp_hidden),
                nn.ReLU(),
                nn.Linear(config.input_mlp_hidden, config.feature_dim),
            )
        else:
            self.norm_tokens = None
            self.input_mlp = None
        g = torch.Generator().manual_seed(config.seed)
        for lin in (self.attention.to_q, self.attention.to_k, self.attention.to_v):
            _init_linear(lin, g)
        _init_gru(self.attention.gru, g)
        _init_linear(self.attention.mlp[0], g)
        _init_linear(self.attention.mlp[2], g)
        _init_linear(self.decoder.net[0], g)
        _init_linear(self.decoder.net[2], g)
        if self.input_mlp is not None:
            _init_linear(self.input_mlp[0], g)
            _init_linear(self.input_mlp[2], g)
        self.to(dtype)

    @property
    def dtype(self) -> torch.dtype:
        return self.attention.to_q.weight.dtype

    def draw_noise(self, generator: torch.Generator | None = None) -> torch.Tensor:
        return torch.randn(
            self.config.num_slots, self.config.slot_dim, generator=generator, dtype=self.dtype
        )

    def input_tokens(self, features: torch.Tensor) -> torch.Tensor:
        """(T, H', W', D) -> (T, H', W', D) with the positional code added."""
        T, gh, gw, D = features.shape
        if D != self.config.feature_dim:
            raise ValueError(f"feature dim {D} != configured {self.config.feature_dim}")
        pe = torch.from_numpy(positional_encoding(T, gh, gw, D)).to(features.dtype)
        tokens = features + self.config.pe_scale * pe
        if self.input_mlp is not None:
            tokens = self.input_mlp(self.norm_tokens(tokens))
        return tokens

    def decoder_codes(self, T: int, gh: int, gw: int) -> torch.Tensor:
        return torch.from_numpy(positional_encoding(T, gh, gw, self.config.slot_dim)).to(self.dtype)

    def forward(
        self,
        features: torch.Tensor,
        noise: torch.Tensor | None = None,
        generator: torch.Generator | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
        """features (T, H', W', D) -> (slots, attn, y, alpha); see SlotSet for shapes."""
        T, gh, gw, D = features.shape
        tokens = self.input_tokens(features)
        codes = self.decoder_codes(T, gh, gw)
        if self.config.grouping_mode == "spatiotemporal":
            if noise is None:
                noise = self.draw_noise(generator)
            slots, attn = self.attention(tokens.reshape(T * gh * gw, D), noise)
            y, alpha = self.decoder(slots, codes)
            return slots, attn, y, alpha
        # per_frame: fresh slots per frame, decoded against that frame's codes
        slots_t, attn_t, y_t, alpha_t = [], [], [], []
        for t in range(T):
            n_t = noise[t] if noise is not None else self.draw_noise(generator)
            s, a = self.attention(tokens[t].reshape(gh * gw, D), n_t)
            y, alpha = self.decoder(s, codes[t : t + 1])
            slots_t.append(s)
            attn_t.append(a)
            y_t.append(y[:, 0])
            alpha_t.append(alpha[:, 0])
        slots = torch.stack(slots_t)  # (T, K, D_slot)
        attn = torch.stack(attn_t)  # (T, K, H'*W')
        y = torch.stack(y_t, dim=1)  # (K, T, H', W', D)
        alpha = torch.stack(alpha_t, dim=1)  # (K, T, H', W')
        return slots, attn, y, alpha


def reconstruction_loss(y: torch.Tensor, alpha: torch.Tensor, features: torch.Tensor) -> torch.Tensor:
    """MSE between the alpha-mixed decoded features and the input features."""
    recon = (alpha.unsqueeze(-1) * y).sum(dim=0)  # (T, H', W', D)
    return ((recon - features) ** 2).mean()


def assign_patches(alpha: np.ndarray | torch.Tensor) -> np.ndarray:
    """Argmax slot id per position, (K, T, H', W') -> (T, H', W') int64. Ties go low."""
    if isinstance(alpha, torch.Tensor):
        alpha = alpha.detach().cpu().numpy()
    return np.argmax(alpha, axis=0).astype(np.int64)


def slot_attention(
    tokens: np.ndarray | torch.Tensor,
    model: GroupingModel,
    seed: int | None = None,
    noise: np.ndarray | torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Functional entry: run the attention loop on flat tokens (N, D)."""
    tokens = torch.as_tensor(tokens, dtype=model.dtype)
    if tokens.ndim != 2:
        raise ValueError(f"expected flat tokens (N, D), got {tuple(tokens.shape)}")
    if noise is None:
        g = torch.Generator().manual_seed(0 if seed is None else seed)
        noise = model.draw_noise(g)
    else:
        noise = torch.as_tensor(noise, dtype=model.dtype)
    return model.attention(tokens, noise)


def decode_slots(
    slots: np.ndarray | torch.Tensor, model: GroupingModel, num_frames: int, grid_h: int, grid_w: int
) -> tuple[torch.Tensor, torch.Tensor]:
    slots = torch.as_tensor(slots, dtype=model.dtype)
    codes = model.decoder_codes(num_frames, grid_h, grid_w)
    return model.decoder(slots, codes)


def infer_slots(
    model: GroupingModel, features: np.ndarray, seed: int = 0, restarts: int = 1
) -> SlotSet:
    """Run grouping on one feature volume, deterministically in ``seed``.

    The attention loop is an iterative refinement from a noisy slot init, so
    like any EM-style procedure it can land in a poor local basin on an
    unlucky draw. With ``restarts`` > 1 the init noise is drawn that many
    times (sequentially from the one seeded generator) and the candidate with
    the lowest reconstruction loss wins; ties keep the earliest draw.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    x = torch.as_tensor(np.ascontiguousarray(features), dtype=model.dtype)
    g = torch.Generator().manual_seed(seed)
    best = None
    best_loss = float("inf")
    with torch.no_grad():
        for _ in range(restarts):
            slots, attn, y, alpha = model(x, generator=g)
            loss = float(reconstruction_loss(y, alpha, x))
            if loss < best_loss:
                best = (slots, attn, y, alpha)
                best_loss = loss
    slots, attn, y, alpha = best
    alpha_np = alpha.cpu().numpy()
    return SlotSet(
        slots=slots.cpu().numpy(),
        attn=attn.cpu().numpy(),
        y=y.cpu().numpy(),
        alpha=alpha_np,
        assignment=assign_patches(alpha_np),
    )
