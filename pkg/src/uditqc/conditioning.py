"""Timestep, class-label and unitary conditioning."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

TIMESTEP_FREQ_DIM = 256


def timestep_features(t: torch.Tensor, dim: int = TIMESTEP_FREQ_DIM,
                      max_period: float = 10000.0) -> torch.Tensor:
    """Sinusoidal features of integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class TimestepEmbedder(nn.Module):
    def __init__(self, cond_dim: int, num_timesteps: int, freq_dim: int = TIMESTEP_FREQ_DIM):
        super().__init__()
        self.num_timesteps = num_timesteps
        self.freq_dim = freq_dim
        self.mlp = nn.Sequential(
            nn.Linear(freq_dim, cond_dim),
            nn.SiLU(),
            nn.Linear(cond_dim, cond_dim),
        )

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        if t.numel() and (int(t.min()) < 0 or int(t.max()) >= self.num_timesteps):
            raise ValueError(f"timestep outside [0, {self.num_timesteps})")
        feats = timestep_features(t, self.freq_dim)
        return self.mlp(feats.to(self.mlp[0].weight.dtype))


class LabelEmbedder(nn.Module):
    """Class table with one extra learned row for the null label (index = num_classes)."""

    def __init__(self, num_classes: int, cond_dim: int, dropout_p: float = 0.1):
        super().__init__()
        if not 0.0 <= dropout_p <= 1.0:
            raise ValueError("dropout_p must be in [0, 1]")
        self.num_classes = num_classes
        self.dropout_p = dropout_p
        self.table = nn.Embedding(num_classes + 1, cond_dim)
        nn.init.normal_(self.table.weight, std=0.02)

    @property
    def null_index(self) -> int:
        return self.num_classes

    def drop_mask(self, labels: torch.Tensor, generator: torch.Generator | None) -> torch.Tensor:
        return torch.rand(labels.shape, generator=generator) < self.dropout_p

    def forward(self, labels: torch.Tensor, drop: torch.Tensor | None = None) -> torch.Tensor:
        if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) > self.num_classes):
            raise ValueError(f"label outside [0, {self.num_classes}]")
        if drop is not None:
            labels = torch.where(drop, torch.full_like(labels, self.null_index), labels)
        return self.table(labels)


def embed_label(labels: torch.Tensor, embedder: LabelEmbedder, training: bool,
                generator: torch.Generator | None = None) -> torch.Tensor:
    drop = embedder.drop_mask(labels, generator) if training else None
    return embedder(labels, drop)


def sincos_2d(side: int, channels: int) -> torch.Tensor:
    """Fixed 2-D positional encoding (channels, side, side); half the channels per axis."""
    if channels % 4:
        raise ValueError("channels must be divisible by 4")
    quarter = channels // 4
    omega = 1.0 / 10000 ** (torch.arange(quarter, dtype=torch.float64) / quarter)
    pos = torch.arange(side, dtype=torch.float64)
    ang = pos[:, None] * omega[None]  # (side, quarter)
    axis = torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)  # (side, channels/2)
    rows = axis[:, None, :].expand(side, side, channels // 2)
    cols = axis[None, :, :].expand(side, side, channels // 2)
    return torch.cat([rows, cols], dim=-1).permute(2, 0, 1).contiguous()


class _SpatialAttention(nn.Module):
    """Pre-norm transformer block over the flattened spatial grid."""

    def __init__(self, channels: int, heads: int, dropout_p: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(channels)
        self.attn = nn.MultiheadAttention(channels, heads, dropout=dropout_p, batch_first=True)
        self.norm2 = nn.LayerNorm(channels)
        self.mlp = nn.Sequential(
            nn.Linear(channels, 4 * channels),
            nn.GELU(approximate="tanh"),
            nn.Dropout(dropout_p),
            nn.Linear(4 * channels, channels),
        )
        self.drop = nn.Dropout(dropout_p)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        seq = x.flatten(2).transpose(1, 2)
        y = self.norm1(seq)
        seq = seq + self.drop(self.attn(y, y, y, need_weights=False)[0])
        seq = seq + self.drop(self.mlp(self.norm2(seq)))
        return seq.transpose(1, 2).reshape(b, c, h, w)


@dataclass
class UEncConfig:
    qubits: int = 3
    channels: tuple[int, ...] = (32, 64)
    heads: int = 4
    dropout_p: float = 0.1

    @property
    def side(self) -> int:
        return 2 ** self.qubits

    @property
    def num_scales(self) -> int:
        # halve the side until it reaches 2
        return max(self.qubits - 1, 0)


class UnitaryEncoder(nn.Module):
    """(Re U, Im U) channels -> conv -> +2-D positional code -> [attention, 2x2 down]* -> vector."""

    def __init__(self, cfg: UEncConfig, cond_dim: int):
        super().__init__()
        self.cfg = cfg
        chans = list(cfg.channels)
        c0 = chans[0]
        self.stem = nn.Conv2d(2, c0, kernel_size=3, padding=1)
        self.register_buffer("pos", sincos_2d(cfg.side, c0).float(), persistent=False)
        blocks, downs = [], []
        c = c0
        for i in range(cfg.num_scales):
            c_next = chans[min(i + 1, len(chans) - 1)]
            blocks.append(_SpatialAttention(c, cfg.heads, cfg.dropout_p))
            downs.append(nn.Conv2d(c, c_next, kernel_size=2, stride=2))
            c = c_next
        self.blocks = nn.ModuleList(blocks)
        self.downs = nn.ModuleList(downs)
        self.out_conv = nn.Conv2d(c, c, kernel_size=1)
        side = cfg.side // 2 ** cfg.num_scales
        self.drop = nn.Dropout(cfg.dropout_p)
        self.proj = nn.Linear(c * side * side, cond_dim)

    def forward(self, unitaries: torch.Tensor) -> torch.Tensor:
        """``unitaries``: complex (B, 2^q, 2^q) or real (B, 2, 2^q, 2^q)."""
        if unitaries.is_complex():
            x = torch.stack([unitaries.real, unitaries.imag], dim=1)
        else:
            x = unitaries
        side = self.cfg.side
        if x.shape[1:] != (2, side, side):
            raise ValueError(f"expected unitaries of side {side}, got shape {tuple(unitaries.shape)}")
        x = x.to(self.stem.weight.dtype)
        x = self.stem(x) + self.pos.to(x.dtype)
        for block, down in zip(self.blocks, self.downs):
            x = down(block(x))
        x = F.silu(self.out_conv(x))
        return self.proj(self.drop(x.flatten(1)))


def unitary_to_tensor(unitaries) -> torch.Tensor:
    arr = np.asarray(unitaries)
    if arr.ndim == 2:
        arr = arr[None]
    return torch.from_numpy(np.stack([arr.real, arr.imag], axis=1).astype(np.float32))


def combine(t_embed: torch.Tensor, label_embed: torch.Tensor,
            unitary_embed: torch.Tensor | None = None,
            proj: nn.Linear | None = None) -> torch.Tensor:
    """Overall condition vector.

    Without a unitary it is ``t_embed + label_embed``; with one, the sum is
    concatenated to the unitary embedding and mapped back by ``proj``.
    """
    if t_embed.shape != label_embed.shape:
        raise ValueError(f"dim mismatch: {tuple(t_embed.shape)} vs {tuple(label_embed.shape)}")
    base = t_embed + label_embed
    if unitary_embed is None:
        return base
    if proj is None:
        raise ValueError("a projection layer is needed to combine a unitary embedding")
    if unitary_embed.shape != base.shape:
        raise ValueError(f"dim mismatch: {tuple(unitary_embed.shape)} vs {tuple(base.shape)}")
    return proj(torch.cat([base, unitary_embed], dim=-1))


@dataclass
class Condition:
    """What the denoiser is asked for: class labels and, for compilation, unitaries.

    ``null`` marks rows evaluated unconditionally; those rows must carry the
    null label and get a zeroed unitary embedding.
    """

    labels: torch.Tensor
    unitaries: torch.Tensor | None = None
    null: torch.Tensor | None = None

    def __len__(self) -> int:
        return self.labels.shape[0]

    def as_null(self, null_index: int) -> Condition:
        n = self.labels.shape[0]
        return Condition(torch.full((n,), null_index, dtype=torch.long), self.unitaries,
                         torch.ones(n, dtype=torch.bool))

    def select(self, idx) -> Condition:
        return Condition(self.labels[idx],
                         None if self.unitaries is None else self.unitaries[idx],
                         None if self.null is None else self.null[idx])
