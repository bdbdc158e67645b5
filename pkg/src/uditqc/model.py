"""U-Net-style diffusion transformer over circuit tensors.

The canvas (B, Q, T, d) is flattened to K = Q*T tokens (qubit index fastest,
token t*Q + q holds cell (q, t)), run through five stages of adaLN-Zero DiT
blocks with two conv downsamplings / interpolating upsamplings between them,
and projected back to an epsilon prediction of the input's shape.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .conditioning import (Condition, LabelEmbedder, TimestepEmbedder, UEncConfig,
                           UnitaryEncoder, combine)


@dataclass
class UDiTConfig:
    Q: int
    T: int
    d: int
    num_classes: int
    hidden: int = 192
    cond_dim: int | None = None  # defaults to hidden
    depths: tuple[int, ...] = (2, 2, 4, 3, 3)
    heads: tuple[int, ...] = (6, 6, 3, 6, 6)
    mlp_ratio: float = 4.0
    residual_connections: bool = True
    asymmetric: bool = True
    num_timesteps: int = 1000
    label_dropout: float = 0.1
    unitary: UEncConfig | None = None

    def __post_init__(self):
        self.depths = tuple(int(x) for x in self.depths)
        self.heads = tuple(int(x) for x in self.heads)
        if isinstance(self.unitary, dict):
            self.unitary = UEncConfig(**{**self.unitary, "channels": tuple(self.unitary.get("channels", (32, 64)))})
        if self.cond_dim is None:
            self.cond_dim = self.hidden
        self.validate()

    def validate(self):
        if len(self.depths) != 5 or len(self.heads) != 5:
            raise ValueError("depths and heads need one entry per stage (5)")
        if (self.Q * self.T) % 4:
            raise ValueError(f"Q*T = {self.Q * self.T} must be divisible by 4")
        if self.hidden % 4:
            raise ValueError("hidden must be divisible by 4 (positional embedding)")
        bad = [h for h in self.heads if h < 1 or self.hidden % h]
        if bad:
            raise ValueError(f"hidden={self.hidden} not divisible by heads {bad}")
        if min(self.depths) < 1:
            raise ValueError("every stage needs at least one block")

    @property
    def seq_len(self) -> int:
        return self.Q * self.T

    @property
    def stage_depths(self) -> tuple[int, ...]:
        """Blocks per stage; the symmetric variant mirrors the encoder depths."""
        if self.asymmetric:
            return self.depths
        d = self.depths
        return (d[0], d[1], d[2], d[1], d[0])

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> UDiTConfig:
        return cls(**obj)


def sincos_1d(positions: np.ndarray, dim: int) -> np.ndarray:
    """Standard sine-cosine features of integer positions, (len, dim)."""
    omega = 1.0 / 10000 ** (np.arange(dim // 2, dtype=np.float64) / (dim / 2.0))
    out = positions[:, None].astype(np.float64) * omega[None]
    return np.concatenate([np.sin(out), np.cos(out)], axis=1)


def positional_embedding(Q: int, T: int, hidden: int) -> np.ndarray:
    """(Q*T, hidden): first half encodes the qubit index, second half the timestep."""
    if hidden % 4:
        raise ValueError("hidden must be divisible by 4")
    q = np.tile(np.arange(Q), T)  # token t*Q + q
    t = np.repeat(np.arange(T), Q)
    return np.concatenate([sincos_1d(q, hidden // 2), sincos_1d(t, hidden // 2)], axis=1)


def modulate(x, shift, scale):
    return x * (1 + scale.unsqueeze(1)) + shift.unsqueeze(1)


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, c = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, c // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        att = (q @ k.transpose(-2, -1)) / math.sqrt(c // self.heads)
        out = att.softmax(dim=-1) @ v
        return self.proj(out.transpose(1, 2).reshape(b, n, c))


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU(approximate="tanh")
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class DiTBlock(nn.Module):
    """adaLN-Zero block: identity map until the modulation regressor learns otherwise."""

    def __init__(self, hidden: int, heads: int, cond_dim: int, mlp_ratio: float = 4.0):
        super().__init__()
        self.norm1 = nn.LayerNorm(hidden, elementwise_affine=False, eps=1e-6)
        self.attn = Attention(hidden, heads)
        self.norm2 = nn.LayerNorm(hidden, elementwise_affine=False, eps=1e-6)
        self.mlp = Mlp(hidden, int(hidden * mlp_ratio))
        self.adaLN_modulation = nn.Sequential(nn.SiLU(), nn.Linear(cond_dim, 6 * hidden))

    def forward(self, x: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        shift1, scale1, gate1, shift2, scale2, gate2 = self.adaLN_modulation(c).chunk(6, dim=1)
        x = x + gate1.unsqueeze(1) * self.attn(modulate(self.norm1(x), shift1, scale1))
        x = x + gate2.unsqueeze(1) * self.mlp(modulate(self.norm2(x), shift2, scale2))
        return x


class Downsample(nn.Module):
    """Halve the token axis with a stride-2, kernel-3 convolution."""

    def __init__(self, hidden: int):
        super().__init__()
        self.conv = nn.Conv1d(hidden, hidden, kernel_size=3, stride=2, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] % 2:
            raise ValueError(f"cannot downsample odd sequence length {x.shape[1]}")
        return self.conv(x.transpose(1, 2)).transpose(1, 2)


class Upsample(nn.Module):
    """Double the token axis: linear interpolation then a kernel-3 convolution."""

    def __init__(self, hidden: int):
        super().__init__()
        self.conv = nn.Conv1d(hidden, hidden, kernel_size=3, stride=1, padding=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = F.interpolate(x.transpose(1, 2), scale_factor=2, mode="linear", align_corners=False)
        return self.conv(y).transpose(1, 2)


class FinalLayer(nn.Module):
    def __init__(self, hidden: int, out_dim: int, cond_dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(hidden, elementwise_affine=False, eps=1e-6)
        self.linear = nn.Linear(hidden, out_dim)
        self.adaLN_modulation = nn.Sequential(nn.SiLU(), nn.Linear(cond_dim, 2 * hidden))

    def forward(self, x, c):
        shift, scale = self.adaLN_modulation(c).chunk(2, dim=1)
        return self.linear(modulate(self.norm(x), shift, scale))


class Stage(nn.Module):
    def __init__(self, depth: int, hidden: int, heads: int, cond_dim: int, mlp_ratio: float):
        super().__init__()
        self.blocks = nn.ModuleList(DiTBlock(hidden, heads, cond_dim, mlp_ratio) for _ in range(depth))

    def forward(self, x, c):
        for block in self.blocks:
            x = block(x, c)
        return x


class UDiT(nn.Module):
    def __init__(self, cfg: UDiTConfig):
        super().__init__()
        self.cfg = cfg
        h, cd = cfg.hidden, cfg.cond_dim
        self.patch = nn.Linear(cfg.d, h)
        pos = torch.from_numpy(positional_embedding(cfg.Q, cfg.T, h)).float()
        self.register_buffer("pos_embed", pos.unsqueeze(0), persistent=False)

        self.t_embedder = TimestepEmbedder(cd, cfg.num_timesteps)
        self.y_embedder = LabelEmbedder(cfg.num_classes, cd, cfg.label_dropout)
        if cfg.unitary is not None:
            self.u_encoder = UnitaryEncoder(cfg.unitary, cd)
            self.u_combine = nn.Linear(2 * cd, cd)
        else:
            self.u_encoder = None
            self.u_combine = None

        self.stages = nn.ModuleList(
            Stage(n, h, nh, cd, cfg.mlp_ratio) for n, nh in zip(cfg.stage_depths, cfg.heads))
        self.down = nn.ModuleList([Downsample(h), Downsample(h)])
        self.up = nn.ModuleList([Upsample(h), Upsample(h)])
        self.final = FinalLayer(h, cfg.d, cd)
        self.initialize_weights()

    def initialize_weights(self):
        def _basic(m):
            if isinstance(m, nn.Linear):
                nn.init.xavier_uniform_(m.weight)
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
        self.apply(_basic)
        nn.init.normal_(self.y_embedder.table.weight, std=0.02)
        for layer in self.t_embedder.mlp:
            if isinstance(layer, nn.Linear):
                nn.init.normal_(layer.weight, std=0.02)
        for conv in [*self.down, *self.up]:
            nn.init.zeros_(conv.conv.bias)
        for stage in self.stages:
            for block in stage.blocks:
                nn.init.zeros_(block.adaLN_modulation[-1].weight)
                nn.init.zeros_(block.adaLN_modulation[-1].bias)
        nn.init.zeros_(self.final.adaLN_modulation[-1].weight)
        nn.init.zeros_(self.final.adaLN_modulation[-1].bias)
        nn.init.zeros_(self.final.linear.weight)
        nn.init.zeros_(self.final.linear.bias)

    @property
    def null_index(self) -> int:
        return self.y_embedder.null_index

    # -- pieces ---------------------------------------------------------------

    def patchify(self, x: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        if x.dim() != 4 or tuple(x.shape[1:]) != (cfg.Q, cfg.T, cfg.d):
            raise ValueError(f"expected (B, {cfg.Q}, {cfg.T}, {cfg.d}), got {tuple(x.shape)}")
        b = x.shape[0]
        seq = x.permute(0, 2, 1, 3).reshape(b, cfg.Q * cfg.T, cfg.d)
        return self.patch(seq) + self.pos_embed.to(seq.dtype)

    def unpatchify(self, seq: torch.Tensor) -> torch.Tensor:
        cfg = self.cfg
        return seq.reshape(seq.shape[0], cfg.T, cfg.Q, -1).permute(0, 2, 1, 3)

    def condition(self, t: torch.Tensor, cond: Condition,
                  label_drop: torch.Tensor | None = None) -> torch.Tensor:
        """Combined conditioning vector (B, cond_dim).

        Rows flagged by ``cond.null`` or ``label_drop`` use the null label and,
        for unitary models, a zero unitary embedding.
        """
        drop = cond.null
        if label_drop is not None:
            drop = label_drop if drop is None else drop | label_drop
        t_emb = self.t_embedder(t)
        y_emb = self.y_embedder(cond.labels, drop)
        if self.u_encoder is None:
            return combine(t_emb, y_emb)
        if cond.unitaries is None:
            raise ValueError("this model needs unitaries in its condition")
        u_emb = self.u_encoder(cond.unitaries)
        if drop is not None:
            u_emb = u_emb * (~drop).to(u_emb.dtype)[:, None]
        return combine(t_emb, y_emb, u_emb, self.u_combine)

    def backbone(self, seq: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
        s, down, up = self.stages, self.down, self.up
        h1 = s[0](seq, c)
        d1 = down[0](h1)
        h2 = s[1](d1, c)
        d2 = down[1](h2)
        m = s[2](d2, c)
        if self.cfg.residual_connections:
            y = s[3](up[1](m - d2) + h2, c)
            return s[4](up[0](y - d1) + h1, c)
        y = s[3](up[1](m), c)
        return s[4](up[0](y), c)

    def forward(self, x: torch.Tensor, t: torch.Tensor, cond: Condition,
                label_drop: torch.Tensor | None = None) -> torch.Tensor:
        c = self.condition(t, cond, label_drop)
        seq = self.patchify(x)
        seq = self.backbone(seq, c)
        return self.unpatchify(self.final(seq, c))
