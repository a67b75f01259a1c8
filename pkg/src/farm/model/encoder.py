"""ViT-style radio encoder over visible patch tokens.

Pre-norm transformer blocks; queries and keys are rotated by the 3D rotary
phases inside every attention layer, and the absolute SinCos table is added
once at the input (both halves of the hybrid positional scheme).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .pos import axis_split, rope_phases, rope_rotate, sincos_pe


@dataclass(frozen=True)
class EncoderConfig:
    depth: int = 6
    width: int = 256
    heads: int = 8
    patch: tuple[int, int, int] = (32, 32, 2)
    mlp_ratio: float = 4.0
    use_abs_pe: bool = True

    def __post_init__(self):
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by {self.heads} heads")
        axis_split(self.width)  # raises on odd/too-small splits

    @property
    def axis_dims(self) -> tuple[int, int, int]:
        return axis_split(self.width)

    @property
    def token_in_dim(self) -> int:
        l_p, w_p, h_p = self.patch
        return 4 * l_p * w_p * h_p


class RopeAttention(nn.Module):
    """Multi-head self-attention with rotary-rotated queries and keys.

    Rotation happens at full width before head splitting, so the per-axis
    phase blocks stay contiguous.
    """

    def __init__(self, dim: int, heads: int, scale: float | None = None):
        super().__init__()
        self.heads = heads
        self.scale = scale if scale is not None else (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        return x.view(b, n, self.heads, d // self.heads).transpose(1, 2)

    def logits(self, x: torch.Tensor, phases: torch.Tensor) -> torch.Tensor:
        """Pre-softmax attention scores, (B, heads, N, N)."""
        q, k, _ = self.qkv(x).chunk(3, dim=-1)
        q = self._split(rope_rotate(q, phases))
        k = self._split(rope_rotate(k, phases))
        return q @ k.transpose(-2, -1) * self.scale

    def forward(self, x: torch.Tensor, phases: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = self._split(rope_rotate(q, phases))
        k = self._split(rope_rotate(k, phases))
        attn = torch.softmax(q @ k.transpose(-2, -1) * self.scale, dim=-1)
        out = (attn @ self._split(v)).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim: int, ratio: float):
        super().__init__()
        hidden = int(dim * ratio)
        self.fc1 = nn.Linear(dim, hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x):
        return self.fc2(self.act(self.fc1(x)))


class EncoderBlock(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.width)
        self.attn = RopeAttention(cfg.width, cfg.heads)
        self.norm2 = nn.LayerNorm(cfg.width)
        self.mlp = Mlp(cfg.width, cfg.mlp_ratio)

    def forward(self, x, phases):
        x = x + self.attn(self.norm1(x), phases)
        x = x + self.mlp(self.norm2(x))
        return x


class RadioEncoder(nn.Module):
    """Visible-token transformer: E-MLP embedding, hybrid PE, pre-norm blocks."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Linear(cfg.token_in_dim, cfg.width)   # E-MLP
        self.blocks = nn.ModuleList(EncoderBlock(cfg) for _ in range(cfg.depth))
        self.norm = nn.LayerNorm(cfg.width)

    def embed_visible(self, patches: torch.Tensor) -> torch.Tensor:
        """(B, N_v, 4 * l_p * w_p * h_p) flattened visible patches -> tokens."""
        return self.embed(patches)

    def forward(self, patches: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
        """(B, N_v, 4P) patches with (B, N_v, 3) patch-grid coords -> (B, N_v, D)."""
        if patches.shape[1] == 0:
            raise ValueError("encoder requires at least one visible token; "
                             "skip it in decoder-only mode")
        x = self.embed_visible(patches)
        fcoords = coords.to(x.dtype)
        phases = rope_phases(fcoords, self.cfg.width)
        if self.cfg.use_abs_pe:
            x = x + sincos_pe(fcoords, self.cfg.width)
        for blk in self.blocks:
            x = blk(x, phases)
        return self.norm(x)
