"""DiT-style map decoder: timestep-conditioned blocks with zero-initialized
gating, rotary attention, and a linear head back to voxel space.

The adaptive normalization divides by the root mean square of each token
without subtracting the mean; a standard LayerNorm variant is available for
ablation. Each block draws six modulation vectors (shift/scale/gate twice)
from the timestep embedding through one zero-initialized affine map, so the
whole stack starts as the identity on tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .encoder import Mlp, RopeAttention
from .pos import axis_split, rope_phases, sincos_pe


@dataclass(frozen=True)
class DecoderConfig:
    depth: int = 4
    width: int = 256
    heads: int = 8
    d_t: int = 256
    patch: tuple[int, int, int] = (32, 32, 2)
    mlp_ratio: float = 4.0
    use_abs_pe: bool = True
    norm: str = "rms"     # "rms" (as specified) or "layernorm" (ablation)

    def __post_init__(self):
        if self.width % self.heads:
            raise ValueError(f"width {self.width} not divisible by {self.heads} heads")
        if self.d_t % 2:
            raise ValueError(f"timestep dim must be even, got {self.d_t}")
        if self.norm not in ("rms", "layernorm"):
            raise ValueError(f"unknown norm mode {self.norm!r}")
        axis_split(self.width)

    @property
    def token_in_dim(self) -> int:
        l_p, w_p, h_p = self.patch
        return 4 * l_p * w_p * h_p

    @property
    def token_out_dim(self) -> int:
        l_p, w_p, h_p = self.patch
        return l_p * w_p * h_p


def rms_norm(x: torch.Tensor) -> torch.Tensor:
    """x / sqrt(mean(x^2)) along the feature axis, no mean subtraction, no eps."""
    return x / torch.sqrt(x.pow(2).mean(dim=-1, keepdim=True))


class TimestepEmbed(nn.Module):
    """Sinusoidal flow-time features refined by a two-layer SiLU FFN.

    Frequencies are a geometric series over [1, 1e4] with d_t / 2 entries;
    e_t = [cos(t * omega), sin(t * omega)].
    """

    def __init__(self, d_t: int):
        super().__init__()
        n = d_t // 2
        exponents = torch.linspace(0.0, 4.0, n) if n > 1 else torch.zeros(1)
        self.register_buffer("omega", torch.pow(10.0, exponents), persistent=False)
        self.fc1 = nn.Linear(d_t, d_t)
        self.act = nn.SiLU()
        self.fc2 = nn.Linear(d_t, d_t)

    def frequencies(self, t: torch.Tensor) -> torch.Tensor:
        ang = t.reshape(-1, 1) * self.omega.to(t.dtype)
        return torch.cat([torch.cos(ang), torch.sin(ang)], dim=-1)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(self.frequencies(t))))


class DecoderBlock(nn.Module):
    """Adaptive-norm attention and feed-forward stages with gated residuals."""

    def __init__(self, cfg: DecoderConfig):
        super().__init__()
        self.cfg = cfg
        # one affine map per block -> [beta1, gamma1, alpha1, beta2, gamma2, alpha2]
        self.modulation = nn.Linear(cfg.d_t, 6 * cfg.width)
        nn.init.zeros_(self.modulation.weight)
        nn.init.zeros_(self.modulation.bias)
        self.attn = RopeAttention(cfg.width, cfg.heads, scale=cfg.width ** -0.5)
        self.mlp = Mlp(cfg.width, cfg.mlp_ratio)

    def _norm(self, x: torch.Tensor) -> torch.Tensor:
        if self.cfg.norm == "rms":
            return rms_norm(x)
        return nn.functional.layer_norm(x, x.shape[-1:])

    def forward(self, x: torch.Tensor, t_vec: torch.Tensor,
                phases: torch.Tensor) -> torch.Tensor:
        b1, g1, a1, b2, g2, a2 = self.modulation(t_vec).unsqueeze(1).chunk(6, dim=-1)
        h = (1 + g1) * self._norm(x) + b1
        x = x + a1 * self.attn(h, phases)
        h = (1 + g2) * self._norm(x) + b2
        x = x + a2 * self.mlp(h)
        return x


class MapDecoder(nn.Module):
    """Noisy-token embedding, encoder alignment, conditioned blocks, voxel head."""

    def __init__(self, cfg: DecoderConfig, enc_width: int):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Linear(cfg.token_in_dim, cfg.width)   # D-MLP
        self.align = nn.Linear(enc_width, cfg.width)
        self.t_embed = TimestepEmbed(cfg.d_t)
        self.blocks = nn.ModuleList(DecoderBlock(cfg) for _ in range(cfg.depth))
        self.head = nn.Linear(cfg.width, cfg.token_out_dim)

    def embed_noisy(self, patches: torch.Tensor) -> torch.Tensor:
        """(B, N_m, 4 * l_p * w_p * h_p) noisy patches -> decoder tokens."""
        return self.embed(patches)

    def align_encoder(self, f_enc: torch.Tensor) -> torch.Tensor:
        """Project encoder features into the decoder width."""
        return self.align(f_enc)

    def forward(self, tokens: torch.Tensor, t: torch.Tensor,
                coords: torch.Tensor) -> torch.Tensor:
        """(B, N, D_dec) tokens in patch order -> (B, N, l_p * w_p * h_p) radio patches."""
        fcoords = coords.to(tokens.dtype)
        phases = rope_phases(fcoords, self.cfg.width)
        if self.cfg.use_abs_pe:
            tokens = tokens + sincos_pe(fcoords, self.cfg.width)
        t_vec = self.t_embed(t.to(tokens.dtype))
        for blk in self.blocks:
            tokens = blk(tokens, t_vec, phases)
        return self.head(tokens)
