"""End-to-end network: dual-path patch embedding, visible-token encoder,
token scatter back into patch order, and the conditioned decoder.

Token layout convention matches farm.core.PatchPlan: patches enumerate the
patch grid row-major in (l, w, h) order with h fastest, and each flattened
patch is channel-major.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import torch
import torch.nn as nn
from einops import rearrange

from .decoder import DecoderConfig, MapDecoder
from .encoder import EncoderConfig, RadioEncoder

# (enc_depth, enc_width, enc_heads, dec_depth, dec_width, dec_heads, d_t)
PROFILES = {
    "tiny":  (4, 128, 8, 3, 128, 8, 128),
    "small": (6, 256, 8, 4, 256, 8, 256),
    "base":  (8, 512, 8, 6, 512, 8, 256),
    "large": (10, 768, 8, 8, 768, 8, 256),
}


@dataclass(frozen=True)
class ModelConfig:
    patch: tuple[int, int, int] = (32, 32, 2)
    enc_depth: int = 6
    enc_width: int = 256
    enc_heads: int = 8
    dec_depth: int = 4
    dec_width: int = 256
    dec_heads: int = 8
    d_t: int = 256
    mlp_ratio: float = 4.0
    use_abs_pe: bool = True
    decoder_norm: str = "rms"

    @classmethod
    def from_profile(cls, name: str, patch: tuple[int, int, int] = (32, 32, 2),
                     **overrides) -> "ModelConfig":
        if name not in PROFILES:
            raise ValueError(f"unknown model profile {name!r}; have {sorted(PROFILES)}")
        ed, ew, eh, dd, dw, dh, d_t = PROFILES[name]
        fields = dict(patch=tuple(patch), enc_depth=ed, enc_width=ew, enc_heads=eh,
                      dec_depth=dd, dec_width=dw, dec_heads=dh, d_t=d_t)
        fields.update(overrides)
        return cls(**fields)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(depth=self.enc_depth, width=self.enc_width,
                             heads=self.enc_heads, patch=self.patch,
                             mlp_ratio=self.mlp_ratio, use_abs_pe=self.use_abs_pe)

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(depth=self.dec_depth, width=self.dec_width,
                             heads=self.dec_heads, d_t=self.d_t, patch=self.patch,
                             mlp_ratio=self.mlp_ratio, use_abs_pe=self.use_abs_pe,
                             norm=self.decoder_norm)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["patch"] = list(self.patch)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["patch"] = tuple(d["patch"])
        return cls(**d)


@dataclass
class TokenBatch:
    """Embedded tokens with their integer patch-grid coordinates."""

    tokens: torch.Tensor    # (B, N, D)
    coords: torch.Tensor    # (B, N, 3)
    role: str               # "visible" | "noisy"


def grid_coords(n_l: int, n_w: int, n_h: int, device=None) -> torch.Tensor:
    """Canonical (N_p, 3) patch coordinates, h fastest; matches PatchPlan order."""
    cl, cw, ch = torch.meshgrid(torch.arange(n_l, device=device),
                                torch.arange(n_w, device=device),
                                torch.arange(n_h, device=device), indexing="ij")
    return torch.stack([cl.reshape(-1), cw.reshape(-1), ch.reshape(-1)], dim=1)


class FarmModel(nn.Module):
    """Radio encoder + map decoder over 4-channel conditioned voxel inputs."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = RadioEncoder(cfg.encoder_config())
        self.decoder = MapDecoder(cfg.decoder_config(), enc_width=cfg.enc_width)

    def encoder_parameters(self):
        return self.encoder.parameters()

    def decoder_parameters(self):
        return self.decoder.parameters()

    def patchify(self, channels: torch.Tensor) -> torch.Tensor:
        """(B, 4, L, W, H) -> (B, N_p, 4 * l_p * w_p * h_p)."""
        l_p, w_p, h_p = self.cfg.patch
        return rearrange(channels, "b c (nl lp) (nw wp) (nh hp) -> b (nl nw nh) (c lp wp hp)",
                         lp=l_p, wp=w_p, hp=h_p)

    def unpatchify(self, patches: torch.Tensor, shape: tuple[int, int, int]) -> torch.Tensor:
        """(B, N_p, l_p * w_p * h_p) radio patches -> (B, L, W, H)."""
        l_p, w_p, h_p = self.cfg.patch
        ll, ww, hh = shape
        return rearrange(patches, "b (nl nw nh) (lp wp hp) -> b (nl lp) (nw wp) (nh hp)",
                         lp=l_p, wp=w_p, hp=h_p,
                         nl=ll // l_p, nw=ww // w_p, nh=hh // h_p)

    def forward(self, channels: torch.Tensor, t: torch.Tensor,
                masked_ids: torch.Tensor,
                visible_ids: torch.Tensor | None = None) -> torch.Tensor:
        """Predict the full radio volume from a conditioned input.

        channels: (B, 4, L, W, H) in normalized space, radio channel already
        noise-masked. masked_ids/visible_ids: (B, N_m) and (B, N_v) patch id
        tensors partitioning 0..N_p-1 (visible may be None or empty in
        decoder-only mode, which requires a full mask).
        """
        b, c, ll, ww, hh = channels.shape
        if c != 4:
            raise ValueError(f"expected 4 input channels, got {c}")
        l_p, w_p, h_p = self.cfg.patch
        if ll % l_p or ww % w_p or hh % h_p:
            raise ValueError(f"volume {(ll, ww, hh)} not divisible by patch {self.cfg.patch}")
        n_l, n_w, n_h = ll // l_p, ww // w_p, hh // h_p
        n_patches = n_l * n_w * n_h
        n_vis = 0 if visible_ids is None else visible_ids.shape[1]
        if masked_ids.shape[1] + n_vis != n_patches:
            raise ValueError(f"mask accounting broken: {masked_ids.shape[1]} masked "
                             f"+ {n_vis} visible != {n_patches} patches")

        patches = self.patchify(channels)
        coords = grid_coords(n_l, n_w, n_h, device=channels.device)
        d_dec = self.cfg.dec_width

        noisy_patches = torch.take_along_dim(patches, masked_ids[..., None], dim=1)
        noisy_tokens = self.decoder.embed_noisy(noisy_patches)

        tokens = torch.zeros(b, n_patches, d_dec, dtype=channels.dtype,
                             device=channels.device)
        tokens = tokens.scatter(1, masked_ids[..., None].expand(-1, -1, d_dec),
                                noisy_tokens)
        if n_vis > 0:
            vis_patches = torch.take_along_dim(patches, visible_ids[..., None], dim=1)
            vis_coords = coords[visible_ids]
            f_enc = self.encoder(vis_patches, vis_coords)
            aligned = self.decoder.align_encoder(f_enc)
            tokens = tokens.scatter(1, visible_ids[..., None].expand(-1, -1, d_dec),
                                    aligned)

        out = self.decoder(tokens, t, coords.unsqueeze(0).expand(b, -1, -1))
        return self.unpatchify(out, (ll, ww, hh))
