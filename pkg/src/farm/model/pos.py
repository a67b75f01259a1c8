"""Hybrid 3D positional encodings over integer patch-grid coordinates.

Both the absolute SinCos table and the rotary phases share one frequency
schedule per axis: kappa_j(p) = p / 10000^(2j / D_k) for j in [0, D_k / 2).
The embedding width is split into three axis blocks (l, w, h), each even.
"""

from __future__ import annotations

import torch


def axis_split(dim: int) -> tuple[int, int, int]:
    """Per-axis subspace widths (D_l, D_w, D_h), rounded down to even.

    D_l = D_w = floor(dim / 3) when that is even, otherwise the next even
    value below; the height axis absorbs the remainder. Odd total widths are
    rejected because every axis block must pair up for rotations.
    """
    if dim % 2:
        raise ValueError(f"embedding width must be even, got {dim}")
    d_lw = (dim // 3) & ~1
    d_h = dim - 2 * d_lw
    if d_lw < 2 or d_h < 2:
        raise ValueError(f"width {dim} too small to split across three axes")
    return d_lw, d_lw, d_h


def _axis_angles(pos: torch.Tensor, d_k: int) -> torch.Tensor:
    """(..., ) positions -> (..., d_k / 2) angles for one axis."""
    j = torch.arange(d_k // 2, dtype=pos.dtype, device=pos.device)
    inv_freq = torch.pow(torch.tensor(10000.0, dtype=pos.dtype, device=pos.device),
                         -2.0 * j / d_k)
    return pos.unsqueeze(-1) * inv_freq


def sincos_pe(coords: torch.Tensor, dim: int) -> torch.Tensor:
    """Absolute 3D SinCos table for (..., 3) integer coordinates -> (..., dim).

    Within each axis block, column 2j is sin and 2j+1 is cos of the shared
    angle; blocks concatenate in axis order l, w, h.
    """
    coords = coords.to(torch.get_default_dtype()) if not coords.is_floating_point() else coords
    blocks = []
    for axis, d_k in enumerate(axis_split(dim)):
        ang = _axis_angles(coords[..., axis], d_k)
        block = torch.empty(*ang.shape[:-1], d_k, dtype=ang.dtype, device=ang.device)
        block[..., 0::2] = torch.sin(ang)
        block[..., 1::2] = torch.cos(ang)
        blocks.append(block)
    return torch.cat(blocks, dim=-1)


def rope_phases(coords: torch.Tensor, dim: int) -> torch.Tensor:
    """Rotation phases with each angle duplicated across its feature pair."""
    coords = coords.to(torch.get_default_dtype()) if not coords.is_floating_point() else coords
    blocks = []
    for axis, d_k in enumerate(axis_split(dim)):
        ang = _axis_angles(coords[..., axis], d_k)
        block = torch.empty(*ang.shape[:-1], d_k, dtype=ang.dtype, device=ang.device)
        block[..., 0::2] = ang
        block[..., 1::2] = ang
        blocks.append(block)
    return torch.cat(blocks, dim=-1)


def rotate_pairs(x: torch.Tensor) -> torch.Tensor:
    """[x0, x1, x2, x3, ...] -> [-x1, x0, -x3, x2, ...]."""
    out = torch.empty_like(x)
    out[..., 0::2] = -x[..., 1::2]
    out[..., 1::2] = x[..., 0::2]
    return out


def rope_rotate(x: torch.Tensor, phases: torch.Tensor) -> torch.Tensor:
    """Apply pairwise 2D rotations: x * cos(phase) + rot(x) * sin(phase).

    Norm-preserving per feature pair; attention scores between rotated
    queries and keys then depend only on coordinate differences.
    """
    if x.shape[-1] % 2:
        raise ValueError(f"rotary features must pair up, got width {x.shape[-1]}")
    if x.shape[-1] != phases.shape[-1]:
        raise ValueError(f"phase width {phases.shape[-1]} != feature width {x.shape[-1]}")
    return x * torch.cos(phases) + rotate_pairs(x) * torch.sin(phases)
