"""Analytic aerial propagation: procedural scenes plus a deterministic
RSS oracle (FSPL, parabolic antenna patterns, voxel-exact building
penetration via ray traversal, optional correlated shadowing).

All geometry lives in voxel units: voxel (l, w, h) occupies the unit cube
[l, l+1) x [w, w+1) x [h, h+1) and its center sits at (l+.5, w+.5, h+.5).
Distances convert to meters through the grid's delta.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .core import ANTENNA_TYPES, BsConfig, BuildingGrid, ArmVolume, VoxelGridSpec

# Standard free-space constant for d in meters and f_c in Hz.
FSPL_CONSTANT_DB = -147.55

GAIN_MAX_DBI = {"iso": 0.0, "dir120": 8.0, "dir60": 12.0, "dir30": 15.0}
HPBW_DEG = {"dir30": 30.0, "dir60": 60.0, "dir120": 120.0}
FRONT_TO_BACK_DB = 25.0

# Carrier set mirrored from common cellular allocations (GHz -> Hz).
CARRIER_FREQUENCIES_HZ = {
    "2.1": 2.1e9, "2.6": 2.6e9, "3.3": 3.3e9, "3.5": 3.5e9,
    "4.9": 4.9e9, "5.9": 5.9e9, "7.1": 7.1e9,
}


@dataclass(frozen=True)
class ShadowingParams:
    sigma_db: float
    correlation_m: float
    seed: int

    def __post_init__(self):
        if self.sigma_db < 0:
            raise ValueError("shadowing sigma must be >= 0")


@dataclass(frozen=True)
class PropagationParams:
    """Constants of the analytic link budget."""

    C: float = FSPL_CONSTANT_DB          # dB, FSPL unit constant
    alpha_b: float = 1.5                 # dB per meter inside buildings
    shadowing: ShadowingParams | None = None

    def __post_init__(self):
        if self.alpha_b < 0:
            raise ValueError("alpha_b must be >= 0")


@dataclass(frozen=True)
class AntennaModel:
    """Parabolic sector pattern with a front-to-back floor."""

    antenna_type: str
    g_max_dbi: float
    hpbw_deg: float | None
    a_max_db: float = FRONT_TO_BACK_DB

    @classmethod
    def from_type(cls, antenna_type: str) -> "AntennaModel":
        if antenna_type not in ANTENNA_TYPES:
            raise ValueError(f"unknown antenna type {antenna_type!r}")
        return cls(antenna_type=antenna_type,
                   g_max_dbi=GAIN_MAX_DBI[antenna_type],
                   hpbw_deg=HPBW_DEG.get(antenna_type))


def wrap_angle(a):
    """Wrap angles to (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=np.float64) + np.pi, 2.0 * np.pi) - np.pi
    return np.where(w == -np.pi, np.pi, w)


def antenna_gain(model: AntennaModel, dphi, dtheta):
    """Gain toward an offset from boresight, in dB.

    g = G_max - min(12 (dphi/HPBW)^2, A_max) - min(12 (dtheta/HPBW)^2, A_max),
    floored at G_max - A_max. Isotropic antennas return 0 everywhere.
    """
    if model.antenna_type == "iso":
        return np.zeros(np.broadcast(np.asarray(dphi), np.asarray(dtheta)).shape)[()]
    hpbw = math.radians(model.hpbw_deg)
    dphi = wrap_angle(dphi)
    dtheta = wrap_angle(dtheta)
    att = (np.minimum(12.0 * (dphi / hpbw) ** 2, model.a_max_db)
           + np.minimum(12.0 * (dtheta / hpbw) ** 2, model.a_max_db))
    g = model.g_max_dbi - np.minimum(att, model.a_max_db)
    return g[()]


def fspl(d, f_c: float, C: float = FSPL_CONSTANT_DB):
    """Free-space pathloss 20 log10(d) + 20 log10(f_c) + C, in dB.

    d in meters (strictly positive; callers clamp the transmitter voxel to
    delta/2), f_c in Hz.
    """
    d = np.asarray(d, dtype=np.float64)
    if np.any(d <= 0):
        raise ValueError("fspl requires d > 0; clamp the transmitter voxel upstream")
    if f_c <= 0:
        raise ValueError("fspl requires f_c > 0")
    return (20.0 * np.log10(d) + 20.0 * np.log10(f_c) + C)[()]


def _segment_cell_lengths(a: np.ndarray, b: np.ndarray):
    """Exact per-voxel overlap lengths of segment a->b (voxel-center coords).

    Returns (cells (M, 3) int array, lengths (M,) in voxel units). Cells are
    determined from subinterval midpoints between consecutive axis-plane
    crossings, which makes the result symmetric in the endpoints.
    """
    a = a + 0.5
    b = b + 0.5
    d = b - a
    seg_len = float(np.linalg.norm(d))
    if seg_len == 0.0:
        return np.empty((0, 3), dtype=np.int64), np.empty(0)
    ts = [np.array([0.0, 1.0])]
    for k in range(3):
        if d[k] != 0.0:
            lo, hi = sorted((a[k], b[k]))
            planes = np.arange(math.floor(lo) + 1, math.ceil(hi))
            if planes.size:
                ts.append((planes - a[k]) / d[k])
    t = np.unique(np.clip(np.concatenate(ts), 0.0, 1.0))
    mids = a[None, :] + 0.5 * (t[:-1] + t[1:])[:, None] * d[None, :]
    cells = np.floor(mids).astype(np.int64)
    lengths = np.diff(t) * seg_len
    keep = lengths > 0
    return cells[keep], lengths[keep]


def trace_attenuation(building: BuildingGrid, p_tx: tuple[int, int, int],
                      voxel: tuple[int, int, int]) -> float:
    """Length in meters of the Tx->voxel segment inside occupied voxels."""
    spec = building.spec
    if not (spec.contains(p_tx) and spec.contains(voxel)):
        raise ValueError("segment endpoints must lie inside the grid")
    cells, lengths = _segment_cell_lengths(np.asarray(p_tx, dtype=np.float64),
                                           np.asarray(voxel, dtype=np.float64))
    if cells.shape[0] == 0:
        return 0.0
    occ = building.occupancy[cells[:, 0], cells[:, 1], cells[:, 2]]
    return float(lengths[occ > 0].sum() * spec.delta)


def _attenuation_volume(building: BuildingGrid, p_tx) -> np.ndarray:
    """Building-penetration meters from p_tx to every voxel center."""
    spec = building.spec
    out = np.zeros(spec.shape)
    if building.occupancy.sum() == 0:
        return out
    a = np.asarray(p_tx, dtype=np.float64)
    for l in range(spec.L):
        for w in range(spec.W):
            for h in range(spec.H):
                cells, lengths = _segment_cell_lengths(a, np.array([l, w, h], dtype=np.float64))
                if cells.shape[0]:
                    occ = building.occupancy[cells[:, 0], cells[:, 1], cells[:, 2]]
                    out[l, w, h] = lengths[occ > 0].sum()
    return out * spec.delta


def distance_grid(spec: VoxelGridSpec, p_tx) -> np.ndarray:
    """Center-to-center distances in meters, transmitter voxel clamped to delta/2."""
    ll, ww, hh = np.meshgrid(np.arange(spec.L), np.arange(spec.W), np.arange(spec.H),
                             indexing="ij")
    d = np.sqrt((ll - p_tx[0]) ** 2 + (ww - p_tx[1]) ** 2 + (hh - p_tx[2]) ** 2) * spec.delta
    return np.maximum(d, spec.delta / 2.0)


def gain_grid(spec: VoxelGridSpec, bs: BsConfig) -> np.ndarray:
    """Antenna gain toward every voxel, in dB."""
    model = AntennaModel.from_type(bs.antenna_type)
    if model.antenna_type == "iso":
        return np.zeros(spec.shape)
    ll, ww, hh = np.meshgrid(np.arange(spec.L), np.arange(spec.W), np.arange(spec.H),
                             indexing="ij")
    dl, dw, dh = ll - bs.p_tx[0], ww - bs.p_tx[1], hh - bs.p_tx[2]
    phi = np.arctan2(dw, dl)
    theta = np.arctan2(dh, np.hypot(dl, dw))
    return antenna_gain(model, phi - bs.boresight_az, theta - bs.boresight_el)


def shadowing_field(spec: VoxelGridSpec, params: ShadowingParams) -> np.ndarray:
    """Zero-mean Gaussian field smoothed to the requested correlation length."""
    rng = np.random.default_rng(params.seed)
    field = rng.standard_normal(spec.shape)
    field = gaussian_filter(field, sigma=params.correlation_m / spec.delta, mode="wrap")
    std = field.std()
    if std > 0 and params.sigma_db > 0:
        field = field * (params.sigma_db / std)
    else:
        field = np.zeros(spec.shape)
    return field - field.mean()


def render_arm(building: BuildingGrid, bs: BsConfig,
               params: PropagationParams | None = None) -> ArmVolume:
    """Full RSS volume: r_i = P_tx + g_i - (FSPL_i + alpha_b * blocked_i) [+ shadowing]."""
    params = params or PropagationParams()
    spec = building.spec
    bs.validate_in_grid(spec)
    loss = fspl(distance_grid(spec, bs.p_tx), bs.f_c, params.C)
    loss = loss + params.alpha_b * _attenuation_volume(building, bs.p_tx)
    values = bs.P_tx + gain_grid(spec, bs) - loss
    if params.shadowing is not None:
        values = values + shadowing_field(spec, params.shadowing)
    return ArmVolume(values=values, spec=spec)


def rss_at_voxel(building: BuildingGrid, bs: BsConfig, voxel: tuple[int, int, int],
                 params: PropagationParams | None = None) -> float:
    """Pointwise re-evaluation of the link budget for one voxel.

    Uses the scalar fspl/antenna_gain/trace_attenuation path, independent of
    the vectorized renderer; shadowing (if any) must be added by the caller.
    """
    params = params or PropagationParams()
    spec = building.spec
    d = max(math.dist(voxel, bs.p_tx) * spec.delta, spec.delta / 2.0)
    dl, dw, dh = (voxel[0] - bs.p_tx[0], voxel[1] - bs.p_tx[1], voxel[2] - bs.p_tx[2])
    model = AntennaModel.from_type(bs.antenna_type)
    g = antenna_gain(model,
                     math.atan2(dw, dl) - bs.boresight_az,
                     math.atan2(dh, math.hypot(dl, dw)) - bs.boresight_el)
    blocked = trace_attenuation(building, bs.p_tx, voxel)
    return float(bs.P_tx + g - fspl(d, bs.f_c, params.C) - params.alpha_b * blocked)


def generate_buildings(rng: np.random.Generator, spec: VoxelGridSpec, n_buildings: int,
                       footprint_range: tuple[int, int] = (3, 12),
                       height_range: tuple[int, int] | None = None) -> BuildingGrid:
    """Random axis-aligned boxes attached to the ground."""
    if n_buildings < 0:
        raise ValueError("n_buildings must be >= 0")
    if height_range is None:
        height_range = (1, max(1, spec.H - 2))
    occ = np.zeros(spec.shape, dtype=np.uint8)
    for _ in range(n_buildings):
        fl = int(rng.integers(footprint_range[0], min(footprint_range[1], spec.L) + 1))
        fw = int(rng.integers(footprint_range[0], min(footprint_range[1], spec.W) + 1))
        hgt = int(rng.integers(height_range[0], min(height_range[1], spec.H) + 1))
        l0 = int(rng.integers(0, spec.L - fl + 1))
        w0 = int(rng.integers(0, spec.W - fw + 1))
        occ[l0:l0 + fl, w0:w0 + fw, :hgt] = 1
    return BuildingGrid(occupancy=occ, spec=spec)


def place_transmitter(rng: np.random.Generator, building: BuildingGrid,
                      n_candidates: int = 24, n_targets: int = 96) -> tuple[int, int, int]:
    """Pick the free voxel with the best line-of-sight count over a target sample."""
    spec = building.spec
    free = np.flatnonzero(building.occupancy.ravel() == 0)
    if free.size == 0:
        raise ValueError("no free voxel available for transmitter placement")
    cand_idx = rng.choice(free, size=min(n_candidates, free.size), replace=False)
    target_idx = rng.integers(0, spec.n_voxels, size=n_targets)
    candidates = np.stack(np.unravel_index(cand_idx, spec.shape), axis=1)
    targets = np.stack(np.unravel_index(target_idx, spec.shape), axis=1)
    best, best_score = None, -1
    for cand in candidates:
        score = sum(1 for t in targets
                    if trace_attenuation(building, tuple(cand), tuple(t)) == 0.0)
        if score > best_score:
            best, best_score = cand, score
    return (int(best[0]), int(best[1]), int(best[2]))


def generate_scene(seed: int, spec: VoxelGridSpec, n_buildings: int,
                   f_c: float = CARRIER_FREQUENCIES_HZ["2.1"], P_tx: float = 30.0,
                   antenna_type: str = "iso") -> tuple[BuildingGrid, BsConfig]:
    """Procedural scene plus a transmitter placed by LoS score; seed-deterministic."""
    rng = np.random.default_rng(seed)
    building = generate_buildings(rng, spec, n_buildings)
    p_tx = place_transmitter(rng, building)
    bs = BsConfig(p_tx=p_tx, P_tx=P_tx, f_c=f_c, antenna_type=antenna_type,
                  boresight_az=float(rng.uniform(-np.pi, np.pi)),
                  boresight_el=float(rng.uniform(-0.3, 0.0)))
    bs.validate_in_grid(spec)
    return building, bs
