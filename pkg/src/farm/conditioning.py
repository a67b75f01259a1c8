"""Flow-matching probability path, patch-level noisy masking, and the
4-channel conditioned input (radio, position one-hot, FSPL, buildings).

Everything here operates in normalized space ([-1, 1] for valid radio
values). The missing-condition sentinel -2 lies strictly below that range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ArmVolume, BsConfig, BuildingGrid, NormRange, PatchPlan, SparseObservation, VoxelGridSpec
from .synth import PropagationParams, distance_grid, fspl, gain_grid

SENTINEL = -2.0
T_EPS = 1e-3          # flow time guard: t is sampled in [0, 1 - T_EPS]
CHANNELS = ("radio", "v_pos", "v_fspl", "buildings")


@dataclass(frozen=True)
class FlowState:
    """Linearly interpolated state Z_t = t R + (1-t) eps and its velocity target."""

    t: float
    epsilon: np.ndarray
    z: np.ndarray
    velocity: np.ndarray    # v = R - eps, constant along the path


def flow_interpolate(r: np.ndarray, epsilon: np.ndarray, t: float) -> FlowState:
    """Point on the noise->data path at time t in [0, 1 - T_EPS]."""
    if not 0.0 <= t <= 1.0 - T_EPS:
        raise ValueError(f"flow time t={t} outside [0, {1.0 - T_EPS}]")
    r = np.asarray(r, dtype=np.float64)
    epsilon = np.asarray(epsilon, dtype=np.float64)
    if r.shape != epsilon.shape:
        raise ValueError(f"shape mismatch: {r.shape} vs {epsilon.shape}")
    return FlowState(t=float(t), epsilon=epsilon,
                     z=t * r + (1.0 - t) * epsilon, velocity=r - epsilon)


@dataclass(frozen=True)
class PatchMask:
    """Exact-count random split of patch ids into masked and visible sets."""

    masked_ids: np.ndarray
    visible_ids: np.ndarray
    p_mask: float
    seed: int

    @property
    def n_masked(self) -> int:
        return int(self.masked_ids.size)

    @property
    def n_visible(self) -> int:
        return int(self.visible_ids.size)


def sample_mask(n_patches: int, p_mask: float, seed: int) -> PatchMask:
    """Uniformly draw floor(p_mask * N_p) patches to mask; deterministic per seed."""
    if not 0.0 <= p_mask <= 1.0:
        raise ValueError(f"p_mask must lie in [0, 1], got {p_mask}")
    n_masked = int(np.floor(p_mask * n_patches))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_patches)
    masked = np.sort(perm[:n_masked])
    visible = np.sort(perm[n_masked:])
    return PatchMask(masked_ids=masked, visible_ids=visible, p_mask=p_mask, seed=seed)


def mask_from_visible(visible_ids: np.ndarray, n_patches: int) -> PatchMask:
    """PatchMask with a prescribed visible set (e.g. from observations)."""
    visible = np.sort(np.asarray(visible_ids, dtype=np.int64))
    masked = np.setdiff1d(np.arange(n_patches), visible)
    p_mask = masked.size / n_patches if n_patches else 0.0
    return PatchMask(masked_ids=masked, visible_ids=visible, p_mask=p_mask, seed=-1)


@dataclass(frozen=True)
class ConditionGrids:
    """The three spatial priors; all equal the sentinel when dropped."""

    v_pos: np.ndarray
    v_fspl: np.ndarray
    buildings: np.ndarray
    dropped: bool


def build_condition_grids(building: BuildingGrid, bs: BsConfig, norm: NormRange,
                          params: PropagationParams | None = None,
                          drop: bool = False) -> ConditionGrids:
    """Transmitter one-hot, normalized FSPL-minus-gain, and occupancy grids.

    The FSPL channel applies the dataset affine map without clamping so the
    stored values remain invertible back to the dB closed form.
    """
    params = params or PropagationParams()
    spec = building.spec
    bs.validate_in_grid(spec)
    if drop:
        null = np.full(spec.shape, SENTINEL)
        return ConditionGrids(v_pos=null.copy(), v_fspl=null.copy(),
                              buildings=null.copy(), dropped=True)
    v_pos = np.zeros(spec.shape)
    v_pos[bs.p_tx] = 1.0
    fspl_db = fspl(distance_grid(spec, bs.p_tx), bs.f_c, params.C) - gain_grid(spec, bs)
    v_fspl = norm.normalize(fspl_db, clamp=False)
    return ConditionGrids(v_pos=v_pos, v_fspl=v_fspl,
                          buildings=building.occupancy.astype(np.float64), dropped=False)


def null_condition_grids(spec: VoxelGridSpec) -> ConditionGrids:
    """All-sentinel grids for the condition-free paths."""
    null = np.full(spec.shape, SENTINEL)
    return ConditionGrids(v_pos=null.copy(), v_fspl=null.copy(),
                          buildings=null.copy(), dropped=True)


@dataclass(frozen=True)
class ConditionedInput:
    """4 x (L, W, H) stacked channels plus the patch plan, mask and flow time.

    Channel order is fixed: (radio, v_pos, v_fspl, buildings). The radio
    channel holds Z_t on masked patches and the clean normalized map on
    visible ones; condition channels are never masked.
    """

    channels: np.ndarray
    plan: PatchPlan
    mask: PatchMask
    t: float


def assemble_input(r_norm: np.ndarray, grids: ConditionGrids, plan: PatchPlan,
                   mask: PatchMask, t: float, epsilon: np.ndarray) -> ConditionedInput:
    """Apply patch-level noisy masking to the radio channel and stack conditions."""
    shape = plan.spec.shape
    for name, arr in (("radio", r_norm), ("epsilon", epsilon), ("v_pos", grids.v_pos),
                      ("v_fspl", grids.v_fspl), ("buildings", grids.buildings)):
        if np.shape(arr) != shape:
            raise ValueError(f"{name} shape {np.shape(arr)} does not match grid {shape}")
    state = flow_interpolate(r_norm, epsilon, t)
    radio = np.array(r_norm, dtype=np.float64)
    for pid in mask.masked_ids:
        sl = plan.slices(int(pid))
        radio[sl] = state.z[sl]
    channels = np.stack([radio, grids.v_pos, grids.v_fspl, grids.buildings], axis=0)
    return ConditionedInput(channels=channels, plan=plan, mask=mask, t=float(t))


def observation_to_visible(obs: SparseObservation, plan: PatchPlan,
                           norm: NormRange) -> tuple[np.ndarray, np.ndarray]:
    """Quantize voxel observations to patch granularity.

    Returns (visible patch ids, radio grid in normalized space) where the
    radio grid carries observed values at their voxels and the patch mean at
    unobserved voxels inside visible patches; other voxels are zero.
    """
    coords = obs.coords()
    pids = np.array([plan.patch_of_voxel(*c) for c in coords], dtype=np.int64)
    visible = np.unique(pids)
    radio_dbm = np.zeros(plan.spec.shape)
    for pid in visible:
        sel = pids == pid
        sl = plan.slices(int(pid))
        patch = np.full(plan.patch, np.mean(obs.values[sel]))
        local = coords[sel] - np.array([sl[0].start, sl[1].start, sl[2].start])
        patch[local[:, 0], local[:, 1], local[:, 2]] = obs.values[sel]
        radio_dbm[sl] = patch
    radio = norm.normalize(radio_dbm)
    outside = np.ones(plan.n_patches, dtype=bool)
    outside[visible] = False
    for pid in np.flatnonzero(outside):
        radio[plan.slices(int(pid))] = 0.0
    return visible, radio
