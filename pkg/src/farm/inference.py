"""Euler ODE sampling over the learned velocity field.

Three operating modes:

- condition_free: sparse observations only; condition channels are the -2
  sentinel and observed patches provide encoder context.
- condition_only: environment grids only; decoder-only with a full mask.
- hybrid: both; observed patches plus real condition grids.

Sampling always starts from standard Gaussian noise on the masked patches
and integrates dZ/dt = (R_hat - Z) / (1 - t) on the uniform grid t_k = k / K.
Because the final Euler step spans exactly 1 - t_(K-1), its endpoint equals
the decoder's last clean prediction, which is what gets returned (the
evaluation time is clamped below 1 to keep the 1/(1-t) factor bounded).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from .conditioning import (T_EPS, ConditionGrids, PatchMask, mask_from_visible,
                           null_condition_grids, observation_to_visible)
from .core import ArmVolume, NormRange, PatchPlan, SparseObservation
from .model import FarmModel

MODES = ("condition_free", "condition_only", "hybrid")

# predictor: (z_masked (N_m, P) normalized, t) -> clean masked patches (N_m, P)
Predictor = Callable[[np.ndarray, float], np.ndarray]


@dataclass(frozen=True)
class InferenceRequest:
    mode: str
    steps: int = 1
    seed: int = 0
    observations: SparseObservation | None = None
    grids: ConditionGrids | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.mode == "condition_free":
            if self.observations is None:
                raise ValueError("condition_free requires observations")
            if self.grids is not None and not self.grids.dropped:
                raise ValueError("condition_free forbids condition grids")
        elif self.mode == "condition_only":
            if self.grids is None:
                raise ValueError("condition_only requires condition grids")
            if self.observations is not None:
                raise ValueError("condition_only forbids observations")
        else:
            if self.observations is None or self.grids is None:
                raise ValueError("hybrid requires both observations and grids")


@dataclass
class InferenceResult:
    volume: ArmVolume
    metadata: dict = field(default_factory=dict)


def velocity(predictor: Predictor, z: np.ndarray, t: float,
             t_eps: float = T_EPS) -> np.ndarray:
    """Predicted velocity (R_hat - Z) / (1 - t) on the masked patches."""
    if t > 1.0 - t_eps + 1e-12:
        raise ValueError(f"flow time t={t} too close to 1")
    r_hat = predictor(z, t)
    return (r_hat - z) / (1.0 - t)


def euler_sample(predictor: Predictor, n_masked: int, patch_dim: int, steps: int,
                 seed: int, t_eps: float = T_EPS) -> np.ndarray:
    """Integrate from Z_0 ~ N(0, I); returns the final clean prediction."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_masked, patch_dim))
    h = 1.0 / steps
    r_hat = None
    for k in range(steps):
        t_k = min(k * h, 1.0 - t_eps)
        r_hat = predictor(z, t_k)
        if k < steps - 1:
            z = z + h * (r_hat - z) / (1.0 - t_k)
    return r_hat


def make_predictor(model: FarmModel, plan: PatchPlan, mask: PatchMask,
                   radio_visible: np.ndarray, grids: ConditionGrids) -> Predictor:
    """Wrap the network as a masked-patch predictor with fixed context.

    radio_visible is the normalized radio channel holding clean content on
    visible patches (anything on masked patches is overwritten by Z).
    """
    dtype = next(model.parameters()).dtype
    device = next(model.parameters()).device
    cond = np.stack([radio_visible, grids.v_pos, grids.v_fspl, grids.buildings])
    masked_ids = torch.from_numpy(mask.masked_ids).long().unsqueeze(0).to(device)
    visible_ids = None
    if mask.n_visible > 0:
        visible_ids = torch.from_numpy(mask.visible_ids).long().unsqueeze(0).to(device)

    def predict(z: np.ndarray, t: float) -> np.ndarray:
        channels = cond.copy()
        for row, pid in enumerate(mask.masked_ids):
            channels[0][plan.slices(int(pid))] = z[row].reshape(plan.patch)
        with torch.no_grad():
            x = torch.from_numpy(channels).to(dtype=dtype, device=device).unsqueeze(0)
            tt = torch.full((1,), float(t), dtype=dtype, device=device)
            vol = model(x, tt, masked_ids, visible_ids)
            patches = model.patchify(vol.unsqueeze(1))
            out = torch.take_along_dim(patches, masked_ids[..., None], dim=1)
        return out[0].cpu().double().numpy()

    return predict


def sample(predictor: Predictor, plan: PatchPlan, norm: NormRange, mask: PatchMask,
           radio_visible: np.ndarray, request: InferenceRequest) -> InferenceResult:
    """Run the sampler and assemble the output volume in dBm.

    Visible patches pass through unchanged from radio_visible; masked patches
    take the integrated prediction. The result is denormalized.
    """
    out = np.array(radio_visible, dtype=np.float64)
    if mask.n_masked > 0:
        pred = euler_sample(predictor, mask.n_masked, plan.voxels_per_patch,
                            request.steps, request.seed)
        for row, pid in enumerate(mask.masked_ids):
            out[plan.slices(int(pid))] = pred[row].reshape(plan.patch)
    volume = ArmVolume(values=norm.denormalize(out), spec=plan.spec, norm=norm)
    return InferenceResult(volume=volume,
                           metadata={"mode": request.mode, "steps": request.steps,
                                     "seed": request.seed,
                                     "n_masked": mask.n_masked,
                                     "n_visible": mask.n_visible})


def estimate_arm(model: FarmModel, plan: PatchPlan, norm: NormRange,
                 request: InferenceRequest) -> InferenceResult:
    """Top-level entry: dispatch a request to the sampler with the right context."""
    if request.observations is None and request.grids is None:
        raise ValueError("need at least one of observations or condition grids")
    if request.mode == "condition_only":
        mask = mask_from_visible(np.empty(0, dtype=np.int64), plan.n_patches)
        radio_visible = np.zeros(plan.spec.shape)
        grids = request.grids
    else:
        visible, radio_visible = observation_to_visible(request.observations, plan, norm)
        mask = mask_from_visible(visible, plan.n_patches)
        grids = request.grids if request.mode == "hybrid" else null_condition_grids(plan.spec)
    predictor = make_predictor(model, plan, mask, radio_visible, grids)
    return sample(predictor, plan, norm, mask, radio_visible, request)
