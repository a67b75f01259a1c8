"""Two-stage optimization: masked-denoising pretraining with condition
dropping, then decoder-only generative fine-tuning with paired
condition-based / condition-free branches.

Losses live in velocity space: the decoder predicts the clean map, and the
predicted velocity (R_hat - Z_t) / (1 - t) is regressed onto R - eps over
the masked patches only.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch

from .conditioning import (T_EPS, build_condition_grids, null_condition_grids,
                           sample_mask)
from .core import PatchPlan, patch_plan
from .dataset import FarmDataset, derive_rng
from .model import FarmModel, ModelConfig

_BATCH, _TIME, _NOISE, _MASK, _DROP, _INIT = 10, 11, 12, 13, 14, 15


@dataclass
class TrainConfig:
    stage: str = "pretrain"
    p_mask: float = 0.75
    p_m: float = 0.2
    p_mask_free: float = 0.95
    lambda_free: float = 1.0
    lambda_based: float = 1.0
    epochs: int = 80
    warmup_epochs: int = 5
    batch_size: int = 100
    peak_lr: float = 2e-4
    weight_decay: float = 0.05
    grad_clip: float | None = 1.0
    max_steps: int | None = None
    t_eps: float = T_EPS
    seed: int = 0
    dtype: str = "float32"
    log_every: int = 50

    def __post_init__(self):
        if self.stage not in ("pretrain", "finetune"):
            raise ValueError(f"unknown stage {self.stage!r}")
        for name in ("p_mask", "p_m", "p_mask_free"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.lambda_free < 0 or self.lambda_based < 0:
            raise ValueError("loss weights must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")

    @classmethod
    def pretrain_defaults(cls, **overrides) -> "TrainConfig":
        return cls(stage="pretrain", **overrides)

    @classmethod
    def finetune_defaults(cls, **overrides) -> "TrainConfig":
        base = dict(stage="finetune", epochs=20, warmup_epochs=0, peak_lr=1e-4)
        base.update(overrides)
        return cls(**base)

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)


def velocity_loss(pred: torch.Tensor, r: torch.Tensor, z: torch.Tensor,
                  eps: torch.Tensor, t: torch.Tensor,
                  t_eps: float = T_EPS) -> torch.Tensor:
    """Masked-patch flow-matching loss.

    All patch tensors are (B, N_m, P) restricted to the masked set; t is
    (B,). Per patch the squared 2-norm of the velocity residual is taken over
    the flattened voxels, then averaged over patches and batch.
    """
    if torch.any(t > 1.0 - t_eps + 1e-12):
        raise ValueError(f"flow time too close to 1 (max {float(t.max())})")
    tt = t.reshape(-1, 1, 1).to(pred.dtype)
    resid = (pred - z) / (1.0 - tt) - (r - eps)
    return resid.pow(2).sum(dim=-1).mean()


def parameter_checksum(module: torch.nn.Module) -> str:
    """Order-stable sha256 over all parameter bytes."""
    h = hashlib.sha256()
    for name, p in sorted(module.named_parameters()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


class SampleBank:
    """Preloaded training samples: normalized maps plus cached condition grids."""

    def __init__(self, plan: PatchPlan, r_norm: list[np.ndarray], grids: list,
                 ids: list[str] | None = None):
        if not r_norm:
            raise ValueError("empty training split")
        if len(r_norm) != len(grids):
            raise ValueError("one condition-grid set per sample required")
        self.plan = plan
        self.r_norm = r_norm
        self.grids = grids
        self.ids = ids or [str(i) for i in range(len(r_norm))]
        self.null_grids = null_condition_grids(plan.spec)

    @classmethod
    def from_dataset(cls, dataset: FarmDataset, sample_ids: list[str],
                     plan: PatchPlan) -> "SampleBank":
        params = dataset.propagation()
        r_norm, grids = [], []
        for sid in sample_ids:
            r_norm.append(dataset.load_volume(sid).normalized())
            grids.append(build_condition_grids(dataset.building_for(sid),
                                               dataset.bs(sid), dataset.norm, params))
        return cls(plan, r_norm, grids, ids=list(sample_ids))

    def __len__(self) -> int:
        return len(self.r_norm)


def _gather_patches(plan: PatchPlan, field: np.ndarray, ids: np.ndarray) -> np.ndarray:
    return np.stack([field[plan.slices(int(pid))].ravel() for pid in ids])


def make_batch(bank: SampleBank, indices: np.ndarray, p_mask: float, p_m: float,
               rng: np.random.Generator, t_eps: float,
               force_null: bool = False, force_keep: bool = False) -> dict:
    """Assemble one conditioned training batch (numpy, converted by the caller).

    Per sample: t ~ U[0, 1 - t_eps], eps ~ N(0, I), an exact-count patch mask,
    and a Bernoulli(p_m) condition drop (unless forced either way).
    """
    plan = bank.plan
    n_p = plan.n_patches
    n_m = int(np.floor(p_mask * n_p))
    chans, masked, visible, ts = [], [], [], []
    r_p, z_p, e_p = [], [], []
    mask_seeds = []
    n_dropped = 0
    for i in indices:
        r = bank.r_norm[i]
        t = float(rng.uniform(0.0, 1.0 - t_eps))
        eps = rng.standard_normal(r.shape)
        mask_seeds.append(int(rng.integers(2 ** 62)))
        mask = sample_mask(n_p, p_mask, seed=mask_seeds[-1])
        if force_null:
            dropped = True
        elif force_keep:
            dropped = False
        else:
            dropped = bool(rng.random() < p_m)
        n_dropped += dropped
        grids = bank.null_grids if dropped else bank.grids[i]
        z = t * r + (1.0 - t) * eps
        radio = r.copy()
        for pid in mask.masked_ids:
            sl = plan.slices(int(pid))
            radio[sl] = z[sl]
        chans.append(np.stack([radio, grids.v_pos, grids.v_fspl, grids.buildings]))
        masked.append(mask.masked_ids)
        visible.append(mask.visible_ids)
        ts.append(t)
        r_p.append(_gather_patches(plan, r, mask.masked_ids))
        z_p.append(_gather_patches(plan, z, mask.masked_ids))
        e_p.append(_gather_patches(plan, eps, mask.masked_ids))
    return {
        "channels": np.stack(chans),
        "masked_ids": np.stack(masked),
        "visible_ids": np.stack(visible) if n_p - n_m > 0 else None,
        "t": np.array(ts),
        "r_patches": np.stack(r_p),
        "z_patches": np.stack(z_p),
        "eps_patches": np.stack(e_p),
        "n_dropped": n_dropped,
        "mask_seeds": mask_seeds,
    }


def _to_torch(batch: dict, dtype: torch.dtype) -> dict:
    out = {}
    for k, v in batch.items():
        if v is None or k in ("n_dropped", "mask_seeds"):
            out[k] = v
        elif k.endswith("_ids"):
            out[k] = torch.from_numpy(np.ascontiguousarray(v)).long()
        else:
            out[k] = torch.from_numpy(np.ascontiguousarray(v)).to(dtype)
    return out


def masked_pred_patches(model: FarmModel, volume: torch.Tensor,
                        masked_ids: torch.Tensor) -> torch.Tensor:
    """Gather the predicted masked patches from a (B, L, W, H) model output."""
    patches = model.patchify(volume.unsqueeze(1))
    return torch.take_along_dim(patches, masked_ids[..., None], dim=1)


def lr_at(step: int, total: int, warmup: int, peak: float) -> float:
    """Linear warmup to the peak, then cosine decay to zero."""
    if warmup > 0 and step < warmup:
        return peak * (step + 1) / warmup
    if total <= warmup:
        return peak
    frac = (step - warmup) / max(1, total - warmup)
    return peak * 0.5 * (1.0 + math.cos(math.pi * min(frac, 1.0)))


class JsonlLogger:
    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def log(self, record: dict) -> None:
        if self.path:
            with self.path.open("a") as f:
                f.write(json.dumps(record) + "\n")


def _loss_guard(loss: torch.Tensor, step: int, stage: str, extra: dict) -> None:
    if not torch.isfinite(loss):
        raise RuntimeError(f"non-finite loss at {stage} step {step}: "
                           f"{loss.item()} ({json.dumps(extra)})")


def total_steps_for(config: TrainConfig, n_train: int) -> tuple[int, int]:
    steps_per_epoch = max(1, math.ceil(n_train / config.batch_size))
    total = config.epochs * steps_per_epoch
    if config.max_steps is not None:
        total = config.max_steps
    warmup = int(round(total * config.warmup_epochs / max(1, config.epochs)))
    return total, warmup


def _batch_indices(n: int, batch_size: int, rng: np.random.Generator):
    """Endless shuffled epochs of sample indices."""
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            chunk = order[start:start + batch_size]
            if chunk.size:
                yield chunk


def pretrain(model: FarmModel, dataset: FarmDataset, config: TrainConfig,
             log_path: str | Path | None = None,
             sample_ids: list[str] | None = None) -> list[float]:
    """Joint encoder+decoder optimization with condition dropping."""
    plan = patch_plan(dataset.spec, model.cfg.patch)
    bank = SampleBank.from_dataset(dataset, sample_ids or dataset.sample_ids("train"), plan)
    dtype = config.torch_dtype
    model = model.to(dtype)
    model.train()
    total, warmup = total_steps_for(config, len(bank))
    opt = torch.optim.AdamW(model.parameters(), lr=config.peak_lr,
                            betas=(0.9, 0.999), weight_decay=config.weight_decay)
    rng = derive_rng(config.seed, _BATCH)
    logger = JsonlLogger(log_path)
    losses = []
    batches = _batch_indices(len(bank), config.batch_size, rng)
    for step in range(total):
        lr = lr_at(step, total, warmup, config.peak_lr)
        for group in opt.param_groups:
            group["lr"] = lr
        batch = _to_torch(make_batch(bank, next(batches), config.p_mask, config.p_m,
                                     rng, config.t_eps), dtype)
        pred_vol = model(batch["channels"], batch["t"], batch["masked_ids"],
                         batch["visible_ids"])
        pred = masked_pred_patches(model, pred_vol, batch["masked_ids"])
        loss = velocity_loss(pred, batch["r_patches"], batch["z_patches"],
                             batch["eps_patches"], batch["t"], config.t_eps)
        _loss_guard(loss, step, "pretrain", {"lr": lr})
        opt.zero_grad()
        loss.backward()
        if config.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
        opt.step()
        losses.append(loss.item())
        if step % config.log_every == 0 or step == total - 1:
            t = batch["t"]
            logger.log({"step": step, "stage": "pretrain", "loss": losses[-1],
                        "lr": lr, "t_mean": float(t.mean()), "t_min": float(t.min()),
                        "t_max": float(t.max()), "seed": config.seed,
                        "mask_seeds": batch["mask_seeds"]})
    model.eval()
    return losses


def _branch_loss(model: FarmModel, bank: SampleBank, indices: np.ndarray,
                 p_mask: float, rng: np.random.Generator, config: TrainConfig,
                 null_conditions: bool, dtype: torch.dtype) -> torch.Tensor:
    batch = _to_torch(make_batch(bank, indices, p_mask, 0.0, rng, config.t_eps,
                                 force_null=null_conditions,
                                 force_keep=not null_conditions), dtype)
    pred_vol = model(batch["channels"], batch["t"], batch["masked_ids"],
                     batch["visible_ids"])
    pred = masked_pred_patches(model, pred_vol, batch["masked_ids"])
    return velocity_loss(pred, batch["r_patches"], batch["z_patches"],
                         batch["eps_patches"], batch["t"], config.t_eps)


def finetune(model: FarmModel, dataset: FarmDataset, config: TrainConfig,
             log_path: str | Path | None = None,
             sample_ids: list[str] | None = None) -> list[float]:
    """Decoder-only fine-tuning: condition-based (full mask, real grids) and
    condition-free (null grids, p_mask_free) branches combined per batch."""
    plan = patch_plan(dataset.spec, model.cfg.patch)
    bank = SampleBank.from_dataset(dataset, sample_ids or dataset.sample_ids("train"), plan)
    dtype = config.torch_dtype
    model = model.to(dtype)
    model.train()
    for p in model.encoder.parameters():
        p.requires_grad_(False)
    total, warmup = total_steps_for(config, len(bank))
    opt = torch.optim.AdamW(model.decoder_parameters(), lr=config.peak_lr,
                            betas=(0.9, 0.999), weight_decay=config.weight_decay)
    rng = derive_rng(config.seed, _BATCH, 1)
    logger = JsonlLogger(log_path)
    losses = []
    batches = _batch_indices(len(bank), config.batch_size, rng)
    for step in range(total):
        lr = lr_at(step, total, warmup, config.peak_lr)
        for group in opt.param_groups:
            group["lr"] = lr
        indices = next(batches)
        # the two branches run sequentially, one combined update per batch
        loss_based = _branch_loss(model, bank, indices, 1.0, rng, config,
                                  null_conditions=False, dtype=dtype)
        loss_free = _branch_loss(model, bank, indices, config.p_mask_free, rng,
                                 config, null_conditions=True, dtype=dtype)
        loss = config.lambda_free * loss_free + config.lambda_based * loss_based
        _loss_guard(loss, step, "finetune",
                    {"free": loss_free.item(), "based": loss_based.item()})
        opt.zero_grad()
        loss.backward()
        if config.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(model.decoder.parameters(),
                                           config.grad_clip)
        opt.step()
        losses.append(loss.item())
        if step % config.log_every == 0 or step == total - 1:
            logger.log({"step": step, "stage": "finetune", "loss": losses[-1],
                        "loss_free": loss_free.item(), "loss_based": loss_based.item(),
                        "lr": lr, "seed": config.seed})
    for p in model.encoder.parameters():
        p.requires_grad_(True)
    model.eval()
    return losses
