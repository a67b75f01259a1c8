"""Experiment orchestration: gen -> pretrain -> finetune -> infer -> eval ->
report, with per-stage skip markers so reruns are idempotent.

Each stage writes <out>/<stage>.done.json recording the hash of the config
subset it depends on; a rerun skips the stage when that hash matches, unless
forced.
"""

from __future__ import annotations

import json
from pathlib import Path

import torch

from . import version_string
from .checkpoint import load_model, save_model
from .config import RunConfig
from .conditioning import build_condition_grids
from .core import load_volume_f32, patch_plan, save_volume_f32
from .dataset import FarmDataset, build_dataset, sample_observations
from .inference import InferenceRequest, estimate_arm
from .kriging import kriging_predict
from .metrics import evaluate
from .model import FarmModel
from .report import generate_report
from .training import TrainConfig, finetune, pretrain, total_steps_for


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException, log_hint: str = ""):
        hint = f" (see {log_hint})" if log_hint else ""
        super().__init__(f"stage {stage!r} failed: {cause}{hint}")
        self.stage = stage


def _marker(out: Path, stage: str) -> Path:
    return out / f"{stage}.done.json"


def _should_skip(out: Path, stage: str, stage_hash: str, force: bool) -> bool:
    if force:
        return False
    marker = _marker(out, stage)
    if not marker.exists():
        return False
    try:
        return json.loads(marker.read_text()).get("stage_hash") == stage_hash
    except json.JSONDecodeError:
        return False


def _mark_done(out: Path, stage: str, stage_hash: str, info: dict) -> None:
    _marker(out, stage).write_text(json.dumps(
        {"stage_hash": stage_hash, "version": version_string(), **info}, indent=1))


def write_volume_with_sidecar(path: Path, values, sidecar: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    save_volume_f32(path, values)
    Path(f"{path}.json").write_text(json.dumps(sidecar, indent=1))


def _stage_gen(config: RunConfig, out: Path) -> None:
    build_dataset(config.dataset, out / "dataset")


def _stage_pretrain(config: RunConfig, out: Path) -> None:
    dataset = FarmDataset(out / "dataset")
    torch.manual_seed(config.seed)
    model = FarmModel(config.model)
    pretrain(model, dataset, config.pretrain, log_path=out / "logs" / "pretrain.jsonl")
    save_model(out / "checkpoints" / "pretrain.ckpt", model, stage="pretrain",
               step=_total_steps(config.pretrain, dataset), seed=config.seed,
               dataset_hash=dataset.manifest["content_hash"], norm=dataset.norm,
               extra={"train_config": config.pretrain.to_dict(),
                      "config_hash": config.stage_hash("pretrain")})


def _stage_finetune(config: RunConfig, out: Path) -> None:
    dataset = FarmDataset(out / "dataset")
    dtype = config.finetune.torch_dtype
    model, _ = load_model(out / "checkpoints" / "pretrain.ckpt", dtype=dtype)
    finetune(model, dataset, config.finetune, log_path=out / "logs" / "finetune.jsonl")
    save_model(out / "checkpoints" / "finetune.ckpt", model, stage="finetune",
               step=_total_steps(config.finetune, dataset), seed=config.seed,
               dataset_hash=dataset.manifest["content_hash"], norm=dataset.norm,
               extra={"train_config": config.finetune.to_dict(),
                      "config_hash": config.stage_hash("finetune")})


def _total_steps(tc: TrainConfig, dataset: FarmDataset) -> int:
    return total_steps_for(tc, len(dataset.sample_ids("train")))[0]


def _eval_sample_ids(config: RunConfig, dataset: FarmDataset) -> list[str]:
    ids = dataset.sample_ids(config.inference.split) or dataset.sample_ids(None)
    return ids[: config.inference.max_eval_samples]


def _stage_infer(config: RunConfig, out: Path) -> None:
    dataset = FarmDataset(out / "dataset")
    model, manifest = load_model(out / "checkpoints" / "finetune.ckpt")
    plan = patch_plan(dataset.spec, config.model.patch)
    params = dataset.propagation()
    inf = config.inference
    for sid in _eval_sample_ids(config, dataset):
        truth = dataset.load_volume(sid)
        grids = build_condition_grids(dataset.building_for(sid), dataset.bs(sid),
                                      dataset.norm, params)
        obs = sample_observations(truth, inf.sample_rate, seed=inf.seed, plan=plan,
                                  granularity=inf.granularity)
        for mode in inf.modes:
            request = InferenceRequest(
                mode=mode, steps=inf.steps, seed=inf.seed,
                observations=obs if mode != "condition_only" else None,
                grids=grids if mode != "condition_free" else None)
            result = estimate_arm(model, plan, dataset.norm, request)
            sidecar = {"sample_id": sid, "mode": mode,
                       "spec": dataset.spec.to_dict(), "norm": dataset.norm.to_dict(),
                       "sample_rate": inf.sample_rate, "version": version_string(),
                       "config_hash": config.stage_hash("infer"), "seed": inf.seed,
                       **result.metadata}
            write_volume_with_sidecar(out / "inferred" / f"{sid}_{mode}.f32",
                                      result.volume.values, sidecar)
        if config.baseline.enabled:
            kvol, kmeta = kriging_predict(obs, dataset.spec,
                                          n_bins=config.baseline.n_bins,
                                          max_samples=config.baseline.max_samples)
            sidecar = {"sample_id": sid, "mode": "kriging",
                       "spec": dataset.spec.to_dict(), "norm": dataset.norm.to_dict(),
                       "sample_rate": inf.sample_rate, "version": version_string(),
                       "config_hash": config.stage_hash("infer"), "seed": inf.seed,
                       **kmeta}
            write_volume_with_sidecar(out / "inferred" / f"{sid}_kriging.f32",
                                      kvol.values, sidecar)


def _stage_eval(config: RunConfig, out: Path) -> None:
    dataset = FarmDataset(out / "dataset")
    reports_dir = out / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    r = dataset.value_range
    for blob in sorted((out / "inferred").glob("*.f32")):
        sidecar = json.loads(Path(f"{blob}.json").read_text())
        sid = sidecar["sample_id"]
        truth = dataset.load_volume(sid)
        pred = load_volume_f32(blob, dataset.spec.shape)
        report = evaluate(pred, truth.values, r)
        payload = {"sample_id": sid, "mode": sidecar["mode"], "r": r,
                   "metrics": report.to_dict(), "version": version_string(),
                   "config_hash": config.stage_hash("eval"), "seed": config.seed}
        (reports_dir / f"{sid}_{sidecar['mode']}.json").write_text(
            json.dumps(payload, indent=1))


def _stage_report(config: RunConfig, out: Path) -> None:
    generate_report(out / "reports", out / "report")


_STAGE_FNS = {
    "gen": _stage_gen,
    "pretrain": _stage_pretrain,
    "finetune": _stage_finetune,
    "infer": _stage_infer,
    "eval": _stage_eval,
    "report": _stage_report,
}

_STAGE_LOGS = {
    "pretrain": "logs/pretrain.jsonl",
    "finetune": "logs/finetune.jsonl",
}


def run_pipeline(config: RunConfig, out_dir: str | Path, force: bool = False,
                 echo=print) -> dict:
    """Execute the configured stages in order; returns per-stage status."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "logs").mkdir(exist_ok=True)
    (out / "run_config.json").write_text(json.dumps(config.to_dict(), indent=1))
    status = {}
    for stage in [s for s in ("gen", "pretrain", "finetune", "infer", "eval", "report")
                  if s in config.stages]:
        shash = config.stage_hash(stage)
        if _should_skip(out, stage, shash, force):
            echo(f"[farm] stage {stage}: skipped (up to date)")
            status[stage] = "skipped"
            continue
        echo(f"[farm] stage {stage}: running")
        try:
            _STAGE_FNS[stage](config, out)
        except Exception as e:
            raise StageError(stage, e, log_hint=str(out / _STAGE_LOGS.get(stage, "logs"))) from e
        _mark_done(out, stage, shash, {"config_hash": config.hash, "seed": config.seed})
        status[stage] = "done"
    return status
