"""Command-line surface: gen / pretrain / finetune / infer / eval / baseline /
report / run.

All commands read the same run-config JSON file and use the section they
need; flags override config values. Exit codes: 0 success, 2 config error,
3 stage failure. FARM_DATA_DIR supplies the default dataset root.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import torch

from . import version_string
from .checkpoint import load_model, save_model
from .config import ConfigError, RunConfig
from .conditioning import build_condition_grids
from .core import NormRange, VoxelGridSpec, load_volume_f32, patch_plan
from .dataset import FarmDataset, build_dataset, sample_observations
from .inference import MODES, InferenceRequest, estimate_arm
from .kriging import kriging_predict
from .metrics import evaluate
from .model import FarmModel
from .pipeline import StageError, run_pipeline, write_volume_with_sidecar
from .report import generate_report
from .training import finetune, pretrain, total_steps_for

MODE_ALIASES = {"free": "condition_free", "cond": "condition_only", "hybrid": "hybrid"}


def _data_dir(args) -> Path:
    data = args.data or os.environ.get("FARM_DATA_DIR")
    if not data:
        raise ConfigError("no dataset directory: pass --data or set FARM_DATA_DIR")
    return Path(data)


def _load_config(path: str) -> RunConfig:
    return RunConfig.load(path)


def cmd_gen(args) -> int:
    config = _load_config(args.config)
    ds_cfg = config.dataset
    if args.seed is not None:
        ds_cfg = replace(ds_cfg, seed=args.seed)
    manifest = build_dataset(ds_cfg, args.out)
    print(f"[farm] dataset {manifest['name']}: {len(manifest['samples'])} samples "
          f"-> {args.out} (content {manifest['content_hash'][:12]})")
    return 0


def cmd_pretrain(args) -> int:
    config = _load_config(args.config)
    tc = config.pretrain
    if args.max_steps is not None:
        tc = replace(tc, max_steps=args.max_steps)
    if args.seed is not None:
        tc = replace(tc, seed=args.seed)
    dataset = FarmDataset(_data_dir(args))
    torch.manual_seed(config.seed if args.seed is None else args.seed)
    model = FarmModel(config.model)
    losses = pretrain(model, dataset, tc, log_path=args.log)
    save_model(args.out, model, stage="pretrain",
               step=total_steps_for(tc, len(dataset.sample_ids("train")))[0],
               dataset_hash=dataset.manifest["content_hash"], norm=dataset.norm,
               seed=tc.seed, extra={"train_config": tc.to_dict()})
    print(f"[farm] pretrain done: {len(losses)} steps, final loss {losses[-1]:.4g} "
          f"-> {args.out}")
    return 0


def cmd_finetune(args) -> int:
    config = _load_config(args.config)
    tc = config.finetune
    if args.max_steps is not None:
        tc = replace(tc, max_steps=args.max_steps)
    if args.seed is not None:
        tc = replace(tc, seed=args.seed)
    dataset = FarmDataset(_data_dir(args))
    model, _ = load_model(args.ckpt, dtype=tc.torch_dtype)
    losses = finetune(model, dataset, tc, log_path=args.log)
    save_model(args.out, model, stage="finetune",
               step=total_steps_for(tc, len(dataset.sample_ids("train")))[0],
               dataset_hash=dataset.manifest["content_hash"], norm=dataset.norm,
               seed=tc.seed, extra={"train_config": tc.to_dict()})
    print(f"[farm] finetune done: {len(losses)} steps, final loss {losses[-1]:.4g} "
          f"-> {args.out}")
    return 0


def cmd_infer(args) -> int:
    mode = MODE_ALIASES[args.mode]
    dataset = FarmDataset(_data_dir(args))
    model, manifest = load_model(args.ckpt)
    plan = patch_plan(dataset.spec, tuple(manifest["model"]["patch"]))
    sid = args.sample or (dataset.sample_ids("test") or dataset.sample_ids(None))[0]
    truth = dataset.load_volume(sid)
    obs = None
    if mode != "condition_only":
        obs = sample_observations(truth, args.sample_rate, seed=args.seed, plan=plan,
                                  granularity=args.granularity)
    grids = None
    if mode != "condition_free":
        grids = build_condition_grids(dataset.building_for(sid), dataset.bs(sid),
                                      dataset.norm, dataset.propagation())
    request = InferenceRequest(mode=mode, steps=args.steps, seed=args.seed,
                               observations=obs, grids=grids)
    result = estimate_arm(model, plan, dataset.norm, request)
    out = Path(args.out)
    sidecar = {"sample_id": sid, "mode": mode, "spec": dataset.spec.to_dict(),
               "norm": dataset.norm.to_dict(), "sample_rate": args.sample_rate,
               "version": version_string(), "seed": args.seed, **result.metadata}
    write_volume_with_sidecar(out, result.volume.values, sidecar)
    print(f"[farm] inferred {sid} ({mode}, K={args.steps}) -> {out}")
    return 0


def _read_eval_volume(path: str, fallback_sidecar: dict | None):
    sidecar_path = Path(f"{path}.json")
    sidecar = json.loads(sidecar_path.read_text()) if sidecar_path.exists() else fallback_sidecar
    if sidecar is None:
        raise ConfigError(f"{path}: no sidecar JSON and no shape information available")
    spec = VoxelGridSpec.from_dict(sidecar["spec"])
    return load_volume_f32(path, spec.shape), sidecar


def cmd_eval(args) -> int:
    pred, pred_sidecar = _read_eval_volume(args.pred, None)
    truth, _ = _read_eval_volume(args.truth, pred_sidecar)
    r = args.range
    if r is None:
        norm = NormRange.from_dict(pred_sidecar["norm"])
        r = norm.span
    report = evaluate(pred, truth, r)
    payload = {"sample_id": pred_sidecar.get("sample_id", "unknown"),
               "mode": pred_sidecar.get("mode", "unknown"), "r": r,
               "metrics": report.to_dict(), "version": version_string()}
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(json.dumps(payload, indent=1))
    print(f"[farm] eval: NMSE {report.nmse_db:.2f} dB, RMSE {report.rmse:.3f}, "
          f"PSNR {report.psnr_db:.2f} dB, SSIM {report.ssim:.4f} -> {args.out}")
    return 0


def cmd_baseline(args) -> int:
    if args.method != "kriging":
        raise ConfigError(f"unknown baseline {args.method!r}")
    dataset = FarmDataset(_data_dir(args))
    plan = patch_plan(dataset.spec, tuple(args.patch))
    out = Path(args.out)
    ids = (dataset.sample_ids(args.split) or dataset.sample_ids(None))[: args.limit]
    for sid in ids:
        truth = dataset.load_volume(sid)
        obs = sample_observations(truth, args.sample_rate, seed=args.seed, plan=plan,
                                  granularity=args.granularity)
        vol, meta = kriging_predict(obs, dataset.spec)
        sidecar = {"sample_id": sid, "mode": "kriging", "spec": dataset.spec.to_dict(),
                   "norm": dataset.norm.to_dict(), "sample_rate": args.sample_rate,
                   "version": version_string(), "seed": args.seed, **meta}
        write_volume_with_sidecar(out / f"{sid}_kriging.f32", vol.values, sidecar)
        print(f"[farm] kriging {sid} ({meta['method']}) -> {out / f'{sid}_kriging.f32'}")
    return 0


def cmd_report(args) -> int:
    result = generate_report(args.runs, args.plots)
    print(f"[farm] report over {result['n_reports']} evaluations -> "
          f"{result['summary_csv']}, {result['per_height_csv']}, "
          f"{len(result['plots'])} plots")
    return 0


def cmd_run(args) -> int:
    config = _load_config(args.config)
    status = run_pipeline(config, args.out, force=args.force)
    print(f"[farm] pipeline complete: "
          + ", ".join(f"{k}={v}" for k, v in status.items()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="farm",
                                     description="Unified aerial radio map estimation")
    parser.add_argument("--version", action="version", version=version_string())
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("pretrain", help="self-supervised pretraining")
    p.add_argument("--config", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("finetune", help="decoder-only generative fine-tuning")
    p.add_argument("--config", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("infer", help="estimate one radio map")
    p.add_argument("--mode", choices=sorted(MODE_ALIASES), required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--sample", default=None)
    p.add_argument("--sample-rate", type=float, default=0.05)
    p.add_argument("--granularity", choices=("patch", "voxel"), default="patch")
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="compare a prediction against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--range", type=float, default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("baseline", help="classical baselines")
    p.add_argument("method", choices=("kriging",))
    p.add_argument("--data", default=None)
    p.add_argument("--sample-rate", type=float, default=0.05)
    p.add_argument("--granularity", choices=("patch", "voxel"), default="patch")
    p.add_argument("--patch", type=int, nargs=3, default=(32, 32, 2))
    p.add_argument("--split", default="test")
    p.add_argument("--limit", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("report", help="aggregate evaluation reports")
    p.add_argument("--runs", required=True)
    p.add_argument("--plots", required=True)
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("run", help="run the configured pipeline end to end")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_run)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"[farm] config error: {e}", file=sys.stderr)
        return 2
    except StageError as e:
        print(f"[farm] {e}", file=sys.stderr)
        return 3
    except Exception as e:
        print(f"[farm] {args.command} failed: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
