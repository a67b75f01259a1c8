"""Aggregation of per-sample evaluation reports into summary tables and
per-height metric curves (CSV plus static PNG plots)."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

METRIC_KEYS = ("nmse_db", "rmse", "psnr_db", "ssim")


def collect_reports(runs_dir: str | Path) -> list[dict]:
    """Load every evaluation report JSON under runs_dir (recursively)."""
    reports = []
    for path in sorted(Path(runs_dir).rglob("*.json")):
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError:
            continue
        if isinstance(data, dict) and "metrics" in data and "mode" in data:
            data["_path"] = str(path)
            reports.append(data)
    return reports


def summarize(reports: list[dict]) -> dict[str, dict[str, float]]:
    """Per-mode mean of each metric."""
    groups: dict[str, list[dict]] = defaultdict(list)
    for rep in reports:
        groups[rep["mode"]].append(rep["metrics"])
    out = {}
    for mode, metrics in sorted(groups.items()):
        out[mode] = {k: sum(m[k] for m in metrics) / len(metrics) for k in METRIC_KEYS}
        out[mode]["n_samples"] = len(metrics)
    return out


def write_summary_csv(reports: list[dict], path: str | Path) -> None:
    summary = summarize(reports)
    with Path(path).open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["mode", "n_samples", *METRIC_KEYS])
        for mode, row in summary.items():
            writer.writerow([mode, row["n_samples"],
                             *(f"{row[k]:.6g}" for k in METRIC_KEYS)])


def per_height_table(reports: list[dict]) -> list[dict]:
    """Mean per-height metrics per mode, one row per (mode, height)."""
    acc: dict[tuple[str, int], list[dict]] = defaultdict(list)
    for rep in reports:
        for row in rep["metrics"]["per_height"]:
            acc[(rep["mode"], row["height"])].append(row)
    table = []
    for (mode, height), rows in sorted(acc.items()):
        entry = {"mode": mode, "height": height, "n_samples": len(rows)}
        for k in METRIC_KEYS:
            entry[k] = sum(r[k] for r in rows) / len(rows)
        table.append(entry)
    return table


def write_per_height_csv(reports: list[dict], path: str | Path) -> None:
    table = per_height_table(reports)
    with Path(path).open("w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["mode", "height", "n_samples", *METRIC_KEYS])
        for row in table:
            writer.writerow([row["mode"], row["height"], row["n_samples"],
                             *(f"{row[k]:.6g}" for k in METRIC_KEYS)])


def plot_per_height(reports: list[dict], plots_dir: str | Path) -> list[Path]:
    """One PNG per metric: metric vs altitude level, one curve per mode."""
    plots_dir = Path(plots_dir)
    plots_dir.mkdir(parents=True, exist_ok=True)
    table = per_height_table(reports)
    modes = sorted({row["mode"] for row in table})
    paths = []
    for key in METRIC_KEYS:
        fig, ax = plt.subplots(figsize=(6, 4))
        for mode in modes:
            rows = [r for r in table if r["mode"] == mode]
            ax.plot([r["height"] for r in rows], [r[key] for r in rows],
                    marker="o", label=mode)
        ax.set_xlabel("altitude level")
        ax.set_ylabel(key)
        ax.legend()
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        out = plots_dir / f"per_height_{key}.png"
        fig.savefig(out, dpi=120)
        plt.close(fig)
        paths.append(out)
    return paths


def generate_report(runs_dir: str | Path, out_dir: str | Path) -> dict:
    """Aggregate all reports; returns paths of the emitted artifacts."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = collect_reports(runs_dir)
    if not reports:
        raise ValueError(f"no evaluation reports found under {runs_dir}")
    summary_csv = out_dir / "summary.csv"
    heights_csv = out_dir / "per_height.csv"
    write_summary_csv(reports, summary_csv)
    write_per_height_csv(reports, heights_csv)
    plots = plot_per_height(reports, out_dir)
    return {"summary_csv": str(summary_csv), "per_height_csv": str(heights_csv),
            "plots": [str(p) for p in plots], "n_reports": len(reports)}
