"""CSV/SVG emission for sweep curves and the experiment results table."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def write_sweep_outputs(rows: list[dict], out_dir, name: str = "sweep"
                        ) -> tuple[Path, Path]:
    """Paired pretrained-vs-scratch curve as CSV and SVG."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{name}.csv"
    svg_path = out / f"{name}.svg"

    fields = ["fraction", "n_examples", "pretrained_top1_mean", "pretrained_top1_std",
              "scratch_top1_mean", "scratch_top1_std", "gap"]
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in fields})

    xs = [r["fraction"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(xs, [r["pretrained_top1_mean"] for r in rows],
                yerr=[r["pretrained_top1_std"] for r in rows],
                marker="o", label="pretrained + fine-tuned")
    ax.errorbar(xs, [r["scratch_top1_mean"] for r in rows],
                yerr=[r["scratch_top1_std"] for r in rows],
                marker="s", label="from scratch")
    ax.set_xscale("log")
    ax.set_xlabel("fine-tuning set fraction")
    ax.set_ylabel("top-1 accuracy")
    ax.set_title(name)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(svg_path)
    plt.close(fig)
    return csv_path, svg_path


def write_results_table(results_jsonl, out_dir) -> Path:
    """Flatten runs/results.jsonl into a single CSV for inspection."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    with open(results_jsonl, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                rows.append(json.loads(line))
    csv_path = out / "results.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["config_id", "seed", "phases", "n", "top1", "top3",
                         "mrr3", "unscorable"])
        for r in rows:
            phases = " -> ".join(p["role"] for p in r["phases"])
            writer.writerow([r["config_id"], r["seed"], phases, r["n"],
                             r["top1"], r["top3"], r["mrr3"], r["unscorable"]])
    return csv_path
