"""Metrics emission: delimited files, summary documents, and figures.

Text outputs are built as complete strings before hitting disk so partial
state never leaks, and every value is formatted deterministically — the
same (config, seed) reproduces each file byte for byte. Figures render
through the Agg backend next to the delimited output.
"""

from __future__ import annotations

import os
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .config import ExperimentConfig
from .federation import RoundMetrics

METRICS_VERSION = 1
METRICS_COLUMNS = [
    "round",
    "cluster_count",
    "accuracy",
    "val_accuracy",
    "score",
    "upstream_bytes",
    "downstream_bytes",
    "cumulative_bytes",
    "mcr",
    "scs_wc_before",
    "scs_wc_after",
    "accuracy_presnap",
    "accuracy_postsnap",
]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def metrics_csv_text(metrics: Sequence[RoundMetrics], mode: str, seed: int) -> str:
    lines = [
        f"# fedcompress metrics v{METRICS_VERSION}",
        f"# mode={mode} seed={seed}",
        ",".join(METRICS_COLUMNS),
    ]
    for m in metrics:
        row = [
            _fmt(m.round), _fmt(m.cluster_count), _fmt(m.accuracy), _fmt(m.val_accuracy),
            _fmt(m.score), _fmt(m.upstream_bytes), _fmt(m.downstream_bytes),
            _fmt(m.cumulative_bytes), _fmt(m.mcr), _fmt(m.scs_wc_before), _fmt(m.scs_wc_after),
            _fmt(m.accuracy_presnap), _fmt(m.accuracy_postsnap),
        ]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def write_metrics_csv(path: str, metrics: Sequence[RoundMetrics], mode: str, seed: int) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(metrics_csv_text(metrics, mode, seed))


def summary_text(summary: Dict[str, object], cfg: ExperimentConfig) -> str:
    lines = [f"{key} = {_fmt(v) if isinstance(v, (int, float, np.integer, np.floating)) else v}"
             for key, v in summary.items()]
    lines.append("")
    lines.extend(f"config.{line}" for line in cfg.echo())
    return "\n".join(lines) + "\n"


def write_summary(path: str, summary: Dict[str, object], cfg: ExperimentConfig) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(summary_text(summary, cfg))


def comparison_rows(summaries: Sequence[Dict[str, object]]) -> List[Dict[str, object]]:
    """Per-mode accuracy and traffic relative to the fedavg run of the set."""
    by_mode = {s["mode"]: s for s in summaries}
    if "fedavg" not in by_mode:
        raise ValueError("comparison requires a fedavg run")
    base = by_mode["fedavg"]
    rows = []
    for s in summaries:
        rows.append({
            "mode": s["mode"],
            "accuracy": s["final_accuracy"],
            "delta_acc": float(s["final_accuracy"]) - float(base["final_accuracy"]),
            "ccr": float(base["cumulative_bytes"]) / float(s["cumulative_bytes"]),
            "mcr": float(s["final_mcr"]),
            "cumulative_bytes": s["cumulative_bytes"],
        })
    return rows


def average_comparison_rows(per_trial: Sequence[List[Dict[str, object]]]) -> List[Dict[str, object]]:
    """Columnwise mean of per-trial comparison rows, keyed by mode."""
    modes = [row["mode"] for row in per_trial[0]]
    out = []
    for mode in modes:
        rows = [next(r for r in trial if r["mode"] == mode) for trial in per_trial]
        out.append({
            "mode": mode,
            "accuracy": float(np.mean([r["accuracy"] for r in rows])),
            "delta_acc": float(np.mean([r["delta_acc"] for r in rows])),
            "ccr": float(np.mean([r["ccr"] for r in rows])),
            "mcr": float(np.mean([r["mcr"] for r in rows])),
            "cumulative_bytes": float(np.mean([r["cumulative_bytes"] for r in rows])),
        })
    return out


def comparison_csv_text(rows: Sequence[Dict[str, object]]) -> str:
    lines = [
        f"# fedcompress comparison v{METRICS_VERSION}",
        "mode,accuracy,delta_acc,ccr,mcr,cumulative_bytes",
    ]
    for r in rows:
        lines.append(
            f"{r['mode']},{_fmt(r['accuracy'])},{_fmt(r['delta_acc'])},"
            f"{_fmt(r['ccr'])},{_fmt(r['mcr'])},{_fmt(r['cumulative_bytes'])}"
        )
    return "\n".join(lines) + "\n"


def write_comparison_csv(path: str, rows: Sequence[Dict[str, object]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(comparison_csv_text(rows))


def format_comparison_table(rows: Sequence[Dict[str, object]]) -> str:
    header = f"{'mode':<20} {'acc':>7} {'d-acc':>7} {'CCR':>6} {'MCR':>6} {'bytes':>12}"
    body = [
        f"{r['mode']:<20} {r['accuracy']:>7.4f} {r['delta_acc']:>+7.4f} "
        f"{r['ccr']:>6.2f} {r['mcr']:>6.2f} {float(r['cumulative_bytes']):>12.0f}"
        for r in rows
    ]
    return "\n".join([header] + body)


def spearman_rho(x: Sequence[float], y: Sequence[float]) -> float:
    """Spearman rank correlation with average ranks for ties."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need two equal-length series of at least two points")

    def ranks(v: np.ndarray) -> np.ndarray:
        order = np.argsort(v, kind="stable")
        r = np.empty(v.size)
        r[order] = np.arange(1, v.size + 1)
        # average ranks over tied values
        for value in np.unique(v):
            mask = v == value
            if mask.sum() > 1:
                r[mask] = r[mask].mean()
        return r

    rx, ry = ranks(x), ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx @ rx) * (ry @ ry))
    if denom == 0.0:
        return 0.0
    return float((rx @ ry) / denom)


def plot_round_curves(path: str, metrics: Sequence[RoundMetrics], mode: str) -> None:
    """Accuracy, score, cluster count and cumulative traffic over rounds."""
    rounds = [m.round for m in metrics]
    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
    axes[0, 0].plot(rounds, [m.accuracy for m in metrics], marker="o", color="tab:blue")
    axes[0, 0].set_ylabel("test accuracy")
    axes[0, 1].plot(rounds, [m.score for m in metrics], marker="o", color="tab:green")
    axes[0, 1].set_ylabel("representation score")
    axes[1, 0].step(rounds, [m.cluster_count for m in metrics], where="post", color="tab:red")
    axes[1, 0].set_ylabel("cluster count")
    axes[1, 0].set_xlabel("round")
    axes[1, 1].plot(rounds, [m.cumulative_bytes for m in metrics], marker="o", color="tab:purple")
    axes[1, 1].set_ylabel("cumulative bytes")
    axes[1, 1].set_xlabel("round")
    fig.suptitle(f"{mode}: training progression")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_score_vs_accuracy(path: str, metrics: Sequence[RoundMetrics], mode: str) -> None:
    """Scatter of per-round mean score against mean client validation accuracy."""
    scores = [m.score for m in metrics]
    accs = [m.val_accuracy for m in metrics]
    rho = spearman_rho(scores, accs) if len(metrics) >= 2 else float("nan")
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    sc = ax.scatter(scores, accs, c=[m.round for m in metrics], cmap="viridis")
    fig.colorbar(sc, ax=ax, label="round")
    ax.set_xlabel("mean representation score")
    ax.set_ylabel("mean client validation accuracy")
    ax.set_title(f"{mode}: score vs accuracy (Spearman rho = {rho:.3f})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_comparison(path: str, rows: Sequence[Dict[str, object]]) -> None:
    """Bar chart of CCR and MCR per mode."""
    modes = [r["mode"] for r in rows]
    x = np.arange(len(modes))
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.bar(x - 0.2, [r["ccr"] for r in rows], width=0.4, label="CCR", color="tab:blue")
    ax.bar(x + 0.2, [r["mcr"] for r in rows], width=0.4, label="MCR", color="tab:orange")
    ax.axhline(1.0, color="grey", linewidth=0.8, linestyle="--")
    ax.set_xticks(x, modes, rotation=15)
    ax.set_ylabel("reduction factor vs fedavg")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def emit_run_outputs(
    out_dir: str,
    metrics: Sequence[RoundMetrics],
    summary: Dict[str, object],
    cfg: ExperimentConfig,
    mode: str,
    seed: int,
) -> None:
    """Write one run's CSV, summary and figures into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    write_metrics_csv(os.path.join(out_dir, f"metrics_{mode}.csv"), metrics, mode, seed)
    write_summary(os.path.join(out_dir, f"summary_{mode}.txt"), summary, cfg)
    plot_round_curves(os.path.join(out_dir, f"curves_{mode}.png"), metrics, mode)
    plot_score_vs_accuracy(os.path.join(out_dir, f"score_vs_accuracy_{mode}.png"), metrics, mode)
