"""Render figures and delimited tables from run/sweep artifact directories.

Reads the JSON artifacts a run leaves behind and writes PNG figures next to
the CSV output: per-method accuracy bars, stage-1 training curves, and sweep
trend lines. Everything draws through the Agg backend so the command works
headless.
"""

from __future__ import annotations

import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .errors import ConfigError

ACC_METRICS = ("id_acc", "ood_acc", "extended_acc")
SCORE_METRICS = ("da_score", "cc_score")


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def render_run_report(run_dir, out_dir=None, dpi=150):
    """Figures + CSV for a run_experiment output directory.

    Returns the list of files written.
    """
    out_dir = out_dir or run_dir
    os.makedirs(out_dir, exist_ok=True)
    agg_path = os.path.join(run_dir, "aggregate.json")
    if not os.path.exists(agg_path):
        raise ConfigError(f"no aggregate.json under {run_dir}; run `lads run` first")
    aggregate = _load_json(agg_path)
    written = []

    written.append(_fig_method_bars(aggregate, os.path.join(out_dir, "accuracy_by_method.png"), dpi))
    scores_png = _fig_quality_scores(aggregate, os.path.join(out_dir, "quality_scores.png"), dpi)
    if scores_png:
        written.append(scores_png)
    curves = _fig_training_curves(run_dir, os.path.join(out_dir, "training_curves.png"), dpi)
    if curves:
        written.append(curves)

    csv_path = os.path.join(out_dir, "metrics.csv")
    from .experiment import write_aggregate_csv

    write_aggregate_csv(csv_path, aggregate)
    written.append(csv_path)
    return written


def _fig_method_bars(aggregate, path, dpi):
    methods = sorted(aggregate)
    x = range(len(methods))
    width = 0.27
    fig, ax = plt.subplots(figsize=(1.8 + 1.4 * len(methods), 4.0))
    for i, metric in enumerate(ACC_METRICS):
        means = [aggregate[m].get(f"{metric}_mean", 0.0) for m in methods]
        stds = [aggregate[m].get(f"{metric}_std", 0.0) for m in methods]
        ax.bar([xi + (i - 1) * width for xi in x], means, width, yerr=stds,
               capsize=3, label=metric.replace("_acc", "").upper())
    ax.set_xticks(list(x))
    ax.set_xticklabels(methods, rotation=20, ha="right")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    ax.set_title("Accuracy by method (mean over seeds)")
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
    return path


def _fig_quality_scores(aggregate, path, dpi):
    methods = [m for m in sorted(aggregate) if f"{SCORE_METRICS[0]}_mean" in aggregate[m]]
    if not methods:
        return None
    fig, ax = plt.subplots(figsize=(1.8 + 1.4 * len(methods), 3.6))
    width = 0.35
    for i, metric in enumerate(SCORE_METRICS):
        means = [aggregate[m].get(f"{metric}_mean", 0.0) for m in methods]
        stds = [aggregate[m].get(f"{metric}_std", 0.0) for m in methods]
        ax.bar([j + (i - 0.5) * width for j in range(len(methods))], means, width,
               yerr=stds, capsize=3, label=metric)
    ax.set_xticks(range(len(methods)))
    ax.set_xticklabels(methods)
    ax.set_ylabel("score")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    ax.set_title("Nearest-neighbor augmentation quality")
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
    return path


def _fig_training_curves(run_dir, path, dpi):
    logs = []
    for entry in sorted(os.listdir(run_dir)):
        seed_dir = os.path.join(run_dir, entry)
        if not (entry.startswith("seed_") and os.path.isdir(seed_dir)):
            continue
        for name in sorted(os.listdir(seed_dir)):
            if name.startswith("augnet_") and name.endswith(".log.json"):
                logs.append((entry, name[: -len(".log.json")], _load_json(os.path.join(seed_dir, name))))
    if not logs:
        return None
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for seed_name, net_name, log in logs:
        epochs = [h["epoch"] for h in log["history"]]
        ax.plot(epochs, [h["train_loss"] for h in log["history"]],
                alpha=0.7, label=f"{seed_name}/{net_name} train")
        ax.plot(epochs, [h["val_loss"] for h in log["history"]],
                alpha=0.7, linestyle="--", label=f"{seed_name}/{net_name} val")
    ax.set_xlabel("epoch")
    ax.set_ylabel("combined loss")
    ax.set_title("Augmentation-network training")
    if len(logs) <= 4:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=dpi)
    plt.close(fig)
    return path


def render_sweep_report(sweep_dir, out_dir=None, dpi=150):
    """Trend figure + CSV copy for a sweep output directory."""
    out_dir = out_dir or sweep_dir
    os.makedirs(out_dir, exist_ok=True)
    sweep_path = os.path.join(sweep_dir, "sweep.json")
    if not os.path.exists(sweep_path):
        raise ConfigError(f"no sweep.json under {sweep_dir}; run `lads sweep` first")
    data = _load_json(sweep_path)
    table = data["table"]
    names = data["grid_fields"]
    written = []

    # one trend panel per swept field, each metric over the field's values
    fig, axes = plt.subplots(1, len(names), figsize=(5.2 * len(names), 4.0), squeeze=False)
    for ax, name in zip(axes[0], names):
        xs = [entry[name] for entry in table]
        order = sorted(range(len(xs)), key=lambda i: xs[i])
        for metric in ACC_METRICS + SCORE_METRICS:
            key = f"{metric}_mean"
            if any(key in entry for entry in table):
                ax.plot([xs[i] for i in order],
                        [table[i].get(key, float("nan")) for i in order],
                        marker="o", label=metric)
        ax.set_xlabel(name)
        ax.set_ylabel("metric")
        ax.set_title(f"sweep over {name}")
        ax.legend(fontsize=7)
    fig.tight_layout()
    png = os.path.join(out_dir, "sweep_trends.png")
    fig.savefig(png, dpi=dpi)
    plt.close(fig)
    written.append(png)

    src_csv = os.path.join(sweep_dir, "sweep.csv")
    if os.path.exists(src_csv) and out_dir != sweep_dir:
        import shutil

        dst = os.path.join(out_dir, "sweep.csv")
        shutil.copyfile(src_csv, dst)
        written.append(dst)
    else:
        written.append(src_csv)
    return written
