"""Desk-scale experiment harness: the strategy/flag ablation ladder,
metric-vs-brightness-level sweeps, the decomposition collapse probe, and
report rendering."""

import copy
import csv
import dataclasses
import hashlib
import os
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import torch

from . import metrics, trainer
from .dataset import iterate_batches
from .infer import GeneratorEnhancer

ABLATION_LABELS = ("S1", "S2", "S3", "S3+SmoothL1+SSIM", "S3+SmoothL1+SSIM+GAN")


@dataclass
class AblationRow:
    label: str
    psnr_db: float
    mse: float
    ssim: float
    first_batch_hash: str = ""


@dataclass
class CurveSeries:
    metric: str
    label: str
    points: list  # [(level, value), ...]


def config_for_label(base, label):
    """Specialize a run config to one rung of the ablation ladder."""
    cfg = copy.deepcopy(base)
    if label not in ABLATION_LABELS:
        raise ValueError(f"unknown ablation label {label!r}")
    strategy = label.split("+")[0]
    cfg.model.strategy = strategy
    cfg.loss.flags.use_smooth_l1 = "SmoothL1" in label
    cfg.loss.flags.use_ssim = "SSIM" in label
    cfg.loss.flags.use_gan = "GAN" in label
    return cfg


def first_batch_hash(manifest, config):
    batch = next(iterate_batches(manifest, "train", config.optim.batch_size,
                                 config.seed, 0))
    return hashlib.sha256(batch.x.numpy().tobytes()).hexdigest()[:16]


def run_ablation(manifest, base_config, out_dir, labels=ABLATION_LABELS):
    """Train every ladder configuration with identical seed, budget and
    data order, then evaluate each on the test split."""
    if base_config.optim.max_steps <= 0:
        raise ValueError("ablation needs a positive step budget")
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for label in labels:
        cfg = config_for_label(base_config, label)
        run_dir = os.path.join(out_dir, label.replace("+", "_"))
        state = trainer.train(cfg, manifest, run_dir)
        enhancer = GeneratorEnhancer(state.generator, cfg.model.depth)
        report = metrics.evaluate(enhancer, manifest, "test")
        rows.append(AblationRow(
            label=label,
            psnr_db=report.overall["psnr_db"],
            mse=report.overall["mse"],
            ssim=report.overall["ssim"],
            first_batch_hash=first_batch_hash(manifest, cfg),
        ))
    return rows


def run_level_sweep(models, manifest, split="test"):
    """Per-brightness-level MSE/PSNR/SSIM curves for several enhancers.

    models maps label -> enhance function; the manifest must cover at
    least two levels.
    """
    levels = sorted({rec.level for rec in manifest.split_records(split)})
    if len(levels) < 2:
        raise ValueError("level sweep needs a manifest with >= 2 levels")
    series = []
    for label, enhance_fn in models.items():
        report = metrics.evaluate(enhance_fn, manifest, split)
        for metric in ("mse", "psnr_db", "ssim"):
            points = [(lv, report.per_level[lv][metric]) for lv in levels]
            series.append(CurveSeries(metric=metric, label=label, points=points))
    return series


def collapse_probe(manifest, base_config, with_reg, out_dir, probe_every=50):
    """Track the tied factor's mean magnitude under a dominant tying loss.

    Uses the analysis-consistent preset: the reflectance factor is both
    tied across branches and (when enabled) regularized. Returns
    [(step, mean_abs)] sampled every probe_every steps.
    """
    cfg = copy.deepcopy(base_config)
    cfg.model.strategy = "S3" if with_reg else "S2"
    cfg.loss.tie_factor = "R"
    cfg.loss.reg.target_factor = "R"
    os.makedirs(out_dir, exist_ok=True)
    state = trainer.init_state(cfg)
    probe_batch = next(iterate_batches(manifest, "train",
                                       cfg.optim.batch_size, cfg.seed, 0))
    trajectory = []
    epoch = 0
    while state.step < cfg.optim.max_steps:
        for batch in iterate_batches(manifest, "train", cfg.optim.batch_size,
                                     cfg.seed, epoch):
            if state.step >= cfg.optim.max_steps:
                break
            trainer.train_step(state, batch)
            if state.step % probe_every == 0:
                with torch.no_grad():
                    dec = state.generator.decomposer(probe_batch.x)
                trajectory.append((state.step, float(dec.R.abs().mean().item())))
        epoch += 1
    trainer.save_checkpoint(state, os.path.join(out_dir, "checkpoint.pt"))
    with open(os.path.join(out_dir, "trajectory.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "mean_abs_tied_factor"])
        for step, val in trajectory:
            writer.writerow([step, f"{val:.6f}"])
    return trajectory


def emit_report(rows, curves, out_dir):
    """Render the ablation table (CSV + Markdown) and one curve chart per
    metric. Outputs are byte-stable for identical inputs."""
    if not rows and not curves:
        raise ValueError("nothing to report")
    os.makedirs(out_dir, exist_ok=True)
    if rows:
        with open(os.path.join(out_dir, "ablation.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", "psnr_db", "mse", "ssim"])
            for row in rows:
                writer.writerow([row.label, f"{row.psnr_db:.4f}",
                                 f"{row.mse:.4f}", f"{row.ssim:.4f}"])
        lines = ["| config | PSNR (dB) | MSE | SSIM |",
                 "|---|---|---|---|"]
        for row in rows:
            lines.append(f"| {row.label} | {row.psnr_db:.2f} | "
                         f"{row.mse:.2f} | {row.ssim:.4f} |")
        with open(os.path.join(out_dir, "ablation.md"), "w") as fh:
            fh.write("\n".join(lines) + "\n")
    by_metric = {}
    for s in curves:
        by_metric.setdefault(s.metric, []).append(s)
    for metric, group in sorted(by_metric.items()):
        name = {"psnr_db": "psnr"}.get(metric, metric)
        with open(os.path.join(out_dir, f"curves_{name}.csv"), "w",
                  newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", "level", metric])
            for s in group:
                for level, value in s.points:
                    writer.writerow([s.label, f"{level:g}", f"{value:.6f}"])
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for s in group:
            xs = [p[0] for p in s.points]
            ys = [p[1] for p in s.points]
            ax.plot(xs, ys, marker="o", label=s.label)
        ax.set_xlabel("brightness level")
        ax.set_ylabel(metric)
        ax.legend()
        fig.tight_layout()
        fig.savefig(os.path.join(out_dir, f"curves_{name}.png"),
                    metadata={"Software": None})
        plt.close(fig)
