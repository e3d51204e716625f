"""Evaluation-space image quality metrics on 8-bit images.

MSE and PSNR are computed on the 0-255 scale; SSIM reuses the loss
module's Gaussian-window machinery with dynamic range 255. Aggregation is
per brightness level plus an overall mean.
"""

import csv
import json
from dataclasses import dataclass, field

import numpy as np
import torch

from . import imgcore
from .losses import SsimConfig, ssim_map

PSNR_SENTINEL_DB = 99.0


def mse(a, b):
    """Mean squared pixel difference of two uint8 images."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    return float(np.mean(diff * diff))


def psnr(mse_value):
    """10*log10(255^2 / mse); a perfect match maps to the 99 dB sentinel."""
    if mse_value < 0:
        raise ValueError("mse must be >= 0")
    if mse_value == 0:
        return PSNR_SENTINEL_DB
    return float(10.0 * np.log10(255.0**2 / mse_value))


def ssim_metric(a, b):
    """Mean structural similarity of two uint8 images, dynamic range 255."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    cfg = SsimConfig(dynamic_range=255.0)
    ta = torch.from_numpy(a.data.astype(np.float64))
    tb = torch.from_numpy(b.data.astype(np.float64))
    return float(ssim_map(ta, tb, cfg).mean().item())


@dataclass
class ImageRow:
    id: str
    level: float
    mse: float
    psnr_db: float
    ssim: float


@dataclass
class MetricReport:
    per_image: list = field(default_factory=list)
    per_level: dict = field(default_factory=dict)
    overall: dict = field(default_factory=dict)

    @classmethod
    def from_rows(cls, rows):
        report = cls(per_image=sorted(rows, key=lambda r: r.id))
        by_level = {}
        for row in report.per_image:
            by_level.setdefault(row.level, []).append(row)
        for level, group in sorted(by_level.items()):
            report.per_level[level] = _means(group)
        report.overall = _means(report.per_image)
        return report

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "level", "mse", "psnr_db", "ssim"])
            for row in self.per_image:
                writer.writerow([row.id, row.level, f"{row.mse:.6f}",
                                 f"{row.psnr_db:.6f}", f"{row.ssim:.6f}"])

    def write_json(self, path):
        payload = {
            "per_level": {f"{lv:g}": agg for lv, agg in self.per_level.items()},
            "overall": self.overall,
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)


def _means(rows):
    return {
        "mse": float(np.mean([r.mse for r in rows])),
        "psnr_db": float(np.mean([r.psnr_db for r in rows])),
        "ssim": float(np.mean([r.ssim for r in rows])),
    }


def identity_enhancer(img):
    """Baseline that returns its input unchanged."""
    return img


def evaluate(enhance_fn, manifest, split):
    """Run an enhancer over a manifest split and report MSE/PSNR/SSIM.

    enhance_fn maps a storage01 ImageTensor to a storage01 ImageTensor;
    metrics compare its 8-bit quantization against the quantized reference.
    """
    records = manifest.split_records(split)
    if not records:
        raise ValueError(f"empty split {split!r}")
    rows = []
    for rec in records:
        low = imgcore.load_png(manifest.path(rec.low_path))
        ref = imgcore.load_png(manifest.path(rec.ref_path))
        out = enhance_fn(low)
        if out.shape != ref.shape:
            raise ValueError(
                f"enhancer output shape {out.shape} != reference {ref.shape}")
        a = imgcore.quantize(out)
        b = imgcore.quantize(ref)
        m = mse(a, b)
        rows.append(ImageRow(id=rec.id, level=rec.level, mse=m,
                             psnr_db=psnr(m), ssim=ssim_metric(a, b)))
    return MetricReport.from_rows(rows)
