"""Paired low/normal-light dataset synthesis, manifests and batch iteration.

Low-light inputs are produced from reference PNGs by a linear brightness
gain plus heteroscedastic Gaussian noise, standing in for the raw-sensor
conversion of the original corpus. Every artifact is reproducible from
(source images, config, seed).
"""

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from . import imgcore
from .imgcore import ImageTensor, Space

CANONICAL_LEVELS = (0.1, 0.3, 0.5, 0.7, 0.9, 1.0)
TARGET_HEIGHT = 256
TARGET_WIDTH = 384
# train fraction mirroring the 1550/217 pair proportion of the source corpus
DEFAULT_SPLIT_RATIO = 1550.0 / 1767.0


class ManifestError(Exception):
    """Manifest file is malformed or references missing data."""


def validate_level(level):
    if not 0.0 < level <= 1.0:
        raise ValueError(f"brightness level {level} outside (0, 1]")
    return float(level)


@dataclass
class NoiseConfig:
    """Synthetic sensor noise: constant read floor plus signal-dependent
    shot term, deterministic per seed."""

    read_sigma: float = 0.01
    shot_factor: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.read_sigma < 0 or self.shot_factor < 0:
            raise ValueError("noise magnitudes must be >= 0")


@dataclass
class ManifestRecord:
    id: str
    low_path: str
    ref_path: str
    level: float
    split: str

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError(f"bad split {self.split!r}")
        validate_level(self.level)


@dataclass
class Manifest:
    records: list
    root: str = "."

    def split_records(self, split):
        return [r for r in self.records if r.split == split]

    def path(self, rel):
        return os.path.join(self.root, rel)


def _per_image_rng(noise, image_id, level):
    """Stable per-(seed, id, level) generator so build order and
    parallelism cannot change the noise."""
    key = f"{noise.seed}:{image_id}:{level:.6f}".encode()
    digest = hashlib.sha256(key).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def synthesize_low(ref, level, noise, rng=None):
    """Darken a storage01 reference: clip(level*ref + n, 0, 1) with
    zero-mean Gaussian n of per-pixel std sqrt(read^2 + shot^2*level*ref)."""
    level = validate_level(level)
    if ref.space is not Space.STORAGE01:
        raise imgcore.SpaceError("synthesize_low expects a storage01 reference")
    scaled = level * ref.data.astype(np.float64)
    if noise.read_sigma == 0.0 and noise.shot_factor == 0.0:
        return ImageTensor(np.clip(scaled, 0.0, 1.0), Space.STORAGE01)
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    std = np.sqrt(noise.read_sigma**2 + noise.shot_factor**2 * scaled)
    n = rng.standard_normal(size=scaled.shape) * std
    return ImageTensor(np.clip(scaled + n, 0.0, 1.0), Space.STORAGE01)


def _hash_unit(image_id):
    digest = hashlib.sha256(image_id.encode()).digest()
    return int.from_bytes(digest[:8], "little") / 2.0**64


def assign_splits(ids, split_ratio):
    """Deterministic train/test assignment with exact counts.

    Sources are ordered by a hash of their id; the floor(n*(1-ratio))
    largest hashes become test, the remainder train. All brightness levels
    of one source inherit its split.
    """
    if not 0.0 < split_ratio <= 1.0:
        raise ValueError(f"split_ratio {split_ratio} outside (0, 1]")
    ordered = sorted(ids, key=lambda i: (_hash_unit(i), i))
    n_test = math.floor(len(ids) * (1.0 - split_ratio))
    n_train = len(ids) - n_test
    return {i: ("train" if k < n_train else "test")
            for k, i in enumerate(ordered)}


def build_dataset(source_dir, out_dir, levels=CANONICAL_LEVELS,
                  noise=None, split_ratio=DEFAULT_SPLIT_RATIO,
                  height=TARGET_HEIGHT, width=TARGET_WIDTH):
    """Emit resized reference/low PNG pairs for every (source, level) and
    write a JSON Lines manifest. Returns the Manifest."""
    noise = noise or NoiseConfig()
    levels = [validate_level(lv) for lv in levels]
    sources = sorted(f for f in os.listdir(source_dir) if f.lower().endswith(".png"))
    if not sources:
        raise ValueError(f"no PNG files in {source_dir}")
    os.makedirs(os.path.join(out_dir, "low"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "ref"), exist_ok=True)

    ids = [os.path.splitext(f)[0] for f in sources]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate source image stems")
    splits = assign_splits(ids, split_ratio)

    records = []
    for fname, image_id in zip(sources, ids):
        ref = imgcore.load_png(os.path.join(source_dir, fname))
        if ref.shape[0] == 1:
            ref = ImageTensor(np.repeat(ref.data, 3, axis=0), Space.STORAGE01)
        ref = imgcore.resize(ref, height, width)
        ref_rel = os.path.join("ref", f"{image_id}.png")
        imgcore.save_png(ref, os.path.join(out_dir, ref_rel))
        # quantize once so low images derive from exactly what was stored
        ref_q = imgcore.dequantize(imgcore.quantize(ref))
        for level in levels:
            rng = _per_image_rng(noise, image_id, level)
            low = synthesize_low(ref_q, level, noise, rng=rng)
            low_rel = os.path.join("low", f"{image_id}_{level:g}.png")
            imgcore.save_png(low, os.path.join(out_dir, low_rel))
            records.append(ManifestRecord(
                id=f"{image_id}_{level:g}", low_path=low_rel, ref_path=ref_rel,
                level=level, split=splits[image_id]))

    manifest = Manifest(records=records, root=out_dir)
    write_manifest(manifest, os.path.join(out_dir, "manifest.jsonl"))
    return manifest


def write_manifest(manifest, path):
    with open(path, "w") as fh:
        for rec in manifest.records:
            fh.write(json.dumps(dataclasses.asdict(rec), sort_keys=True) + "\n")


def load_manifest(path):
    """Parse and validate a JSON Lines manifest; ids must be unique and
    every referenced PNG must exist."""
    root = os.path.dirname(os.path.abspath(path))
    records = []
    seen = set()
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rec = ManifestRecord(**obj)
            except (json.JSONDecodeError, TypeError, ValueError) as exc:
                raise ManifestError(f"{path}:{line_no}: {exc}") from exc
            if rec.id in seen:
                raise ManifestError(f"{path}:{line_no}: duplicate id {rec.id!r}")
            seen.add(rec.id)
            for rel in (rec.low_path, rec.ref_path):
                if not os.path.isfile(os.path.join(root, rel)):
                    raise ManifestError(
                        f"{path}:{line_no}: missing image {rel!r}")
            records.append(rec)
    return Manifest(records=records, root=root)


@dataclass
class Batch:
    ids: list
    levels: list
    x: torch.Tensor  # (B, 3, H, W) network space
    y: torch.Tensor  # (B, 3, H, W) network space


def _load_pair(manifest, rec):
    low = imgcore.to_network(imgcore.load_png(manifest.path(rec.low_path)))
    ref = imgcore.to_network(imgcore.load_png(manifest.path(rec.ref_path)))
    return (torch.from_numpy(low.data.astype(np.float32)),
            torch.from_numpy(ref.data.astype(np.float32)))


def iterate_batches(manifest, split, batch_size, seed, epoch):
    """Yield seeded-permutation batches of a split in network space.

    The permutation depends on (seed, epoch) only; the final short batch
    is emitted.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    records = manifest.split_records(split)
    if not records:
        raise ValueError(f"empty split {split!r}")
    order = np.random.default_rng([seed, epoch]).permutation(len(records))
    for start in range(0, len(records), batch_size):
        chunk = [records[i] for i in order[start:start + batch_size]]
        pairs = [_load_pair(manifest, rec) for rec in chunk]
        yield Batch(
            ids=[rec.id for rec in chunk],
            levels=[rec.level for rec in chunk],
            x=torch.stack([p[0] for p in pairs]),
            y=torch.stack([p[1] for p in pairs]),
        )
