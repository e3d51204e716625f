import numpy as np
import pytest
import torch

from retinexgan import dataset, imgcore
from retinexgan.imgcore import ImageTensor, Space


def smooth_texture(seed, height, width, low=0.15, high=0.85):
    """Smooth random RGB pattern so pairs have structure at several scales."""
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, height), np.linspace(0, 1, width),
                         indexing="ij")
    img = np.zeros((3, height, width))
    for c in range(3):
        for _ in range(4):
            fy, fx = rng.uniform(1, 6, size=2)
            py, px = rng.uniform(0, 2 * np.pi, size=2)
            img[c] += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * (fy * yy + py)) \
                * np.sin(2 * np.pi * (fx * xx + px))
    img -= img.min()
    img /= img.max()
    return ImageTensor((low + (high - low) * img).astype(np.float32),
                       Space.STORAGE01)


@pytest.fixture(scope="session")
def source_dir(tmp_path_factory):
    """Eight smooth-texture reference PNGs."""
    d = tmp_path_factory.mktemp("sources")
    for i in range(8):
        imgcore.save_png(smooth_texture(100 + i, 64, 96), str(d / f"img{i:02d}.png"))
    return str(d)


@pytest.fixture(scope="session")
def toy_manifest(tmp_path_factory, source_dir):
    """Small 96x64 dataset at levels 0.1/0.5/1.0, deterministic noise."""
    out = tmp_path_factory.mktemp("toyset")
    return dataset.build_dataset(
        source_dir, str(out), levels=[0.1, 0.5, 1.0],
        noise=dataset.NoiseConfig(read_sigma=0.005, shot_factor=0.01, seed=7),
        split_ratio=0.75, height=64, width=96)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(max(1, torch.get_num_threads()))
    yield
