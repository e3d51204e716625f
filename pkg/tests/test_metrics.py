import json

import numpy as np
import pytest

from retinexgan import imgcore, metrics
from retinexgan.imgcore import ImageTensor, ImageU8, Space


def u8(value, shape=(3, 16, 16)):
    return ImageU8(np.full(shape, value, dtype=np.uint8))


class TestMse:
    def test_equal(self):
        a = ImageU8(np.random.default_rng(0).integers(0, 256, (3, 8, 8),
                                                      dtype=np.uint8))
        assert metrics.mse(a, a) == 0.0

    def test_full_range(self):
        assert metrics.mse(u8(0), u8(255)) == 65025.0

    def test_uniform_diff(self):
        assert metrics.mse(u8(10), u8(13)) == 9.0

    def test_symmetric(self):
        rng = np.random.default_rng(1)
        a = ImageU8(rng.integers(0, 256, (3, 8, 8), dtype=np.uint8))
        b = ImageU8(rng.integers(0, 256, (3, 8, 8), dtype=np.uint8))
        assert metrics.mse(a, b) == metrics.mse(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            metrics.mse(u8(0), u8(0, (3, 8, 8)))


class TestPsnr:
    def test_zero_db(self):
        assert metrics.psnr(65025.0) == pytest.approx(0.0, abs=1e-12)

    def test_twenty_db(self):
        assert metrics.psnr(650.25) == pytest.approx(20.0, abs=1e-12)

    def test_sentinel(self):
        assert metrics.psnr(0.0) == 99.0

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            metrics.psnr(-1.0)

    def test_strictly_decreasing(self):
        vals = [metrics.psnr(m) for m in (1.0, 10.0, 100.0, 1000.0, 65025.0)]
        assert all(b < a for a, b in zip(vals, vals[1:]))


class TestSsimMetric:
    def test_equal_is_one(self):
        a = ImageU8(np.random.default_rng(2).integers(0, 256, (3, 16, 16),
                                                      dtype=np.uint8))
        assert metrics.ssim_metric(a, a) == pytest.approx(1.0, abs=1e-9)

    def test_constant_closed_form(self):
        c1 = (0.01 * 255) ** 2
        expected = c1 / (255.0**2 + c1)
        got = metrics.ssim_metric(u8(0), u8(255))
        assert got == pytest.approx(expected, abs=1e-9)
        assert got == pytest.approx(1.0e-4, rel=2e-3)

    def test_symmetric(self):
        rng = np.random.default_rng(3)
        a = ImageU8(rng.integers(0, 256, (1, 16, 16), dtype=np.uint8))
        b = ImageU8(rng.integers(0, 256, (1, 16, 16), dtype=np.uint8))
        assert metrics.ssim_metric(a, b) == pytest.approx(
            metrics.ssim_metric(b, a), abs=1e-12)

    def test_bounded(self):
        rng = np.random.default_rng(4)
        for _ in range(3):
            a = ImageU8(rng.integers(0, 256, (1, 16, 16), dtype=np.uint8))
            b = ImageU8(rng.integers(0, 256, (1, 16, 16), dtype=np.uint8))
            assert -1.0 <= metrics.ssim_metric(a, b) <= 1.0


class TestEvaluate:
    def test_identity_on_level_one(self, toy_manifest):
        noiseless = [r for r in toy_manifest.records if r.level == 1.0]
        # level-1.0 synthesis still carries noise in the fixture, so build
        # the check directly: identity on identical files gives mse 0
        report = metrics.evaluate(metrics.identity_enhancer, toy_manifest, "test")
        assert len(report.per_image) == len(toy_manifest.split_records("test"))

    def test_identity_perfect_when_low_equals_ref(self, tmp_path, source_dir):
        from retinexgan import dataset
        man = dataset.build_dataset(
            source_dir, str(tmp_path / "ds"), levels=[1.0],
            noise=dataset.NoiseConfig(read_sigma=0, shot_factor=0),
            split_ratio=0.5, height=32, width=32)
        report = metrics.evaluate(metrics.identity_enhancer, man, "test")
        for row in report.per_image:
            assert row.mse == 0.0
            assert row.psnr_db == 99.0
            assert row.ssim == pytest.approx(1.0, abs=1e-9)

    def test_merge_equals_oneshot(self, toy_manifest):
        report = metrics.evaluate(metrics.identity_enhancer, toy_manifest, "test")
        ids = [r.id for r in report.per_image]
        # evaluating twice yields identical rows (pure computation)
        again = metrics.evaluate(metrics.identity_enhancer, toy_manifest, "test")
        assert ids == [r.id for r in again.per_image]
        for r1, r2 in zip(report.per_image, again.per_image):
            assert (r1.mse, r1.psnr_db, r1.ssim) == (r2.mse, r2.psnr_db, r2.ssim)

    def test_known_constant_difference(self, tmp_path):
        # constant 0.5 reference, noiseless level 0.5 -> quantized 128 vs 64
        from retinexgan import dataset
        src = tmp_path / "src"
        src.mkdir()
        img = ImageTensor(np.full((3, 32, 32), 0.5, dtype=np.float32),
                          Space.STORAGE01)
        imgcore.save_png(img, str(src / "flat.png"))
        man = dataset.build_dataset(
            str(src), str(tmp_path / "ds"), levels=[0.5],
            noise=dataset.NoiseConfig(read_sigma=0, shot_factor=0),
            split_ratio=1.0, height=32, width=32)
        report = metrics.evaluate(metrics.identity_enhancer, man, "train")
        assert report.per_image[0].mse == pytest.approx(64.0**2, abs=1e-9)

    def test_per_level_means(self, toy_manifest):
        report = metrics.evaluate(metrics.identity_enhancer, toy_manifest, "train")
        for level, agg in report.per_level.items():
            rows = [r for r in report.per_image if r.level == level]
            assert agg["mse"] == pytest.approx(np.mean([r.mse for r in rows]))

    def test_empty_split_rejected(self, tmp_path, source_dir):
        from retinexgan import dataset
        man = dataset.build_dataset(
            source_dir, str(tmp_path / "ds"), levels=[0.5],
            split_ratio=1.0, height=16, width=16)
        with pytest.raises(ValueError):
            metrics.evaluate(metrics.identity_enhancer, man, "test")

    def test_serialization(self, toy_manifest, tmp_path):
        report = metrics.evaluate(metrics.identity_enhancer, toy_manifest, "test")
        csv_path = tmp_path / "per_image.csv"
        json_path = tmp_path / "agg.json"
        report.write_csv(str(csv_path))
        report.write_json(str(json_path))
        assert csv_path.read_text().startswith("id,level,mse,psnr_db,ssim")
        payload = json.loads(json_path.read_text())
        assert set(payload) == {"per_level", "overall"}
