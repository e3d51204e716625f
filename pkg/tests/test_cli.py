import json
import os

import numpy as np
import pytest

from retinexgan import cli, config as C, imgcore

from conftest import smooth_texture

DESK_SETS = [
    "--set", "model.depth=3",
    "--set", "model.base_width=8",
    "--set", "optim.batch_size=2",
    "--set", "optim.max_steps=2",
    "--set", "optim.checkpoint_every=2",
    "--set", "loss.ssim.levels=1",
]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Shared dataset -> train pipeline exercised once for the read-only
    CLI tests below."""
    root = tmp_path_factory.mktemp("cliws")
    src = root / "src"
    src.mkdir()
    for i in range(4):
        imgcore.save_png(smooth_texture(400 + i, 32, 32),
                         str(src / f"img{i}.png"))
    ds = str(root / "ds")
    rc = cli.main(["dataset-build", "--source", str(src), "--out", ds,
                   "--set", "data.levels=[0.5]",
                   "--set", "data.height=32", "--set", "data.width=32",
                   "--set", "data.split_ratio=0.5"])
    assert rc == 0
    run = str(root / "run")
    rc = cli.main(["train", "--manifest", os.path.join(ds, "manifest.jsonl"),
                   "--out", run] + DESK_SETS)
    assert rc == 0
    return {"root": root, "src": str(src), "ds": ds, "run": run,
            "manifest": os.path.join(ds, "manifest.jsonl"),
            "checkpoint": os.path.join(run, "checkpoint.pt")}


class TestUsage:
    def test_no_command(self, capsys):
        assert cli.main([]) == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_unknown_command(self):
        assert cli.main(["frobnicate"]) == 1

    def test_missing_required_flag(self):
        assert cli.main(["train", "--out", "x"]) == 1

    def test_malformed_override(self, workspace):
        rc = cli.main(["eval", "--manifest", workspace["manifest"],
                       "--out", "/tmp/x", "--set", "optim.lr"])
        assert rc == 1

    def test_unknown_override_path(self, workspace, tmp_path):
        rc = cli.main(["eval", "--manifest", workspace["manifest"],
                       "--out", str(tmp_path), "--set", "optim.nope=1"])
        assert rc == 1


class TestDatasetBuild:
    def test_digest_echo(self, workspace, tmp_path, capsys):
        rc = cli.main(["dataset-build", "--source", workspace["src"],
                       "--out", str(tmp_path / "d"),
                       "--set", "data.levels=[0.5]",
                       "--set", "data.height=16", "--set", "data.width=16"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "config digest: " in out
        assert "wrote 4 records" in out

    def test_missing_source(self, tmp_path):
        rc = cli.main(["dataset-build", "--source", str(tmp_path / "nope"),
                       "--out", str(tmp_path / "d")])
        assert rc == 1


class TestTrainCli:
    def test_artifacts(self, workspace):
        assert os.path.exists(workspace["checkpoint"])
        assert os.path.exists(workspace["checkpoint"] + ".json")
        log = os.path.join(workspace["run"], "train_log.csv")
        lines = open(log).read().splitlines()
        assert len(lines) == 3  # header + 2 steps
        sidecar = json.load(open(workspace["checkpoint"] + ".json"))
        assert sidecar["step"] == 2

    def test_bad_manifest_path(self, tmp_path):
        rc = cli.main(["train", "--manifest", str(tmp_path / "nope.jsonl"),
                       "--out", str(tmp_path / "r")] + DESK_SETS)
        assert rc == 1


class TestInferCli:
    def test_enhance_roundtrip(self, workspace, tmp_path):
        low = imgcore.load_png(os.path.join(
            workspace["ds"], "low",
            sorted(os.listdir(os.path.join(workspace["ds"], "low")))[0]))
        rc = cli.main(["infer", "--checkpoint", workspace["checkpoint"],
                       "--input", os.path.join(
                           workspace["ds"], "low",
                           sorted(os.listdir(
                               os.path.join(workspace["ds"], "low")))[0]),
                       "--out", str(tmp_path)] + DESK_SETS)
        assert rc == 0
        enhanced = imgcore.load_png(str(tmp_path / "enhanced.png"))
        assert enhanced.data.shape == low.data.shape

    def test_illumination_output(self, workspace, tmp_path):
        low_dir = os.path.join(workspace["ds"], "low")
        rc = cli.main(["infer", "--checkpoint", workspace["checkpoint"],
                       "--input",
                       os.path.join(low_dir, sorted(os.listdir(low_dir))[0]),
                       "--out", str(tmp_path), "--output", "illumination"]
                      + DESK_SETS)
        assert rc == 0
        assert (tmp_path / "enhanced.png").exists()

    def test_digest_mismatch_is_runtime_failure(self, workspace, tmp_path):
        low_dir = os.path.join(workspace["ds"], "low")
        rc = cli.main(["infer", "--checkpoint", workspace["checkpoint"],
                       "--input",
                       os.path.join(low_dir, sorted(os.listdir(low_dir))[0]),
                       "--out", str(tmp_path)])  # default config digest
        assert rc == 2

    def test_decompose_views(self, workspace, tmp_path):
        low_dir = os.path.join(workspace["ds"], "low")
        rc = cli.main(["decompose", "--checkpoint", workspace["checkpoint"],
                       "--input",
                       os.path.join(low_dir, sorted(os.listdir(low_dir))[0]),
                       "--out", str(tmp_path)] + DESK_SETS)
        assert rc == 0
        for name in ("R.png", "I.png"):
            img = imgcore.load_png(str(tmp_path / name))
            assert img.data.shape[0] == 3


class TestEvalCli:
    def test_identity_baseline(self, workspace, tmp_path, capsys):
        rc = cli.main(["eval", "--manifest", workspace["manifest"],
                       "--split", "test", "--out", str(tmp_path)])
        assert rc == 0
        assert (tmp_path / "per_image.csv").exists()
        agg = json.load(open(tmp_path / "aggregates.json"))
        assert set(agg) == {"per_level", "overall"}
        assert "overall" in capsys.readouterr().out

    def test_checkpoint_eval(self, workspace, tmp_path):
        rc = cli.main(["eval", "--manifest", workspace["manifest"],
                       "--checkpoint", workspace["checkpoint"],
                       "--split", "train", "--out", str(tmp_path)]
                      + DESK_SETS)
        assert rc == 0
        rows = open(tmp_path / "per_image.csv").read().splitlines()
        assert len(rows) > 1


class TestAblateAndReport:
    def test_ladder_and_rerender(self, workspace, tmp_path):
        abl = tmp_path / "abl"
        rc = cli.main(["ablate", "--manifest", workspace["manifest"],
                       "--out", str(abl)] + DESK_SETS +
                      ["--set", "optim.max_steps=1",
                       "--set", "optim.checkpoint_every=1"])
        assert rc == 0
        assert (abl / "ablation.csv").exists()
        rows = open(abl / "ablation.csv").read().splitlines()
        assert len(rows) == 6  # header + five ladder rungs
        rep = tmp_path / "rep"
        rc = cli.main(["report", "--from", str(abl), "--out", str(rep)])
        assert rc == 0
        assert (rep / "ablation.md").exists()

    def test_report_empty_source(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        rc = cli.main(["report", "--from", str(empty),
                       "--out", str(tmp_path / "rep")])
        assert rc == 1


class TestConfigPlumbing:
    def test_digest_stable_and_sensitive(self):
        a, b = C.RunConfig(), C.RunConfig()
        assert a.digest() == b.digest()
        b.optim.lr = 1e-3
        assert a.digest() != b.digest()

    def test_load_round_trip(self, tmp_path):
        cfg = C.RunConfig()
        cfg.model.depth = 4
        path = tmp_path / "cfg.json"
        import dataclasses
        path.write_text(json.dumps(dataclasses.asdict(cfg)))
        loaded = C.load_config(str(path))
        assert loaded.digest() == cfg.digest()

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"optim": {"lr": 1e-3, "typo": 1}}))
        with pytest.raises(ValueError):
            C.load_config(str(path))

    def test_override_types(self):
        cfg = C.RunConfig()
        C.apply_overrides(cfg, {"optim.lr": 0.001, "model.strategy": "S1",
                                "data.levels": [0.25]})
        assert cfg.optim.lr == 0.001
        assert cfg.model.strategy == "S1"
        assert cfg.data.levels == [0.25]
