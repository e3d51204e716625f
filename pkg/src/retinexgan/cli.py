"""Command-line entry point.

Subcommands: dataset-build, train, infer, decompose, eval, ablate,
report. One JSON config file plus --set dotted overrides (overrides win);
every run echoes the resolved config digest. Exit codes: 0 success,
1 validation error, 2 runtime failure.
"""

import argparse
import json
import os
import sys

from . import config as C
from . import dataset, evalharness, metrics, trainer
from .dataset import ManifestError, NoiseConfig
from .infer import GeneratorEnhancer
from .trainer import CheckpointError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def _parse_override(text):
    if "=" not in text:
        raise UsageError(f"--set expects key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _load_run_config(args):
    cfg = C.load_config(args.config) if args.config else C.RunConfig()
    overrides = dict(_parse_override(s) for s in (args.set or []))
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    C.apply_overrides(cfg, overrides)
    print(f"config digest: {cfg.digest()}")
    return cfg


def _add_config_flags(p):
    p.add_argument("--config", help="JSON run config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="dotted config override, e.g. optim.lr=1e-3")
    p.add_argument("--seed", type=int, help="override the run seed")


def _load_state(args, cfg):
    return trainer.load_checkpoint(args.checkpoint, cfg,
                                   check_digest=not args.no_digest_check)


def build_parser():
    parser = _Parser(prog="retinexgan",
                     description="Decomposition-enhancement GAN toolkit "
                                 "for low-light images")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset-build", parents=[], help="synthesize paired data")
    p.add_argument("--source", required=True, help="directory of reference PNGs")
    p.add_argument("--out", required=True)
    _add_config_flags(p)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    _add_config_flags(p)

    for name in ("infer", "decompose"):
        p = sub.add_parser(name)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--input", required=True, help="input PNG")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--no-digest-check", action="store_true")
        if name == "infer":
            p.add_argument("--output", choices=["composite", "illumination"],
                           default="composite")
        _add_config_flags(p)

    p = sub.add_parser("eval", help="metric report on a manifest split")
    p.add_argument("--checkpoint", help="omit to evaluate the identity baseline")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--no-digest-check", action="store_true")
    _add_config_flags(p)

    p = sub.add_parser("ablate", help="run the strategy/flag ladder")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    _add_config_flags(p)

    p = sub.add_parser("report", help="re-render tables and charts")
    p.add_argument("--from", dest="src", required=True,
                   help="directory holding ablation.csv / curves_*.csv")
    p.add_argument("--out", required=True)
    _add_config_flags(p)

    return parser


def cmd_dataset_build(args):
    cfg = _load_run_config(args)
    dc = cfg.data
    noise = NoiseConfig(read_sigma=dc.read_sigma, shot_factor=dc.shot_factor,
                        seed=cfg.seed)
    manifest = dataset.build_dataset(
        args.source, args.out, levels=dc.levels, noise=noise,
        split_ratio=dc.split_ratio, height=dc.height, width=dc.width)
    print(f"wrote {len(manifest.records)} records to "
          f"{os.path.join(args.out, 'manifest.jsonl')}")


def cmd_train(args):
    cfg = _load_run_config(args)
    manifest = dataset.load_manifest(args.manifest)
    state = None
    if args.resume:
        state = trainer.load_checkpoint(args.resume, cfg)
    state = trainer.train(cfg, manifest, args.out, state=state)
    print(f"finished at step {state.step}; checkpoint in {args.out}")


def cmd_infer(args):
    cfg = _load_run_config(args)
    state = _load_state(args, cfg)
    enhancer = GeneratorEnhancer(state.generator, cfg.model.depth,
                                 output=args.output)
    from . import imgcore
    img = imgcore.load_png(args.input)
    os.makedirs(args.out, exist_ok=True)
    out_path = os.path.join(args.out, "enhanced.png")
    imgcore.save_png(enhancer(img), out_path)
    print(f"wrote {out_path}")


def cmd_decompose(args):
    cfg = _load_run_config(args)
    state = _load_state(args, cfg)
    enhancer = GeneratorEnhancer(state.generator, cfg.model.depth)
    from . import imgcore
    img = imgcore.load_png(args.input)
    R, I = enhancer.decompose_views(img)
    os.makedirs(args.out, exist_ok=True)
    imgcore.save_png(R, os.path.join(args.out, "R.png"))
    imgcore.save_png(I, os.path.join(args.out, "I.png"))
    print(f"wrote {args.out}/R.png and {args.out}/I.png")


def cmd_eval(args):
    cfg = _load_run_config(args)
    manifest = dataset.load_manifest(args.manifest)
    if args.checkpoint:
        state = _load_state(args, cfg)
        enhance_fn = GeneratorEnhancer(state.generator, cfg.model.depth)
    else:
        enhance_fn = metrics.identity_enhancer
    report = metrics.evaluate(enhance_fn, manifest, args.split)
    os.makedirs(args.out, exist_ok=True)
    report.write_csv(os.path.join(args.out, "per_image.csv"))
    report.write_json(os.path.join(args.out, "aggregates.json"))
    print(f"overall: {report.overall}")


def cmd_ablate(args):
    cfg = _load_run_config(args)
    manifest = dataset.load_manifest(args.manifest)
    rows = evalharness.run_ablation(manifest, cfg, args.out)
    models = {}
    evalharness.emit_report(rows, [], args.out)
    for row in rows:
        print(f"{row.label}: psnr={row.psnr_db:.2f} mse={row.mse:.2f} "
              f"ssim={row.ssim:.4f}")


def cmd_report(args):
    _load_run_config(args)
    rows, curves = [], []
    ab = os.path.join(args.src, "ablation.csv")
    if os.path.exists(ab):
        import csv as _csv
        with open(ab) as fh:
            for rec in _csv.DictReader(fh):
                rows.append(evalharness.AblationRow(
                    label=rec["label"], psnr_db=float(rec["psnr_db"]),
                    mse=float(rec["mse"]), ssim=float(rec["ssim"])))
    for metric, name in (("mse", "mse"), ("psnr_db", "psnr"), ("ssim", "ssim")):
        path = os.path.join(args.src, f"curves_{name}.csv")
        if not os.path.exists(path):
            continue
        import csv as _csv
        by_label = {}
        with open(path) as fh:
            for rec in _csv.DictReader(fh):
                by_label.setdefault(rec["label"], []).append(
                    (float(rec["level"]), float(rec[metric])))
        for label, points in by_label.items():
            curves.append(evalharness.CurveSeries(metric=metric, label=label,
                                                  points=points))
    evalharness.emit_report(rows, curves, args.out)
    print(f"report written to {args.out}")


COMMANDS = {
    "dataset-build": cmd_dataset_build,
    "train": cmd_train,
    "infer": cmd_infer,
    "decompose": cmd_decompose,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "report": cmd_report,
}


def main(argv=None):
    workers = os.environ.get("RETINEXGAN_NUM_WORKERS")
    if workers:
        import torch
        torch.set_num_threads(max(1, int(workers)))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        COMMANDS[args.command](args)
        return 0
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (ValueError, ManifestError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (CheckpointError, OSError, FloatingPointError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
