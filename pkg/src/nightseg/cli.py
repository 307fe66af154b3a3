"""Command-line entry point wiring data generation, training, and checks."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nightseg",
        description="Night-scene segmentation: synthetic data, training, evaluation, verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic night-scene dataset")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--count", type=int, default=250)
    g.add_argument("--height", type=int, default=32)
    g.add_argument("--width", type=int, default=64)
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise-std", type=float, default=0.01)
    g.add_argument("--contrast-gap", type=float, default=0.06)
    g.add_argument("--deceivers", type=int, nargs=2, default=(1, 2), metavar=("MIN", "MAX"))

    p = sub.add_parser("phase-extract", help="write a texture map for one image")
    p.add_argument("--in", dest="input", required=True, help="input PPM image")
    p.add_argument("--out", required=True, help="output PPM texture map")
    p.add_argument("--c-a", type=float, default=None, help="amplitude constant (default: mean amplitude)")
    p.add_argument("--mode", choices=("phase", "sobel"), default="phase")

    t = sub.add_parser("train", help="train a model on a generated dataset")
    t.add_argument("--config", required=True, help="key = value config file")
    t.add_argument("--data", required=True, help="dataset directory (with manifest.txt)")
    t.add_argument("--out", required=True, help="run directory for checkpoint and logs")

    e = sub.add_parser("eval", help="evaluate a checkpoint on the validation split")
    e.add_argument("--ckpt", required=True, help="checkpoint directory written by train")
    e.add_argument("--config", required=True, help="config file used for training")
    e.add_argument("--data", required=True, help="dataset directory")
    e.add_argument("--report", required=True, help="metrics report output path")

    a = sub.add_parser("ablate", help="train/evaluate each setting of one component")
    a.add_argument("--axis", choices=("phase", "matcher", "depth", "enhance-op"), required=True)
    a.add_argument("--config", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--report", default=None, help="optional file for the table")

    sub.add_parser("grad-check", help="finite-difference check of every differentiable op")
    sub.add_parser("selftest", help="run all oracle-equivalence and invariant suites")
    return parser


def _cmd_gen_data(args) -> int:
    from .scenes import SceneConfig, gen_dataset

    cfg = SceneConfig(
        height=args.height,
        width=args.width,
        num_classes=args.classes,
        noise_std=args.noise_std,
        contrast_gap=args.contrast_gap,
        deceivers=tuple(args.deceivers),
    )
    manifest = gen_dataset(cfg, args.count, args.seed, args.out)
    print(f"wrote {args.count} samples to {args.out} (manifest: {manifest})")
    return 0


def _cmd_phase_extract(args) -> int:
    from .netpbm import read_ppm, write_ppm
    from .phase import image_texture_stack

    image = read_ppm(Path(args.input).read_bytes())
    texture = image_texture_stack(image, mode=args.mode, c_a=args.c_a)
    Path(args.out).write_bytes(write_ppm(texture))
    print(f"wrote {args.out}")
    return 0


def _load_everything(config_path: str, data_dir: str):
    from .config import parse_config
    from .train import TrainConfig, load_dataset, model_config_from

    cfg = parse_config(config_path)
    tc = TrainConfig.from_config(cfg)
    enhance = cfg.get_str("enhance.op", "phase")
    ds = load_dataset(data_dir, enhance, tc.c_a)
    mc = model_config_from(cfg, ds.num_classes, tc.seed, tc.dtype)
    return cfg, tc, mc, ds


def _cmd_train(args) -> int:
    from .model import NightSegModel
    from .train import TrainingDiverged, train

    _, tc, mc, ds = _load_everything(args.config, args.data)
    model = NightSegModel(mc)
    try:
        log = train(model, ds, tc, out_dir=args.out)
    except TrainingDiverged as exc:
        print(str(exc), file=sys.stderr)
        return 1
    print("\n".join(log[-3:]))
    print(f"checkpoint written to {Path(args.out) / 'checkpoint'}")
    return 0


def _cmd_eval(args) -> int:
    from .model import NightSegModel
    from .train import evaluate, load_checkpoint, render_report

    _, tc, mc, ds = _load_everything(args.config, args.data)
    model = NightSegModel(mc)
    load_checkpoint(args.ckpt, model)
    report = render_report(evaluate(model, ds, tc.dtype))
    Path(args.report).write_text(report, encoding="utf-8")
    print(report, end="")
    return 0


_ABLATION_ROWS = {
    "phase": [("without_phase", {"enhance.op": "none"}),
              ("with_phase", {"enhance.op": "phase"})],
    "matcher": [("vanilla_attention", {"matcher.mode": "vanilla"}),
                ("reliable_attention", {"matcher.mode": "reliable"})],
    "depth": [(f"depth_{d}", {"decoder.depth": str(d)}) for d in (1, 2, 3, 4)],
    "enhance-op": [("no_enhance", {"enhance.op": "none"}),
                   ("sobel", {"enhance.op": "sobel"}),
                   ("fourier_phase", {"enhance.op": "phase"})],
}


def _cmd_ablate(args) -> int:
    from .config import Config, parse_config
    from .model import NightSegModel
    from .train import TrainConfig, evaluate, load_dataset, model_config_from, train

    base = parse_config(args.config)
    lines = [f"axis {args.axis}", "setting miou"]
    for label, overrides in _ABLATION_ROWS[args.axis]:
        cfg = Config({**base.values, **overrides})
        tc = TrainConfig.from_config(cfg)
        ds = load_dataset(args.data, cfg.get_str("enhance.op", "phase"), tc.c_a)
        mc = model_config_from(cfg, ds.num_classes, tc.seed, tc.dtype)
        model = NightSegModel(mc)
        train(model, ds, tc, out_dir=None)
        _, mean = evaluate(model, ds, tc.dtype).iou()
        lines.append(f"{label} {mean:.6f}")
        print(lines[-1])
    table = "\n".join(lines) + "\n"
    if args.report:
        Path(args.report).write_text(table, encoding="utf-8")
    return 0


def _cmd_grad_check(_args) -> int:
    from .selftest import run_grad_suite

    worst = 0.0
    for name, err in run_grad_suite():
        status = "PASS" if err < 1e-4 else "FAIL"
        print(f"{status}  {name}: max relative error {err:.3e}")
        worst = max(worst, err)
    return 0 if worst < 1e-4 else 1


def _cmd_selftest(_args) -> int:
    from .selftest import run_selftest

    return 0 if run_selftest() == 0 else 1


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "phase-extract": _cmd_phase_extract,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
    "grad-check": _cmd_grad_check,
    "selftest": _cmd_selftest,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
