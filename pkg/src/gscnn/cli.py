"""Command-line entry point.

Exit status: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys

from . import config as C

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _sections(args, name=None):
    sections = C.read_sections(path=getattr(args, "config", None))
    return C.merge(sections, C.parse_overrides(args.set))


def _tolerances(text):
    try:
        vals = tuple(float(t) for t in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad tolerance list {text!r}") from None
    if not vals or min(vals) < 0:
        raise argparse.ArgumentTypeError("tolerances must be non-negative numbers")
    return vals


def cmd_make_dataset(args):
    from . import data
    sections = C.merge(C.read_sections(path=args.spec), C.parse_overrides(args.set))
    unknown = set(sections) - {"dataset"}
    if unknown:
        raise C.ConfigError(f"unknown section(s) in dataset spec: {sorted(unknown)}")
    spec = C.update_dataclass(data.DatasetSpec(), sections.get("dataset", {}), "dataset")
    data.write_dataset(spec, args.out)
    print(f"wrote {spec.count} samples to {args.out}")


def _train_config(args):
    from .train import TrainConfig
    cfg = TrainConfig.from_sections(_sections(args))
    if args.data:
        cfg.data_dir = args.data
    if not cfg.data_dir:
        raise C.ConfigError("no dataset directory (use --data or train.data_dir)")
    return cfg


def cmd_train(args):
    import os

    from . import evaluate, train
    from .report import plot_loss_curve
    cfg = _train_config(args)
    if not os.path.isdir(cfg.data_dir):
        raise FileNotFoundError(f"dataset directory not found: {cfg.data_dir}")
    eval_rows = []

    def on_eval(params, mcfg, val):
        rep = evaluate.evaluate_samples(params, mcfg, val, crop=cfg.crop)
        eval_rows.append(rep)
        return rep

    res = train.train(cfg, out_dir=args.out, resume=args.resume, on_eval=on_eval,
                      log=None if args.quiet else print)
    if res.evals:
        lines = ["epoch,miou,pixel_accuracy," + ",".join(
            f"f@{t:g}px" for t in res.evals[0][1].mean_f)]
        for epoch, rep in res.evals:
            lines.append(",".join([str(epoch), f"{rep.miou:.6f}", f"{rep.pixel_accuracy:.6f}"]
                                  + [f"{v:.6f}" for v in rep.mean_f.values()]))
        with open(os.path.join(args.out, "eval.csv"), "w") as f:
            f.write("\n".join(lines) + "\n")
    plot_loss_curve(os.path.join(args.out, "metrics.csv"), os.path.join(args.out, "loss.png"))
    print(f"checkpoint: {os.path.join(args.out, 'checkpoint.gsck')}")


def cmd_eval(args):
    from . import evaluate
    from .metrics import CropSpec
    crop = None
    if args.crop_factors is not None:
        crop = CropSpec(base_margin=args.crop_margin, factors=tuple(int(c) for c in
                                                                    args.crop_factors))
    rep = evaluate.evaluate_checkpoint(args.checkpoint, args.data, args.out,
                                       tolerances=args.tolerances, crop=crop, split=args.split,
                                       use_gt=args.gt_as_pred, figures=not args.no_figures)
    print(f"mIoU {rep.miou:.4f}  " + "  ".join(
        f"F@{t:g}px {v:.4f}" for t, v in rep.mean_f.items()))


def cmd_infer(args):
    from . import evaluate
    evaluate.infer_image(args.checkpoint, args.image, args.out, args.dump_boundary)
    print(f"wrote {args.out}")


def cmd_gradcheck(args):
    from . import gradcheck
    ok = gradcheck.main()
    if not ok:
        raise RuntimeError("gradient check failed")


def cmd_ablation(args):
    from . import ablation, train
    from .train import TrainConfig
    cfg = TrainConfig.from_sections(_sections(args))
    dataset = train.Dataset.from_dir(args.data)
    rows = ablation.run_ablation(cfg, dataset, seeds=tuple(args.seeds), out_dir=args.out,
                                 log=print)
    for v, m in ablation.summarize(rows).items():
        print(v, "  ".join(f"{k}={x:.2f}" for k, x in m.items()))


def build_parser():
    p = _Parser(prog="gscnn", description="Two-stream boundary-aware segmentation toolkit.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    s = sub.add_parser("make-dataset", help="generate the synthetic dataset")
    s.add_argument("--spec", help="config file with a [dataset] section")
    s.add_argument("--out", required=True)
    s.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    s.set_defaults(func=cmd_make_dataset)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--config", help="config file ([train], [loss], [crop] sections)")
    s.add_argument("--data", help="dataset directory (overrides train.data_dir)")
    s.add_argument("--out", required=True, help="run directory")
    s.add_argument("--resume", help="checkpoint to continue from")
    s.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--tolerances", type=_tolerances, default=(3, 5, 9, 12),
                   help="boundary F tolerances in px (default 3,5,9,12)")
    s.add_argument("--split", choices=("val", "train", "all"), default="val")
    s.add_argument("--crop-margin", type=int, default=6)
    s.add_argument("--crop-factors", type=int, nargs="+")
    s.add_argument("--gt-as-pred", action="store_true",
                   help="score the ground truth against itself (harness self-test)")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("infer", help="predict one image")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--image", required=True, help="input pixmap (.ppm)")
    s.add_argument("--out", required=True, help="output label graymap (.pgm)")
    s.add_argument("--dump-boundary", metavar="PGM", help="also write the boundary map ×255")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("ablation", help="baseline / gcl / full comparison over seeds")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    s.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    s.set_defaults(func=cmd_ablation)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        args.func(args)
    except C.ConfigError as exc:
        print(f"gscnn {args.command}: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        print(f"gscnn {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
