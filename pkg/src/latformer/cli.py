"""Command-line interface: ``latformer {gen,train-eval,mask,noise,report}``.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys

from .errors import LatFormerError
from .harness import ConfigError, cmd_gen, cmd_noise, cmd_report, cmd_train_eval, load_config
from .lattice import dims_for, parse_action
from .masks import mask_for_action, save_mask
from .model import VARIANTS

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _shape(text):
    try:
        return tuple(int(v) for v in text.lower().replace("x", ",").split(",") if v)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}; use e.g. 8x8 or 16") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int, help="suite and training seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--jobs", type=int, help="worker processes")

    parser = argparse.ArgumentParser(prog="latformer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="write synthetic task files")
    for name, help_text in (("train-eval", "train and evaluate over the train-size ladder"),
                            ("noise", "noise-robustness sweep")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--variant", choices=VARIANTS, default="latformer")
    sub.add_parser("report", parents=[common], help="summarise results in the output directory")
    p = sub.add_parser("mask", help="write the exact mask of an action (.pgm or .json)")
    p.add_argument("action", help="e.g. translate:1,1  rotate  reflect:diag  scale:2,2:down  rotate+reflect:h")
    p.add_argument("--shape", type=_shape, default=(8, 8), help="lattice shape, e.g. 8x8 (default) or 16")
    p.add_argument("--out", required=True, help="output path; extension selects the format")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "mask":
            try:
                action = parse_action(args.action, ndim=len(args.shape))
            except ValueError as exc:
                raise ConfigError(f"bad action {args.action!r}: {exc}") from exc
            shape = dims_for(action, args.shape)
            path = save_mask(mask_for_action(action, shape), args.out)
            print(f"wrote {path}")
            return EXIT_OK
        config = load_config(args.config, seed=args.seed, out=args.out, jobs=args.jobs)
        if args.command == "gen":
            paths = cmd_gen(config)
            print(f"wrote {len(paths)} task files to {config.task_dir}")
        elif args.command == "train-eval":
            rows = cmd_train_eval(config, args.variant)
            if any(r["error"] for r in rows):
                return EXIT_RUNTIME
        elif args.command == "noise":
            rows = cmd_noise(config, args.variant)
            if any(r["error"] for r in rows):
                return EXIT_RUNTIME
        else:
            cmd_report(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LatFormerError, OSError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
