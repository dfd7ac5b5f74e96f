"""Command line interface: train, eval, ablate, plot.

Exit codes: 0 success; 1 generic failure; 2 invalid configuration (the
offending key is named on stderr); 3 training diverged to a non-finite
loss.  Log verbosity comes from GACG_LOG_LEVEL in {error, info, debug}.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .ablation import AXES, run_ablation_suite
from .config import config_from_dict, load_config
from .errors import ConfigError, GacgError, TrainingDivergedError
from .runner import evaluate_checkpoint, run_training
from .svgplot import emit_plot

log = logging.getLogger("gacg")

_LEVELS = {"error": logging.ERROR, "info": logging.INFO,
           "debug": logging.DEBUG}


def _setup_logging():
    raw = os.environ.get("GACG_LOG_LEVEL", "info").lower()
    level = _LEVELS.get(raw, logging.INFO)
    logging.basicConfig(stream=sys.stderr, level=level,
                        format="%(levelname)s %(name)s: %(message)s")
    if raw not in _LEVELS:
        log.warning("unknown GACG_LOG_LEVEL %r, using info", raw)


def _parse_seeds(text: str) -> list[int]:
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(part) for part in text.split(",") if part]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gacg",
        description="Group-aware coordination-graph multi-agent training")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run one training job")
    p_train.add_argument("--config", required=True, help="JSON config path")
    p_train.add_argument("--set", action="append", default=[], metavar="K=V",
                         help="override a config key (repeatable)")
    p_train.add_argument("--out", default=None,
                         help="output directory (default runs/<run_id>-seed<seed>)")
    p_train.add_argument("--resume", action="store_true",
                         help="continue from the checkpoint in --out")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint greedily")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--episodes", type=int, required=True)
    p_eval.add_argument("--seed", type=int, required=True)
    p_eval.add_argument("--random-policy", action="store_true",
                        help="ignore the checkpoint policy; act uniformly")

    p_abl = sub.add_parser("ablate", help="run an ablation suite")
    p_abl.add_argument("--axis", required=True, choices=AXES)
    p_abl.add_argument("--seeds", default="0..4",
                       help="e.g. 0..4 or 0,2,5 (default 0..4)")
    p_abl.add_argument("--config", default=None,
                       help="base JSON config (defaults used if omitted)")
    p_abl.add_argument("--set", action="append", default=[], metavar="K=V")
    p_abl.add_argument("--out", default=None,
                       help="suite directory (default ablations/<axis>)")

    p_plot = sub.add_parser("plot", help="render metrics CSVs to SVG")
    p_plot.add_argument("--out", required=True, help="output SVG path")
    p_plot.add_argument("--y", default="capture_rate",
                        help="metric column to plot (default capture_rate)")
    p_plot.add_argument("csvs", nargs="+", help="metrics CSV files")
    return parser


def _cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    out_dir = args.out or os.path.join(
        "runs", f"{cfg.run_id}-seed{cfg.seed}")
    run_training(cfg, out_dir, resume=args.resume)
    print(out_dir)
    return 0


def _cmd_eval(args) -> int:
    summary = evaluate_checkpoint(args.checkpoint, args.episodes, args.seed,
                                  random_policy=args.random_policy)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def _cmd_ablate(args) -> int:
    if args.config:
        base = load_config(args.config, args.set)
    else:
        from .config import apply_overrides
        base = config_from_dict(apply_overrides({}, args.set))
    seeds = _parse_seeds(args.seeds)
    out_dir = args.out or os.path.join("ablations", args.axis)
    csv_path = run_ablation_suite(base, args.axis, seeds, out_dir)
    print(csv_path)
    return 0


def _cmd_plot(args) -> int:
    emit_plot(args.csvs, args.out, y_col=args.y)
    print(args.out)
    return 0


_COMMANDS = {"train": _cmd_train, "eval": _cmd_eval,
             "ablate": _cmd_ablate, "plot": _cmd_plot}


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergedError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 3
    except GacgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
