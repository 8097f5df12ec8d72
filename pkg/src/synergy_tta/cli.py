"""Command-line entry point: ``synergy-tta {run,baseline,replay,oracle}``."""

import argparse
import json
import logging
import os
import sys

from . import fileio
from .config import FEATSIM_MODES, MODES, RunConfig, dump_config, load_config
from .errors import ConfigError
from .oracles import run_all
from .runner import replay_early_set, run_tta


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML run config")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", metavar="DIR", help="directory for metrics and checkpoints")
    common.add_argument("--mode", choices=MODES)
    common.add_argument("--bank-size", type=int)
    common.add_argument("--update-period", type=int)
    common.add_argument("--featsim", choices=FEATSIM_MODES)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="synergy-tta",
                                description="Test-time adaptation with a synergy-weighted model bank.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="full adaptation run")
    b = sub.add_parser("baseline", parents=[common], help="run with a baseline mode")
    b.set_defaults(default_mode="no_adapt")
    sub.add_parser("replay", parents=[common], help="early-set study of the final bank")
    o = sub.add_parser("oracle", help="run the brute-force reference checks")
    o.add_argument("--seed", type=int, default=0)
    return p


def _config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    mode = args.mode or getattr(args, "default_mode", None)
    return cfg.with_overrides(seed=args.seed, mode=mode, bank_size=args.bank_size,
                              update_period=args.update_period, featsim=args.featsim)


def _emit(obj):
    print(fileio.dumps_record(obj))


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.command == "oracle":
        reports = run_all(seed=args.seed)
        for r in reports:
            _emit(r)
        return 0 if all(r["passed"] for r in reports) else 1

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        if args.command == "replay" and cfg.mode in ("no_ensemble", "no_adapt"):
            raise ConfigError("replay needs an ensemble mode")
    except ConfigError as exc:
        print(json.dumps({"error": "ConfigError", "message": str(exc)}), file=sys.stderr)
        return 2

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        dump_config(cfg, os.path.join(args.out, "config.yaml"))
    result = run_tta(cfg, out_dir=args.out)
    if args.command == "replay":
        report = replay_early_set(result)
        if args.out:
            with open(os.path.join(args.out, "replay.json"), "w", encoding="utf-8") as fh:
                fh.write(fileio.dumps_record(report) + "\n")
        _emit(report)
    else:
        _emit(result.summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
