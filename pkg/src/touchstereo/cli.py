"""Subcommand CLI for reproducible experiment runs.

Exit codes: 0 success, 2 config error, 3 missing upstream artifact,
4 divergence or diagnostic failure.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, ExperimentConfig
from .finetuner import FinetuneDivergence
from .pipeline import (
    STRATEGIES,
    UpstreamMissingError,
    run_ablate,
    run_eval,
    run_full,
    run_gen_data,
    run_finetune,
    run_pretrain,
    run_probe,
    run_select,
)
from .scenegen import SceneGenError
from .selector import SelectionError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_UPSTREAM = 3
EXIT_DIAGNOSTIC = 4


def _add_common(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--profile", choices=("desk", "paper"),
                   help="base profile (default from config, else desk)")
    p.add_argument("--seed", type=int, help="override the experiment seed")
    p.add_argument("--out-dir", required=True, help="experiment output root")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override any config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="touchstereo",
        description="Touch-guided finetuning of a cost-volume stereo model "
                    "on synthetic scenes")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("gen-data", "render the pretrain/val/probe/eval scene splits"),
            ("pretrain", "train the stereo model on diffuse-only scenes"),
            ("select", "choose touch points on the probing views"),
            ("probe", "run the simulated tactile probe over the touches"),
            ("finetune", "finetune the pretrained model on probe labels"),
            ("eval", "compute metric tables and figures on the eval split"),
            ("full-run", "chain all stages for one strategy"),
            ("ablate", "strategy comparison and ablations over seeds")):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name in ("select", "probe", "finetune"):
            p.add_argument("--strategy", choices=STRATEGIES,
                           help="selection strategy (default from config)")
        if name == "eval":
            p.add_argument("--models",
                           help="comma-separated model tags (default: "
                                "pretrained plus every finetuned model found)")
    return parser


def _load_config(args) -> ExperimentConfig:
    overrides = {}
    for item in args.overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, _, v = item.partition("=")
        overrides[k.strip()] = v.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    return ExperimentConfig.load(config_path=args.config, profile=args.profile,
                                 overrides=overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        out_dir = args.out_dir
        if args.command == "gen-data":
            info = run_gen_data(cfg, out_dir)
            print(f"gen-data: views per split {info['views']}")
        elif args.command == "pretrain":
            diag = run_pretrain(cfg, out_dir)
            print(f"pretrain: {diag['epochs']} epochs, validation diffuse EPE "
                  f"{diag['val_epe']:.4f} (target {diag['target_val_epe']})")
            if not diag["target_met"]:
                print("pretrain: WARNING validation target missed; "
                      "state saved anyway", file=sys.stderr)
        elif args.command == "select":
            info = run_select(cfg, out_dir, args.strategy)
            print(f"select: {info['touches']} touches")
        elif args.command == "probe":
            info = run_probe(cfg, out_dir, args.strategy)
            print(f"probe: {info['succeeded']}/{info['attempted']} touches "
                  "succeeded")
        elif args.command == "finetune":
            info = run_finetune(cfg, out_dir, args.strategy)
            print(f"finetune: model finetuned_{info['tag']} from "
                  f"{info['labels']} labels")
        elif args.command == "eval":
            tags = args.models.split(",") if args.models else None
            info = run_eval(cfg, out_dir, tags)
            for tag, trans_epe in info.items():
                print(f"eval: {tag}: transparent EPE {trans_epe:.4f} px")
        elif args.command == "full-run":
            info = run_full(cfg, out_dir)
            for tag, trans_epe in info.items():
                print(f"full-run: {tag}: transparent EPE {trans_epe:.4f} px")
        elif args.command == "ablate":
            summary = run_ablate(cfg, out_dir)
            for label, stats in summary.items():
                m, s = stats["Trans"]
                print(f"ablate: {label}: transparent EPE {m:.4f} +- {s:.4f} px")
        return EXIT_OK
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SceneGenError as e:
        print(f"scene config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except UpstreamMissingError as e:
        print(f"upstream missing: {e}", file=sys.stderr)
        return EXIT_UPSTREAM
    except FinetuneDivergence as e:
        print(f"finetuning diverged: {e}", file=sys.stderr)
        return EXIT_DIAGNOSTIC
    except SelectionError as e:
        print(f"selection failed: {e}", file=sys.stderr)
        return EXIT_DIAGNOSTIC


if __name__ == "__main__":
    sys.exit(main())
