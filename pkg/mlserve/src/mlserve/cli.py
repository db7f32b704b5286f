"""Command-line entry points: `mlserve serve` and `mlserve train`."""

from __future__ import annotations

import argparse
import json
import sys

from .backends import StartupError
from .trainer import ConfigError, load_trainer_config, train


def cmd_serve(args) -> int:
    from .service import serve
    serve(args.models, host=args.host, port=args.port)
    return 0


def cmd_train(args) -> int:
    config = load_trainer_config(args.config)
    if args.max_epochs is not None:
        config.max_epochs = args.max_epochs
    if args.seed is not None:
        config.seed = args.seed
    outcome = train(config)
    print(f"best epoch: {outcome.best_epoch}")
    print(f"checkpoint: {outcome.checkpoint_dir}")
    print(json.dumps(outcome.report, indent=2, sort_keys=True))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="mlserve",
                                     description="Scorer service and detoxifier trainer")
    sub = parser.add_subparsers(dest="command", required=True)

    p_serve = sub.add_parser("serve", help="run the scorer HTTP service")
    p_serve.add_argument("--models", required=True, help="models config YAML")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8018)
    p_serve.set_defaults(func=cmd_serve)

    p_train = sub.add_parser("train", help="fine-tune the seq2seq detoxifier")
    p_train.add_argument("--config", required=True, help="trainer config YAML")
    p_train.add_argument("--max-epochs", type=int, dest="max_epochs",
                         help="override the epoch cap")
    p_train.add_argument("--seed", type=int, help="override the seed")
    p_train.set_defaults(func=cmd_train)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, StartupError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
