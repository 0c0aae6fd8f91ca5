"""
Main application entry point (CLI)

    python main.py generate-dataset --family lobster --out data/lobster
    python main.py train --data data/lobster/train.jsonl --out models/lobster.json
    python main.py sample --model models/lobster.json --count 100 --property lobster --out samples.jsonl
    python main.py evaluate --generated samples.jsonl --train ... --test ... --validity lobster
    python main.py project --input samples.jsonl --property planar --out projected.jsonl
    python main.py check --theorem 1 --property planar --trials 500
"""
import argparse
import json
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from app.cli.commands import REQUIRED_FLAGS, dispatch
from app.config.run_config import available_jobs, load_run_config
from app.config.settings import LOG_LEVEL

logger = logging.getLogger("graphdiff")


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        raise UsageError(message)


def _counts(text: str):
    try:
        parts = tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated integers, got '{text}'") from None
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected train,val,test counts, got '{text}'")
    return parts


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="graphdiff", description="Constrained graph discrete diffusion")
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with RunConfig values; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, help=f"worker processes (default: {available_jobs()})")
    common.add_argument("--out")
    sub = parser.add_subparsers(dest="command", parser_class=ArgumentParser)

    gen = sub.add_parser("generate-dataset", parents=[common])
    gen.add_argument("--family", choices=["planar", "tree", "lobster", "cellgraph"])
    gen.add_argument("--counts", type=_counts)
    gen.add_argument("--n", type=int)

    tr = sub.add_parser("train", parents=[common])
    tr.add_argument("--data")
    tr.add_argument("--property")
    tr.add_argument("--T", type=int, dest="T")
    tr.add_argument("--lam", type=float)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--momentum", type=float)
    tr.add_argument("--steps", type=int)
    tr.add_argument("--batch-size", type=int, dest="batch_size")

    sm = sub.add_parser("sample", parents=[common])
    sm.add_argument("--model")
    sm.add_argument("--count", type=int)
    sm.add_argument("--mode", choices=["constrained", "unconstrained", "rejection", "project_end"])
    sm.add_argument("--property")
    sm.add_argument("--projector", choices=["uniform", "det", "stoch", "off"])
    sm.add_argument("--max-attempts", type=int, dest="max_attempts")
    sm.add_argument("--no-efficient", action="store_false", dest="efficient", default=None)

    ev = sub.add_parser("evaluate", parents=[common])
    ev.add_argument("--generated")
    ev.add_argument("--train")
    ev.add_argument("--test")
    ev.add_argument("--validity", choices=["planar", "tree", "lobster", "tls_low", "tls_high"])
    ev.add_argument("--property")

    pj = sub.add_parser("project", parents=[common])
    pj.add_argument("--input")
    pj.add_argument("--property")
    pj.add_argument("--projector", choices=["uniform", "det", "stoch"])
    pj.add_argument("--no-efficient", action="store_false", dest="efficient", default=None)

    ck = sub.add_parser("check", parents=[common])
    ck.add_argument("--theorem", type=int, choices=[1, 2])
    ck.add_argument("--property")
    ck.add_argument("--trials", type=int)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
        config = load_run_config(args.command, flags, args.config)
    except (UsageError, ValidationError) as e:
        parser.print_usage(sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        print(f"error: cannot read config: {e}", file=sys.stderr)
        return 2
    try:
        config.require(*REQUIRED_FLAGS[config.command])
    except ValueError as e:
        parser.print_usage(sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return 1

    try:
        summary = dispatch(config)
    except Exception as e:
        logger.debug("Command failed", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    print(json.dumps(summary, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
