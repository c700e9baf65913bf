"""
LatentForge command-line entry point

    python main.py synth cards-iii --seed 7 --out d.vdt
    python main.py train --variant rvae --data d.vdt --k 2 --hidden 256,256 --out runs/rvae
    python main.py grid --checkpoint runs/rvae/checkpoint.lfck --range -1.5 1.5 --steps 12

Exit codes: 0 success, 2 usage error, 3 data/format error, 4 numeric failure.
"""
import argparse
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError as SchemaError

from commands import all_commands
from core.exceptions import DataError, LatentForgeError, UsageError
from utils.logging_config import setup_logging

logger = logging.getLogger('latentforge')


def build_parser(commands) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='latentforge',
                                     description='Invariant variational autoencoders and latent-space analysis')
    parser.add_argument('--log-level', help='overrides LOG_LEVEL')
    subparsers = parser.add_subparsers(dest='command', required=True)
    for command in commands:
        sub = subparsers.add_parser(command.command_name, help=command.help_text)
        sub.add_argument('--seed', type=int, help='master seed; every random stream derives from it')
        sub.add_argument('--out', help='output file or directory')
        sub.add_argument('--config', help='INI experiment file with [model] [prior] [train] [data] [synth] sections')
        command.add_arguments(sub)
        sub.set_defaults(handler=command)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Run one subcommand; returns the process exit code"""
    parser = build_parser(all_commands())
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging(args.log_level)
    if args.seed is not None and args.seed < 0:
        logger.error("--seed must be non-negative")
        return UsageError.exit_code

    try:
        args.handler.run(args)
    except LatentForgeError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except SchemaError as e:
        logger.error(f"Invalid configuration: {e}")
        return UsageError.exit_code
    except OSError as e:
        logger.error(f"File system error: {e}")
        return DataError.exit_code
    return 0


if __name__ == '__main__':
    sys.exit(main())
