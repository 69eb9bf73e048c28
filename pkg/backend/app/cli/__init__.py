"""Command-line router: global options, config resolution and subcommand dispatch."""
import argparse
import logging
from typing import Dict, Optional, Sequence

from app.cli.commands import COMMANDS
from app.config import dump_run_config, load_run_config, parse_overrides
from app.models.run_config import RunConfig

logger = logging.getLogger(__name__)

SEEDED_SECTIONS = ("system", "training", "twin")


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration ([section] key = value)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one configuration key (repeatable)")
    common.add_argument("--seed", type=int, help="seed for system, training and twin sections")
    common.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR (default PAINT_LOG_LEVEL or INFO)")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="paint",
        description="Parallel-in-time neural twins: simulate, train, reconstruct, evaluate and diagnose.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    common = _common_options()
    for name, module in COMMANDS.items():
        sub = subparsers.add_parser(name, help=module.HELP, parents=[common])
        module.add_arguments(sub)
    return parser


def _merge(target: Dict[str, Dict[str, object]], extra: Dict[str, Dict[str, object]]) -> None:
    for section, values in extra.items():
        target.setdefault(section, {}).update(values)


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults < config file < subcommand flags < --seed < --set."""
    overrides: Dict[str, Dict[str, object]] = {}
    _merge(overrides, COMMANDS[args.command].config_overrides(args))
    if args.seed is not None:
        _merge(overrides, {section: {"seed": args.seed} for section in SEEDED_SECTIONS})
    _merge(overrides, parse_overrides(args.set))
    return load_run_config(args.config, overrides)


def dispatch(args: argparse.Namespace, config: Optional[RunConfig] = None) -> int:
    config = config or resolve_config(args)
    if args.print_config:
        print(dump_run_config(config), end="")
        return 0
    logger.info(f"Running '{args.command}'")
    return COMMANDS[args.command].run(args, config)


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    return build_parser().parse_args(argv)
