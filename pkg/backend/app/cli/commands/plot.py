import argparse
import logging

from app.models.run_config import RunConfig
from app.services.plotting import plot_directory

logger = logging.getLogger(__name__)

NAME = "plot"
HELP = "render report CSVs to SVG line charts"


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--dir", help="directory holding the CSVs (default: eval.out_dir)")
    parser.add_argument("--out-dir", help="where to write the SVGs (default: next to the CSVs)")


def config_overrides(args) -> dict:
    return {}


def run(args, config: RunConfig) -> int:
    written = plot_directory(args.dir or config.eval.out_dir, args.out_dir)
    for path in written:
        print(path)
    return 0
