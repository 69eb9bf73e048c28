import argparse
import logging

from app.cli.common import load_manifest
from app.models.run_config import ModelKind, RunConfig
from app.services.training import train_ar, train_paint

logger = logging.getLogger(__name__)

NAME = "train"
HELP = "train the flow-matching window model or the autoregressive baseline"


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--model", choices=[k.value for k in ModelKind], default=ModelKind.PAINT.value)
    parser.add_argument("--steps", type=int, help="training.steps")
    parser.add_argument("--batch", type=int, help="training.batch")
    parser.add_argument("--resume", action="store_true", help="continue from the run directory's checkpoint")


def config_overrides(args) -> dict:
    training = {}
    if args.steps is not None:
        training["steps"] = args.steps
    if args.batch is not None:
        training["batch"] = args.batch
    return {"training": training} if training else {}


def run(args, config: RunConfig) -> int:
    manifest = load_manifest(config)
    trainer = train_paint if ModelKind(args.model) == ModelKind.PAINT else train_ar
    result = trainer(manifest, config, resume=args.resume)
    final = result.losses["loss"].iloc[-1] if len(result.losses) else float("nan")
    print(f"model={args.model} parameters={result.parameter_count} final_loss={final:.6f}")
    print(f"checkpoint={result.checkpoint} loss_log={result.loss_log}")
    return 0
