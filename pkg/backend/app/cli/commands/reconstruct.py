import argparse
import logging
from pathlib import Path

from app.cli.common import load_trained, test_trajectories
from app.models.run_config import Constellation, ModelKind, RunConfig, TwinMode
from app.models.twin import TwinConfig
from app.services.sensing import constellation_probes
from app.services.twin import ensemble, measurement_stream, write_estimate

logger = logging.getLogger(__name__)

NAME = "reconstruct"
HELP = "estimate a test trajectory from probe measurements with the window model"


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--constellation", choices=[c.value for c in Constellation], help="twin.constellation")
    parser.add_argument("--mode", choices=[m.value for m in TwinMode], help="twin.mode")
    parser.add_argument("--seeds", type=int, help="twin.n_seeds")
    parser.add_argument("--probe-file", help="twin.probe_file (with --constellation file)")
    parser.add_argument("--param", type=float, help="test trajectory parameter (default: first test trajectory)")
    parser.add_argument("--checkpoint", help="window model checkpoint (default: <run_dir>/paint.ptnt)")
    parser.add_argument("--out", help="output trajectory file (std sidecar written next to it)")


def config_overrides(args) -> dict:
    twin = {}
    for flag, key in (("constellation", "constellation"), ("mode", "mode"), ("seeds", "n_seeds"), ("probe_file", "probe_file")):
        value = getattr(args, flag)
        if value is not None:
            twin[key] = value
    return {"twin": twin} if twin else {}


def run(args, config: RunConfig) -> int:
    tw = config.twin
    model = load_trained(config, ModelKind.PAINT, args.checkpoint)
    traj = test_trajectories(config, args.param)[0]
    probes = constellation_probes(
        tw.constellation, traj.grid_shape, config.system.k_f, tw.grid_probes, tw.vertical_probes, tw.probe_file,
    )
    length = min(tw.horizon, len(traj) - tw.start)
    stream = measurement_stream(traj, probes, tw.start, length, noise_sigma=tw.noise_sigma, seed=tw.seed)
    twin_config = TwinConfig.from_section(tw, h=model.config.history, n=model.config.forecast)
    estimate = ensemble(model, stream, twin_config)

    out = Path(args.out) if args.out else (
        Path(config.training.run_dir) / f"reconstruction_{tw.constellation.value}_{tw.mode.value}.ptrj"
    )
    reference = traj.slice(tw.start)
    mean_path, std_path = write_estimate(out, estimate, reference)
    print(f"frames={len(estimate)} first_index={tw.start + estimate.t_first} forecast={estimate.n_forecast}")
    print(f"mean={mean_path} std={std_path}")
    return 0
