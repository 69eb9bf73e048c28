import argparse
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from app.cli.common import manifest_path
from app.exceptions import NumericalError
from app.models.run_config import RunConfig, SystemKind
from app.models.system import SystemParams
from app.services.dataio import make_splits, write_manifest, write_trajectory
from app.services.dynsys import simulate
from app.utils.file_utils import ensure_dir, file_sha256
from app.utils.parallel import map_ordered

logger = logging.getLogger(__name__)

NAME = "simulate"
HELP = "generate ground-truth trajectories and the train/val/test manifest"


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--frames", type=int, help="stored frames per trajectory (system.frames)")
    parser.add_argument("--system", choices=[k.value for k in SystemKind], help="system.kind")


def config_overrides(args) -> dict:
    system = {}
    if args.frames is not None:
        system["frames"] = args.frames
    if args.system is not None:
        system["kind"] = args.system
    return {"system": system} if system else {}


def _system_params(config: RunConfig, amplitude: float = 1.0, seed: int = 0) -> SystemParams:
    s = config.system
    return SystemParams(
        kind=s.kind, r=s.r, sigma=s.sigma, rho=s.rho, beta=s.beta, nu=s.nu, k_f=s.k_f,
        amplitude=amplitude, drag=s.drag, grid=s.grid, dt_solver=s.dt_solver, seed=seed,
    )


def run(args, config: RunConfig) -> int:
    s, d = config.system, config.dataset
    data_dir = ensure_dir(d.data_dir)

    if s.kind != SystemKind.KOLMOGOROV:
        # Scalar/vector systems are cheap: one CSV of states, no manifest
        traj = simulate(_system_params(config, seed=s.seed), s.frames, burn_in=s.burn_in, stride=s.stride)
        columns = ["x"] if traj.frames.shape[1] == 1 else ["x", "y", "z"]
        frame = pd.DataFrame(traj.frames, columns=columns)
        frame.insert(0, "t", np.arange(len(traj)) * traj.dt)
        out = data_dir / f"{s.kind.value}.csv"
        frame.to_csv(out, index=False)
        logger.info(f"Wrote {len(traj)} {s.kind.value} states to {out}")
        return 0

    amplitudes = np.linspace(d.amplitude_min, d.amplitude_max, d.n_params)
    manifest = make_splits(amplitudes, seed=d.split_seed)

    def generate(index: int) -> Path:
        entry = manifest.entries[index]
        params = _system_params(config, amplitude=entry.param, seed=s.seed + index)
        try:
            traj = simulate(params, s.frames, burn_in=s.burn_in, stride=s.stride)
        except NumericalError as e:
            logger.error(f"Trajectory {index} (A={entry.param:.4f}) failed", exc_info=True)
            raise NumericalError(f"trajectory {index} (A={entry.param:.4f}): {e}") from e
        return write_trajectory(data_dir / entry.path, traj)

    written = map_ordered(generate, range(len(manifest.entries)))
    write_manifest(manifest, manifest_path(config))
    for path in written:
        logger.info(f"{path.name} sha256={file_sha256(path)[:16]}")
    counts = {split: len(manifest.by_split(split)) for split in ("train", "val", "test")}
    logger.info(f"Wrote {len(written)} trajectories and {manifest_path(config)} (split {counts})")
    return 0
