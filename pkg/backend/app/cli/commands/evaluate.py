import argparse
import logging
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd

from app.cli.common import load_trained, report_dir, test_trajectories
from app.models.report import MetricsRow
from app.models.run_config import Constellation, ModelKind, RunConfig, TwinMode
from app.models.system import Trajectory
from app.models.twin import TwinConfig
from app.services.evalkit import (
    drift_report,
    flow_stats,
    ke_histogram,
    write_metrics,
    write_mse_over_time,
    write_spectrum,
)
from app.services.flow_matching import probe_distance
from app.services.plotting import plot_directory
from app.services.sensing import constellation_probes
from app.services.twin import ar_estimate, ensemble, measurement_stream

logger = logging.getLogger(__name__)

NAME = "evaluate"
HELP = "compare both models on the test trajectories and write metric CSVs and charts"

EVAL_CONSTELLATIONS = (Constellation.GRID, Constellation.VERTICAL)


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--models", default="paint,ar", help="comma-separated subset of paint,ar")
    parser.add_argument("--seeds", type=int, help="twin.n_seeds for the uncertainty ensemble")
    parser.add_argument("--mode", choices=[m.value for m in TwinMode], help="twin.mode for the window model")
    parser.add_argument("--both-modes", action="store_true", help="also report the other window-model mode")
    parser.add_argument("--paint-checkpoint")
    parser.add_argument("--ar-checkpoint")
    parser.add_argument("--no-plots", action="store_true")


def config_overrides(args) -> dict:
    twin = {}
    if args.seeds is not None:
        twin["n_seeds"] = args.seeds
    if args.mode is not None:
        twin["mode"] = args.mode
    return {"twin": twin} if twin else {}


def _paint_frames(model, traj: Trajectory, probes, start: int, horizon: int, mode: TwinMode, config: RunConfig
                  ) -> Tuple[np.ndarray, np.ndarray]:
    """First ensemble member and ensemble std for frames start .. start+horizon-1."""
    tw = config.twin
    h = model.config.history
    first = start - h + 1 if mode == TwinMode.SLIDING else start
    length = horizon + h - 1 if mode == TwinMode.SLIDING else horizon
    stream = measurement_stream(traj, probes, first, length, noise_sigma=tw.noise_sigma, seed=tw.seed)
    twin_config = TwinConfig(h=h, n=0, mode=mode, n_seeds=tw.n_seeds, steps=tw.steps, seed=tw.seed, keep_members=True)
    estimate = ensemble(model, stream, twin_config)
    return estimate.members[0], estimate.std


def _uncertainty_row(std: np.ndarray, probes, label: str) -> dict:
    distance = probe_distance(probes, std.shape[-2:])
    far = distance >= np.quantile(distance, 0.9)
    per_pixel = std.mean(axis=(0, 1))
    return {
        "estimate": label,
        "std_probe": float(per_pixel[probes.rows, probes.cols].mean()),
        "std_far": float(per_pixel[far].mean()),
    }


def run(args, config: RunConfig) -> int:
    tw = config.twin
    kinds = [ModelKind(k.strip()) for k in args.models.split(",") if k.strip()]
    models = {
        ModelKind.PAINT: load_trained(config, ModelKind.PAINT, args.paint_checkpoint) if ModelKind.PAINT in kinds else None,
        ModelKind.AR: load_trained(config, ModelKind.AR, args.ar_checkpoint) if ModelKind.AR in kinds else None,
    }
    modes = [tw.mode]
    if args.both_modes:
        modes.append(TwinMode.SEQUENCE if tw.mode == TwinMode.SLIDING else TwinMode.SLIDING)

    needed = [tw.start]
    if models[ModelKind.PAINT] is not None:
        needed.append(models[ModelKind.PAINT].config.history - 1)
    if models[ModelKind.AR] is not None:
        needed.append(models[ModelKind.AR].config.context)
    start = max(needed)

    rows: List[MetricsRow] = []
    series: Dict[str, np.ndarray] = {}
    spectra, histogram_frames, uncertainty = {}, {}, []
    true_stats_first = None
    for traj_index, traj in enumerate(test_trajectories(config)):
        param = traj.params.conditioning_value
        horizon = min(tw.horizon, len(traj) - start)
        truth = traj.normalized()[start:start + horizon]
        true_stats = flow_stats(truth)
        for constellation in EVAL_CONSTELLATIONS:
            probes = constellation_probes(constellation, traj.grid_shape, config.system.k_f,
                                          tw.grid_probes, tw.vertical_probes, tw.probe_file)
            estimates: List[Tuple[str, str, np.ndarray]] = []
            if models[ModelKind.PAINT] is not None:
                for mode in modes:
                    frames, std = _paint_frames(models[ModelKind.PAINT], traj, probes, start, horizon, mode, config)
                    estimates.append(("paint", mode.value, frames))
                    if tw.n_seeds > 1:
                        uncertainty.append({"param": param, "constellation": constellation.value,
                                            **_uncertainty_row(std, probes, f"paint_{mode.value}")})
            if models[ModelKind.AR] is not None:
                frames = ar_estimate(models[ModelKind.AR], traj, probes, start - 1, horizon,
                                     noise_sigma=tw.noise_sigma, seed=tw.seed)
                estimates.append(("ar", "rollout", frames))

            for model_name, mode_name, frames in estimates:
                est_stats = flow_stats(frames)
                report = drift_report(truth, frames, spectra=(true_stats, est_stats))
                rows.append(MetricsRow(model=model_name, param=param, constellation=constellation.value,
                                       mode=mode_name, **report.as_row()))
                label = f"{model_name}_{mode_name}_{constellation.value}_{param:.3f}"
                series[label] = report.mse_over_time
                if traj_index == 0 and constellation == Constellation.GRID:
                    true_stats_first = true_stats
                    spectra[f"{model_name}_{mode_name}"] = est_stats
                    histogram_frames[f"{model_name}_{mode_name}"] = frames
                logger.info(f"{label}: MSE {report.mse_trajectory:.5f}, slope {report.slope:.3e}")
        if traj_index == 0:
            histogram = ke_histogram(truth, histogram_frames, bins=config.eval.histogram_bins)

    out = report_dir(config)
    write_metrics(rows, out / "metrics.csv")
    write_mse_over_time(series, out / "mse_over_time.csv")
    if true_stats_first is not None:
        write_spectrum(true_stats_first, spectra, out / "spectrum.csv")
        histogram.to_csv(out / "ke_histogram.csv", index=False)
    if uncertainty:
        pd.DataFrame(uncertainty).to_csv(out / "uncertainty.csv", index=False)
    if not args.no_plots:
        plot_directory(out)
    print(pd.DataFrame([r.model_dump() for r in rows]).to_string(index=False))
    return 0
