"""Physical-coherence metrics, drift reports and their CSV files."""
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from app.exceptions import DomainError, ShapeError
from app.models.report import DriftReport, FlowStats, MetricsRow
from app.models.system import Trajectory
from app.utils.fft import fft2, wavenumbers
from app.utils.file_utils import ensure_dir

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SPECTRUM_NOTE = "# rmse_spectrum = RMSE over wavenumber shells of the time-mean spectra E(k)"


def _frames(data: Union[Trajectory, np.ndarray]) -> np.ndarray:
    frames = data.frames if isinstance(data, Trajectory) else np.asarray(data, dtype=np.float64)
    if frames.ndim != 4 or frames.shape[1] != 2:
        raise ShapeError("flow-metrics", frames.shape, detail="expected (T, 2, H, W) frames")
    return frames


def shell_index(h: int, w: int) -> np.ndarray:
    ky, kx = wavenumbers(h, w)
    return np.rint(np.sqrt(ky ** 2 + kx ** 2)).astype(int)


def energy_spectrum(frames: np.ndarray) -> np.ndarray:
    """Per-frame E(k): 1/2 (|u_hat|^2 + |v_hat|^2) / (HW)^2 summed over integer shells round(|k|).

    Returns (T, K) with K = max shell + 1; summing over k gives the spatial
    mean kinetic energy of each frame.
    """
    frames = _frames(frames)
    t, _, h, w = frames.shape
    shells = shell_index(h, w).reshape(-1)
    density = 0.5 * (np.abs(fft2(frames[:, 0])) ** 2 + np.abs(fft2(frames[:, 1])) ** 2) / float(h * w) ** 2
    density = density.reshape(t, -1)
    n_shells = shells.max() + 1
    return np.stack([np.bincount(shells, weights=density[i], minlength=n_shells) for i in range(t)])


def flow_stats(data: Union[Trajectory, np.ndarray]) -> FlowStats:
    frames = _frames(data)
    if frames.shape[0] < 2:
        raise DomainError(f"flow statistics need >= 2 frames for a variance, got {frames.shape[0]}")
    time_mean = frames.mean(axis=0)
    time_variance = ((frames - time_mean) ** 2).mean(axis=0)
    spectrum = energy_spectrum(frames).mean(axis=0)
    return FlowStats(
        time_mean=time_mean,
        time_variance=time_variance,
        spectrum=spectrum,
        wavenumbers=np.arange(spectrum.shape[0]),
    )


def mse_over_time(true_frames: np.ndarray, est_frames: np.ndarray) -> np.ndarray:
    true_frames, est_frames = np.asarray(true_frames), np.asarray(est_frames)
    if true_frames.shape != est_frames.shape:
        raise ShapeError("drift_report", true_frames.shape, est_frames.shape)
    axes = tuple(range(1, true_frames.ndim))
    return ((est_frames - true_frames) ** 2).mean(axis=axes)


def drift_report(
    true_traj: Union[Trajectory, np.ndarray],
    est_traj: Union[Trajectory, np.ndarray],
    spectra: Optional[Sequence[FlowStats]] = None,
) -> DriftReport:
    """Table-style metrics plus the MSE(t) series and its least-squares slope.

    ``spectra`` may pass precomputed (true, estimated) FlowStats.
    """
    true_frames, est_frames = _frames(true_traj), _frames(est_traj)
    series = mse_over_time(true_frames, est_frames)
    true_stats, est_stats = spectra if spectra is not None else (flow_stats(true_frames), flow_stats(est_frames))
    slope = float(np.polyfit(np.arange(len(series)), series, 1)[0]) if len(series) > 1 else 0.0
    k = min(len(true_stats.spectrum), len(est_stats.spectrum))
    return DriftReport(
        mse_over_time=series,
        slope=slope,
        mae_mean=float(np.mean(np.abs(est_stats.time_mean - true_stats.time_mean))),
        mae_variance=float(np.mean(np.abs(est_stats.time_variance - true_stats.time_variance))),
        mse_trajectory=float(series.mean()),
        rmse_spectrum=float(np.sqrt(np.mean((est_stats.spectrum[:k] - true_stats.spectrum[:k]) ** 2))),
    )


def ke_histogram(
    true_frames: np.ndarray,
    est_frames: Dict[str, np.ndarray],
    bins: int = 50,
) -> pd.DataFrame:
    """Histogram of pointwise kinetic energy 1/2 (u^2 + v^2), shared bins for all series."""
    ke_true = 0.5 * (_frames(true_frames) ** 2).sum(axis=1).reshape(-1)
    ke_est = {name: 0.5 * (_frames(f) ** 2).sum(axis=1).reshape(-1) for name, f in est_frames.items()}
    upper = max([ke_true.max()] + [v.max() for v in ke_est.values()])
    edges = np.linspace(0.0, upper if upper > 0 else 1.0, bins + 1)
    frame = pd.DataFrame({"bin_left": edges[:-1], "bin_right": edges[1:]})
    frame["true"] = np.histogram(ke_true, bins=edges, density=True)[0]
    for name, values in ke_est.items():
        frame[name] = np.histogram(values, bins=edges, density=True)[0]
    return frame


# ---------------------------------------------------------------------------
# CSV files
# ---------------------------------------------------------------------------

def write_metrics(rows: List[MetricsRow], path: PathLike) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    with open(path, "w") as fh:
        fh.write(SPECTRUM_NOTE + "\n")
        pd.DataFrame([r.model_dump() for r in rows], columns=list(MetricsRow.model_fields)).to_csv(fh, index=False)
    logger.info(f"Wrote {len(rows)} metric rows to {path}")
    return path


def read_metrics(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def write_mse_over_time(series: Dict[str, np.ndarray], path: PathLike) -> Path:
    """One column per labelled estimate, indexed by frame ``t``."""
    length = max(len(s) for s in series.values())
    frame = pd.DataFrame({"t": np.arange(length)})
    for label, values in series.items():
        column = np.full(length, np.nan)
        column[:len(values)] = values
        frame[label] = column
    path = Path(path)
    ensure_dir(path.parent)
    frame.to_csv(path, index=False)
    return path


def write_spectrum(true_stats: FlowStats, est_stats: Dict[str, FlowStats], path: PathLike) -> Path:
    """Columns ``k, E_true`` and one ``E_<label>`` per estimate."""
    k = len(true_stats.spectrum)
    frame = pd.DataFrame({"k": np.arange(k), "E_true": true_stats.spectrum})
    for label, stats in est_stats.items():
        frame[f"E_{label}"] = stats.spectrum[:k]
    path = Path(path)
    ensure_dir(path.parent)
    with open(path, "w") as fh:
        fh.write(SPECTRUM_NOTE + "\n")
        frame.to_csv(fh, index=False)
    return path
