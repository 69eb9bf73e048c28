"""SVG line charts of the report CSVs."""
import logging
from pathlib import Path
from typing import List, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from app.exceptions import FormatError  # noqa: E402
from app.utils.file_utils import ensure_dir  # noqa: E402

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# csv stem -> (x column, y label, log-x, log-y)
CHARTS = {
    "mse_over_time": ("t", "MSE", False, True),
    "spectrum": ("k", "E(k)", True, True),
    "jacobian_series": ("step", "log ||prod J||", False, False),
    "divergence": ("t", "mean |x_hat - x|", False, True),
    "window_sweep": ("h", "MSE", True, False),
    "ke_histogram": ("bin_left", "density", False, False),
    "paint_loss": ("step", "loss", False, True),
    "ar_loss": ("step", "loss", False, True),
}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)
    logger.info(f"Wrote {path}")
    return path


def plot_csv(csv_path: PathLike, out_dir: PathLike) -> Path:
    """Render one known report CSV as ``<out_dir>/<stem>.svg``."""
    csv_path = Path(csv_path)
    stem = csv_path.stem
    if stem not in CHARTS:
        raise FormatError(f"no chart is defined for {csv_path.name}; known: {sorted(CHARTS)}")
    x_col, y_label, log_x, log_y = CHARTS[stem]
    frame = pd.read_csv(csv_path, comment="#")
    if x_col not in frame.columns:
        raise FormatError(f"{csv_path}: expected a '{x_col}' column, got {list(frame.columns)}")

    fig, ax = plt.subplots(figsize=(7, 4))
    std_cols = {c for c in frame.columns if c.endswith("_std")}
    for column in frame.columns:
        if column == x_col or column in std_cols or column == "bin_right":
            continue
        y = frame[column].to_numpy(dtype=float)
        y = np.where(np.isfinite(y), y, np.nan)
        if log_y:
            y = np.where(y > 0, y, np.nan)
        if f"{column}_std" in std_cols:
            ax.errorbar(frame[x_col], y, yerr=frame[f"{column}_std"], marker="o", capsize=3, label=column)
        else:
            ax.plot(frame[x_col], y, label=column)
    if log_x:
        ax.set_xscale("log")
    if log_y:
        ax.set_yscale("log")
    ax.set_xlabel(x_col)
    ax.set_ylabel(y_label)
    ax.set_title(stem.replace("_", " "))
    ax.grid(True, which="both", linestyle="--", linewidth=0.5)
    ax.legend()
    return _save(fig, ensure_dir(out_dir) / f"{stem}.svg")


def plot_directory(report_dir: PathLike, out_dir: PathLike = None) -> List[Path]:
    """Render every known CSV found in ``report_dir``."""
    report_dir = Path(report_dir)
    out_dir = report_dir if out_dir is None else Path(out_dir)
    written = [plot_csv(p, out_dir) for p in sorted(report_dir.glob("*.csv")) if p.stem in CHARTS]
    if not written:
        logger.warning(f"No plottable CSVs in {report_dir}")
    return written
