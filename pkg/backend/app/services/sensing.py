"""Probe constellations, the emission model and the mask/value encoding."""
import logging
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from app.exceptions import DomainError, FormatError
from app.models.run_config import Constellation
from app.models.sensing import MaskedWindowEncoding, MeasurementWindow, ProbeKind, ProbeSet
from app.models.system import Trajectory

logger = logging.getLogger(__name__)


def inlet_position(grid_shape: Tuple[int, int], k_f: int = 4) -> Tuple[int, int]:
    """Pixel of maximal forcing ``sin(k_f y) = 1`` on the centre column."""
    h, w = grid_shape
    row = int(round(h / (4.0 * k_f))) % h
    return row, w // 2


def _even_positions(n: int, size: int) -> np.ndarray:
    return np.floor((np.arange(n) + 0.5) * size / n).astype(int)


def sample_probes(
    kind: Union[ProbeKind, str],
    count_or_shape: Union[int, Tuple[int, int]],
    seed: int = 0,
    grid_shape: Tuple[int, int] = (32, 32),
    k_f: int = 4,
    include_inlet: Optional[bool] = None,
) -> ProbeSet:
    """Build a probe constellation.

    ``random`` draws ``count`` unique pixels (the training mode, no inlet probe by
    default); ``grid`` lays an evenly spaced (rows, cols) lattice; ``vertical``
    places ``count`` probes on the column at 3/4 of the width. Inference
    constellations add the inlet-analog probe unless told otherwise.
    """
    kind = ProbeKind(kind)
    h, w = grid_shape
    if include_inlet is None:
        include_inlet = kind != ProbeKind.RANDOM

    if kind == ProbeKind.RANDOM:
        count = int(count_or_shape)
        if count < 1 or count > h * w:
            raise DomainError(f"cannot place {count} probes on a {h}x{w} grid")
        rng = np.random.default_rng(seed)
        flat = rng.choice(h * w, size=count, replace=False)
        positions = [(int(i // w), int(i % w)) for i in flat]
    elif kind == ProbeKind.GRID:
        if isinstance(count_or_shape, int):
            n_rows = n_cols = count_or_shape
        else:
            n_rows, n_cols = count_or_shape
        if n_rows > h or n_cols > w or n_rows < 1 or n_cols < 1:
            raise DomainError(f"a {n_rows}x{n_cols} probe lattice does not fit a {h}x{w} grid")
        rows = _even_positions(n_rows, h)
        cols = _even_positions(n_cols, w)
        positions = [(int(r), int(c)) for r in rows for c in cols]
    else:
        count = int(count_or_shape)
        if count < 1 or count > h:
            raise DomainError(f"cannot place {count} vertical probes on {h} rows")
        col = (3 * w) // 4
        positions = [(int(r), col) for r in _even_positions(count, h)]

    if include_inlet:
        inlet = inlet_position(grid_shape, k_f)
        if inlet not in positions:
            positions.append(inlet)
    logger.debug(f"Sampled {len(positions)} {kind.value} probes on {h}x{w}")
    return ProbeSet(positions=positions, grid_shape=(h, w), includes_inlet_analog=include_inlet)


def emit(
    traj: Trajectory,
    probes: ProbeSet,
    t_start: int,
    window_length: int,
    noise_sigma: float = 0.0,
    seed: int = 0,
    normalized: bool = False,
) -> MeasurementWindow:
    """Read the trajectory at the probe pixels, optionally adding Gaussian noise."""
    if window_length < 1:
        raise DomainError(f"window_length must be >= 1, got {window_length}")
    if t_start < 0 or t_start + window_length > len(traj):
        raise DomainError(
            f"window [{t_start}, {t_start + window_length}) exceeds trajectory of {len(traj)} frames"
        )
    if tuple(traj.grid_shape) != tuple(probes.grid_shape):
        raise DomainError(f"probe grid {probes.grid_shape} does not match trajectory grid {traj.grid_shape}")
    frames = traj.frames[t_start:t_start + window_length]
    if normalized:
        frames = frames / traj.normalization
    # (L, 2, P) -> (L, P, 2)
    values = frames[:, :, probes.rows, probes.cols].transpose(0, 2, 1).copy()
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        values = values + rng.normal(scale=noise_sigma, size=values.shape)
    return MeasurementWindow(values=values, probe_set=probes, t_start=t_start, noise_sigma=noise_sigma)


def encode(
    mw: MeasurementWindow,
    grid_shape: Optional[Tuple[int, int]] = None,
    active_frames: Optional[Sequence[bool]] = None,
    total_frames: Optional[int] = None,
) -> MaskedWindowEncoding:
    """Scatter probe readings onto mask/value channels.

    ``total_frames`` pads the encoding with empty frames after the measured ones
    (forecast frames carry no measurements); ``active_frames`` blanks measured
    frames whose flag is False (window truncation).
    """
    h, w = grid_shape or mw.probe_set.grid_shape
    rows, cols = mw.probe_set.rows, mw.probe_set.cols
    if rows.max() >= h or cols.max() >= w:
        raise DomainError(f"probe positions exceed grid {h}x{w}")
    n_measured = len(mw)
    total = n_measured if total_frames is None else total_frames
    if total < n_measured:
        raise DomainError(f"total_frames={total} is shorter than the {n_measured} measured frames")
    mask = np.zeros((total, 1, h, w))
    values = np.zeros((total, 2, h, w))
    for i in range(n_measured):
        if active_frames is not None and not active_frames[i]:
            continue
        mask[i, 0, rows, cols] = 1.0
        values[i, :, rows, cols] = mw.values[i]
    return MaskedWindowEncoding(mask=mask, values=values)


def decode(encoding: MaskedWindowEncoding, probes: ProbeSet) -> np.ndarray:
    """Read the value channels back at the probe pixels: (L, P, 2)."""
    return encoding.values[:, :, probes.rows, probes.cols].transpose(0, 2, 1).copy()


def write_probes(probes: ProbeSet, path: Union[str, Path]) -> None:
    h, w = probes.grid_shape
    lines = [f"# grid {h}x{w}"]
    if probes.includes_inlet_analog:
        lines.append("# inlet_analog true")
    lines.extend(f"{r},{c}" for r, c in probes.positions)
    Path(path).write_text("\n".join(lines) + "\n")


def read_probes(path: Union[str, Path]) -> ProbeSet:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("# grid "):
        raise FormatError(f"{path}: first line must be '# grid HxW'")
    try:
        h, w = (int(v) for v in text[0][len("# grid "):].strip().split("x"))
    except ValueError:
        raise FormatError(f"{path}: malformed grid header {text[0]!r}")
    inlet = False
    positions = []
    for lineno, line in enumerate(text[1:], start=2):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line.replace(" ", "") == "#inlet_analogtrue":
                inlet = True
            continue
        try:
            r, c = (int(v) for v in line.split(","))
        except ValueError:
            raise FormatError(f"{path}:{lineno}: expected 'row,col', got {line!r}")
        positions.append((r, c))
    try:
        return ProbeSet(positions=positions, grid_shape=(h, w), includes_inlet_analog=inlet)
    except ValueError as e:
        raise FormatError(f"{path}: {e}")


def constellation_probes(
    constellation: Constellation,
    grid_shape: Tuple[int, int],
    k_f: int = 4,
    grid_probes: int = 10,
    vertical_probes: int = 25,
    probe_file: str = "",
) -> ProbeSet:
    """Inference constellations: ``grid`` n x n lattice, ``vertical`` line, or a probe file."""
    constellation = Constellation(constellation)
    if constellation == Constellation.GRID:
        return sample_probes(ProbeKind.GRID, grid_probes, grid_shape=grid_shape, k_f=k_f)
    if constellation == Constellation.VERTICAL:
        return sample_probes(ProbeKind.VERTICAL, vertical_probes, grid_shape=grid_shape, k_f=k_f)
    if not probe_file:
        raise DomainError("constellation 'file' needs twin.probe_file")
    probes = read_probes(probe_file)
    if tuple(probes.grid_shape) != tuple(grid_shape):
        raise DomainError(f"{probe_file}: probes are for grid {probes.grid_shape}, data is {tuple(grid_shape)}")
    return probes
