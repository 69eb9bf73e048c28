"""Test-time neural twin: window-wise state estimation from a measurement stream.

PAINT windows are sampled from measurements alone, so no estimate ever
depends on an earlier estimate. The autoregressive baseline is rolled out
here as well for comparison.
"""
import logging
import time
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from app.autograd.tensor import no_grad
from app.exceptions import DomainError, NonFiniteError, SamplingError, ShapeError
from app.models.run_config import TwinMode
from app.models.sensing import MeasurementWindow, ProbeSet
from app.models.system import Trajectory
from app.models.twin import EnsembleEstimate, ReconstructionResult, TwinConfig
from app.services.dataio import write_trajectory
from app.services.flow_matching import fm_sample
from app.services.networks import ARModel, WindowModel
from app.services.sensing import emit, encode
from app.utils.file_utils import sidecar_path
from app.utils.parallel import map_ordered

logger = logging.getLogger(__name__)


def window_seed(seed: int, t_end: int) -> int:
    """Seed of the window ending at stream index ``t_end``."""
    return int(np.random.SeedSequence([seed, t_end]).generate_state(1)[0])


def measurement_stream(
    traj: Trajectory,
    probes: ProbeSet,
    t_start: int = 0,
    length: Optional[int] = None,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> MeasurementWindow:
    """Normalised probe readings of ``traj`` from ``t_start`` on."""
    length = len(traj) - t_start if length is None else length
    return emit(traj, probes, t_start, length, noise_sigma=noise_sigma, seed=seed, normalized=True)


def window_conditioning(
    stream: MeasurementWindow,
    t_end: int,
    h: int,
    model_history: int,
    forecast: int,
) -> np.ndarray:
    """(model_history + forecast, 3, H, W) encoding of the window ending at ``t_end``.

    The window always spans ``model_history`` measured slots; only the last
    ``h`` of them (and only those inside the stream) carry measurements.
    """
    first = t_end - model_history + 1
    n_probes = len(stream.probe_set)
    values = np.zeros((model_history, n_probes, 2))
    active = []
    for j in range(model_history):
        idx = first + j
        inside = 0 <= idx < len(stream)
        is_active = inside and idx >= t_end - h + 1
        if inside:
            values[j] = stream.values[idx]
        active.append(is_active)
    padded = MeasurementWindow(values=values, probe_set=stream.probe_set,
                               t_start=stream.t_start + first, noise_sigma=stream.noise_sigma)
    return encode(padded, active_frames=active, total_frames=model_history + forecast).channels()


def _window_ends(total: int, h: int, mode: TwinMode) -> List[int]:
    if mode == TwinMode.SLIDING:
        return list(range(h - 1, total))
    ends = list(range(h - 1, total, h))
    if ends[-1] != total - 1:
        ends.append(total - 1)
    return ends


def reconstruct(
    model: WindowModel,
    stream: MeasurementWindow,
    config: TwinConfig,
    seed: Optional[int] = None,
    workers: Optional[int] = None,
) -> ReconstructionResult:
    """Estimate states for a measurement stream.

    ``sequence`` mode samples disjoint windows of ``h`` frames (the last one
    aligned to the stream end) and appends the forecast of the final window;
    ``sliding`` mode samples one window per time ``t`` and keeps frame ``t``.
    """
    seed = config.seed if seed is None else seed
    mc = model.config
    total = len(stream)
    if config.h > mc.history:
        raise DomainError(f"twin history h={config.h} exceeds the model's history {mc.history}")
    if total < config.h:
        raise DomainError(f"insufficient measurements: stream has {total} frames, window needs h={config.h}")
    forecast = min(config.n, mc.forecast) if config.mode == TwinMode.SEQUENCE else 0
    if config.mode == TwinMode.SEQUENCE and config.n > mc.forecast:
        logger.warning(f"requested forecast n={config.n} exceeds the model's {mc.forecast}; using {forecast}")
    ends = _window_ends(total, config.h, config.mode)

    def sample(t_end: int) -> Tuple[np.ndarray, float]:
        started = time.perf_counter()
        cond = window_conditioning(stream, t_end, config.h, mc.history, mc.forecast)
        window = fm_sample(model, cond[None], steps=config.steps, seed=window_seed(seed, t_end))[0]
        return window, time.perf_counter() - started

    sampled = map_ordered(sample, ends, workers)
    frames, covered = [], -1
    last = mc.history - 1                          # slot of t_end inside a window
    for t_end, (window, _) in zip(ends, sampled):
        if config.mode == TwinMode.SLIDING:
            frames.append(window[last:last + 1])
            continue
        new = t_end - covered                      # frames not produced by earlier windows
        frames.append(window[last - new + 1:last + 1])
        covered = t_end
    if forecast:
        frames.append(sampled[-1][0][last + 1:last + 1 + forecast])
    seconds = [s for _, s in sampled]
    logger.info(
        f"Reconstructed {total} measured frames in {len(ends)} {config.mode.value} windows "
        f"(mean {np.mean(seconds):.3f}s per window)"
    )
    t_first = config.h - 1 if config.mode == TwinMode.SLIDING else 0
    return ReconstructionResult(
        frames=np.concatenate(frames), t_first=t_first, n_forecast=forecast, window_seconds=seconds,
    )


def ensemble(
    model: WindowModel,
    stream: MeasurementWindow,
    config: TwinConfig,
    workers: Optional[int] = None,
) -> EnsembleEstimate:
    """Per-pixel mean and std over ``n_seeds`` reconstructions (seeds seed, seed+1, ...)."""
    runs = [reconstruct(model, stream, config, seed=config.seed + i, workers=workers) for i in range(config.n_seeds)]
    members = np.stack([r.frames for r in runs])
    return EnsembleEstimate(
        mean=members.mean(axis=0),
        std=members.std(axis=0),
        t_first=runs[0].t_first,
        n_forecast=runs[0].n_forecast,
        members=members if config.keep_members else None,
    )


class SlidingWindowStepper:
    """The sliding-window sampler seen as a state-to-state map ``x_t = step(x_{t-1}, t)``.

    ``prior`` is accepted so the map can be differentiated like a recurrent
    step; the sampler never reads it.
    """

    def __init__(self, model: WindowModel, stream: MeasurementWindow, config: TwinConfig):
        self.model = model
        self.stream = stream
        self.config = config

    def step(self, prior: Optional[np.ndarray], t: int) -> np.ndarray:
        mc = self.model.config
        if t < self.config.h - 1 or t >= len(self.stream):
            raise DomainError(f"t={t} outside [{self.config.h - 1}, {len(self.stream) - 1}]")
        cond = window_conditioning(self.stream, t, self.config.h, mc.history, mc.forecast)
        window = fm_sample(self.model, cond[None], steps=self.config.steps, seed=window_seed(self.config.seed, t))[0]
        return window[mc.history - 1]


# ---------------------------------------------------------------------------
# Autoregressive baseline
# ---------------------------------------------------------------------------

def ar_step(model: ARModel, prev_states: np.ndarray, conditioning: np.ndarray) -> np.ndarray:
    """One next-frame prediction from (c, 2, H, W) context and (3, H, W) probes of the next frame."""
    c = model.config.context
    if prev_states.shape[0] != c:
        raise ShapeError("ar_step", prev_states.shape, (c,) + prev_states.shape[1:], detail="context length")
    with no_grad():
        return model(prev_states[None], None, conditioning[None]).data[0]


def ar_rollout(
    model: ARModel,
    initial_states: np.ndarray,
    stream: MeasurementWindow,
    T: int,
) -> np.ndarray:
    """``T`` steps, each fed its own previous outputs and the true probes of the
    frame it predicts (stream frame k-1 for step k). Returns (c + T, 2, H, W)."""
    c = model.config.context
    if initial_states.shape[0] != c:
        raise ShapeError("ar_rollout", initial_states.shape, detail=f"need {c} initial frames")
    if T > len(stream):
        raise DomainError(f"rollout of {T} steps needs {T} measured frames, stream has {len(stream)}")
    cond = encode(stream.truncate(0, T)).channels() if T else None
    states = [s for s in np.asarray(initial_states, dtype=np.float64)]
    for k in range(T):
        try:
            nxt = ar_step(model, np.stack(states[-c:]), cond[k])
        except NonFiniteError as e:
            raise SamplingError(k + 1, detail=f"autoregressive rollout: {e}")
        if not np.all(np.isfinite(nxt)):
            raise SamplingError(k + 1, detail="autoregressive rollout produced non-finite state")
        states.append(nxt)
    return np.stack(states)


def ar_estimate(
    model: ARModel,
    traj: Trajectory,
    probes: ProbeSet,
    t_start: int,
    horizon: int,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> np.ndarray:
    """Rollout starting from the true context ending at ``t_start``; returns the
    ``horizon`` predicted frames for indices t_start+1 .. t_start+horizon."""
    c = model.config.context
    if t_start - c + 1 < 0:
        raise DomainError(f"t_start={t_start} leaves no room for {c} context frames")
    context = traj.frames[t_start - c + 1:t_start + 1] / traj.normalization
    stream = measurement_stream(traj, probes, t_start + 1, horizon, noise_sigma, seed)
    return ar_rollout(model, context, stream, horizon)[c:]


# ---------------------------------------------------------------------------
# Output files
# ---------------------------------------------------------------------------

def write_estimate(
    path: Union[str, Path],
    estimate: EnsembleEstimate,
    reference: Trajectory,
) -> Tuple[Path, Path]:
    """Mean field as a trajectory file plus ``<name>.std<ext>`` sidecar, both in physical units."""
    scale = reference.normalization

    def as_traj(frames: np.ndarray) -> Trajectory:
        return Trajectory(
            frames=frames * scale, dt=reference.dt, params=reference.params,
            normalization=scale, meta={"t_first": estimate.t_first},
        )

    mean_path = write_trajectory(path, as_traj(estimate.mean))
    std_path = write_trajectory(sidecar_path(path, "std"), as_traj(estimate.std))
    logger.info(f"Wrote ensemble mean to {mean_path} and std to {std_path}")
    return mean_path, std_path
