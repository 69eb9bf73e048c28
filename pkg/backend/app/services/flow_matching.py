"""Conditional flow matching with a data-coupled source.

The source draw x_0 holds the measured probe values at probe pixels of
measured frames and unit Gaussian noise everywhere else; the path is the
straight line x_tau = (1 - tau) x_0 + tau x_1 with target velocity x_1 - x_0.
"""
import logging
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from app.autograd.optim import AdamW
from app.autograd.tensor import Tensor, mean, mul, no_grad, power_int, sub
from app.exceptions import DomainError, NonFiniteError, SamplingError, ShapeError
from app.models.dataset import WindowBatch
from app.models.sensing import MeasurementWindow, ProbeSet
from app.services.sensing import encode

logger = logging.getLogger(__name__)

VelocityModel = Callable[[object, np.ndarray, np.ndarray], Tensor]

DEFAULT_SAMPLING_STEPS = 20


def probe_distance(probes: ProbeSet, grid_shape: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """Euclidean pixel distance from every grid point to its nearest probe."""
    h, w = grid_shape or probes.grid_shape
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    d2 = (rows[..., None] - probes.rows) ** 2 + (cols[..., None] - probes.cols) ** 2
    return np.sqrt(d2.min(axis=-1))


def spatial_weight_map(
    probes: ProbeSet,
    grid_shape: Optional[Tuple[int, int]] = None,
    alpha: float = 9.0,
    sigma: float = 2.0,
) -> np.ndarray:
    """w = 1 + alpha * exp(-d^2 / (2 sigma^2)), d the Euclidean pixel distance to the nearest probe."""
    if alpha < 0 or sigma <= 0:
        raise DomainError(f"need alpha >= 0 and sigma > 0, got alpha={alpha}, sigma={sigma}")
    d = probe_distance(probes, grid_shape)
    return 1.0 + alpha * np.exp(-d ** 2 / (2.0 * sigma ** 2))


def coupled_source(conditioning: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Overwrite ``noise`` with measured values wherever the mask channel is set.

    ``conditioning`` is (..., 3, H, W) mask/value channels, ``noise`` (..., 2, H, W).
    """
    conditioning = np.asarray(conditioning)
    if conditioning.shape[:-3] != noise.shape[:-3] or conditioning.shape[-2:] != noise.shape[-2:]:
        raise ShapeError("coupled-source", conditioning.shape, noise.shape)
    mask = conditioning[..., :1, :, :] > 0.5
    return np.where(mask, conditioning[..., 1:, :, :], noise)


def fm_loss(
    model: VelocityModel,
    batch: WindowBatch,
    tau: np.ndarray,
    noise: np.ndarray,
    weights: Optional[np.ndarray] = None,
) -> Tensor:
    """mean(w * (v_hat(x_tau, tau, m) - (x_1 - x_0))^2) over a batch of windows."""
    x1 = batch.states
    tau = np.asarray(tau, dtype=np.float64).reshape(-1)
    if tau.shape[0] != x1.shape[0]:
        raise ShapeError("fm_loss", tau.shape, x1.shape, detail="one tau per batch element")
    if np.any(tau < 0) or np.any(tau > 1):
        raise DomainError("flow time tau must lie in [0, 1]")
    if noise.shape != x1.shape:
        raise ShapeError("fm_loss", noise.shape, x1.shape, detail="noise vs states")
    weights = batch.weights if weights is None else weights
    if weights is None:
        weights = np.ones((1,) * x1.ndim)
    try:
        np.broadcast_shapes(weights.shape, x1.shape)
    except ValueError:
        raise ShapeError("fm_loss", weights.shape, x1.shape, detail="weights vs states")

    x0 = coupled_source(batch.conditioning, noise)
    t = tau.reshape((-1,) + (1,) * (x1.ndim - 1))
    x_tau = (1.0 - t) * x0 + t * x1
    v_hat = model(x_tau, tau, batch.conditioning)
    if v_hat.shape != x1.shape:
        raise ShapeError("fm_loss", v_hat.shape, x1.shape, detail="model output vs states")
    residual = sub(v_hat, x1 - x0)
    return mean(mul(power_int(residual, 2), weights))


def fm_sample(
    model: VelocityModel,
    conditioning: np.ndarray,
    steps: int = DEFAULT_SAMPLING_STEPS,
    seed: int = 0,
    state_channels: int = 2,
) -> np.ndarray:
    """Euler-integrate dx/dtau = v_hat from the data-coupled source at tau=0 to tau=1.

    ``conditioning`` is (B, T, 3, H, W). Reads nothing but the conditioning,
    the seed and the model's parameters.
    """
    if steps < 1:
        raise DomainError(f"steps must be >= 1, got {steps}")
    conditioning = np.asarray(conditioning, dtype=np.float64)
    shape = conditioning.shape[:-3] + (state_channels,) + conditioning.shape[-2:]
    rng = np.random.default_rng(seed)
    x = coupled_source(conditioning, rng.standard_normal(shape))
    batch = shape[0]
    dt = 1.0 / steps
    with no_grad():
        for i in range(steps):
            tau = np.full(batch, i * dt)
            try:
                v = model(x, tau, conditioning).data
            except NonFiniteError as e:
                raise SamplingError(i, detail=str(e))
            x = x + dt * v
            if not np.all(np.isfinite(x)):
                raise SamplingError(i)
    return x


def fm_sample_window(
    model: VelocityModel,
    measurements: MeasurementWindow,
    forecast: int = 0,
    steps: int = DEFAULT_SAMPLING_STEPS,
    seed: int = 0,
    active_history: Optional[int] = None,
) -> np.ndarray:
    """Sample one state window (h + forecast, 2, H, W) for a measurement window of h frames."""
    h = len(measurements)
    active = None
    if active_history is not None:
        active = [i >= h - active_history for i in range(h)]
    cond = encode(measurements, active_frames=active, total_frames=h + forecast).channels()
    return fm_sample(model, cond[None], steps=steps, seed=seed)[0]


# ---------------------------------------------------------------------------
# Gaussian toy: flow matching on a 2D point cloud with a closed-form target
# ---------------------------------------------------------------------------

def gaussian_target(dim: int = 2) -> Tuple[np.ndarray, np.ndarray]:
    mu = np.array([2.0, -1.0])[:dim]
    cov = np.array([[1.0, 0.6], [0.6, 0.5]])[:dim, :dim]
    return mu, cov


def _toy_batch(x1: np.ndarray) -> WindowBatch:
    batch, dim = x1.shape
    return WindowBatch(
        states=x1.reshape(batch, 1, dim, 1, 1),
        conditioning=np.zeros((batch, 1, 3, 1, 1)),
        weights=np.ones((1, 1, 1, 1, 1)),
        params=np.zeros(batch),
    )


def train_gaussian_toy(
    model,
    mu: np.ndarray,
    cov: np.ndarray,
    steps: int = 3000,
    batch: int = 256,
    lr: float = 2e-3,
    seed: int = 0,
    log_every: int = 500,
) -> Sequence[float]:
    """Fit ``model`` (e.g. ToyVelocityMLP) to N(mu, cov); returns the loss curve."""
    rng = np.random.default_rng(seed)
    chol = np.linalg.cholesky(cov)
    optim = AdamW(model.parameters(), lr=lr, weight_decay=0.0)
    losses = []
    for step in range(steps):
        x1 = mu + rng.standard_normal((batch, len(mu))) @ chol.T
        wb = _toy_batch(x1)
        loss = fm_loss(model, wb, rng.uniform(size=batch), rng.standard_normal(wb.states.shape))
        optim.zero_grad()
        loss.backward()
        optim.step()
        losses.append(loss.item())
        if (step + 1) % log_every == 0:
            logger.info(f"toy step {step + 1}/{steps}: loss {np.mean(losses[-log_every:]):.4f}")
    return losses


def sample_gaussian_toy(model, n: int, dim: int = 2, steps: int = DEFAULT_SAMPLING_STEPS, seed: int = 0) -> np.ndarray:
    samples = fm_sample(model, np.zeros((n, 1, 3, 1, 1)), steps=steps, seed=seed, state_channels=dim)
    return samples.reshape(n, dim)
