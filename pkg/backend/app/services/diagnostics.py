"""Drift diagnostics: Jacobian product series, window-size sweep and the
biased logistic map.

A "step map" is any object with ``step(state, i) -> next_state`` acting on
flat float vectors; it may also provide an exact ``jacobian(state, i)`` or a
vector-Jacobian product ``vjp(state, i, cotangent)``.
"""
import logging
import math
from typing import Optional, Sequence

import numpy as np

from app.autograd.tensor import Tensor, concat, mul, no_grad, sum_
from app.exceptions import DomainError, NonFiniteError
from app.models.report import DivergenceCurve, JacobianSeries, WindowSweepResult
from app.models.run_config import TwinMode
from app.models.sensing import ProbeSet
from app.models.system import Trajectory
from app.models.twin import TwinConfig
from app.services.dynsys import logistic_derivative, logistic_lyapunov, lorenz_step
from app.services.evalkit import mse_over_time
from app.services.networks import ARModel, WindowModel
from app.services.sensing import encode
from app.services.twin import SlidingWindowStepper, measurement_stream, reconstruct

logger = logging.getLogger(__name__)

DENSE_LIMIT = 64
FD_STEP = 1e-6


# ---------------------------------------------------------------------------
# Step maps
# ---------------------------------------------------------------------------

class LogisticStepMap:
    def __init__(self, r: float = 3.8):
        self.r = r

    def step(self, state: np.ndarray, i: int) -> np.ndarray:
        x = np.asarray(state, dtype=np.float64)
        return self.r * x * (1.0 - x)

    def jacobian(self, state: np.ndarray, i: int) -> np.ndarray:
        return np.array([[logistic_derivative(float(np.asarray(state).reshape(-1)[0]), self.r)]])


class LorenzStepMap:
    """Flow map of Lorenz-63 over ``stride`` RK4 steps."""

    def __init__(self, dt: float = 1e-2, stride: int = 1, sigma: float = 10.0, rho: float = 28.0, beta: float = 8.0 / 3.0):
        self.dt, self.stride = dt, stride
        self.args = (sigma, rho, beta)

    def step(self, state: np.ndarray, i: int) -> np.ndarray:
        for _ in range(self.stride):
            state = lorenz_step(state, self.dt, *self.args)
        return state


class ARStepMap:
    """The AR model on its stacked context: (x_{t-c+1}, ..., x_t) -> (x_{t-c+2}, ..., x_{t+1}).

    ``conditioning[i]`` holds the probe encoding of the frame produced by step ``i``.
    """

    def __init__(self, model: ARModel, conditioning: np.ndarray):
        self.model = model
        self.conditioning = conditioning
        cfg = model.config
        self.shape = (cfg.context, 2) + tuple(cfg.grid)

    def _forward(self, context, i: int):
        pred = self.model(context[None], None, self.conditioning[i][None])
        return pred

    def step(self, state: np.ndarray, i: int) -> np.ndarray:
        context = np.asarray(state, dtype=np.float64).reshape(self.shape)
        with no_grad():
            pred = self._forward(context, i).data[0]
        return np.concatenate([context[1:], pred[None]]).reshape(-1)

    def vjp(self, state: np.ndarray, i: int, cotangent: np.ndarray) -> np.ndarray:
        context = Tensor(np.asarray(state, dtype=np.float64).reshape(self.shape), requires_grad=True)
        pred = self._forward(context, i)
        out = concat([context[1:], pred], axis=0)
        sum_(mul(out, cotangent.reshape(self.shape))).backward()
        grad = context.grad.reshape(-1).copy()
        self.model.zero_grad()
        return grad


class PaintStepMap:
    """Sliding-window sampler viewed as ``x_t = step(x_{t-1}, t)``."""

    def __init__(self, stepper: SlidingWindowStepper):
        self.stepper = stepper
        cfg = stepper.model.config
        self.shape = (2,) + tuple(cfg.grid)

    def step(self, state: np.ndarray, i: int) -> np.ndarray:
        return self.stepper.step(np.asarray(state).reshape(self.shape), i).reshape(-1)


# ---------------------------------------------------------------------------
# Jacobians
# ---------------------------------------------------------------------------

def fd_jvp(step_map, state: np.ndarray, i: int, direction: np.ndarray, eps: float = FD_STEP) -> np.ndarray:
    """Central finite-difference Jacobian-vector product."""
    state = np.asarray(state, dtype=np.float64)
    plus = np.asarray(step_map.step(state + eps * direction, i), dtype=np.float64)
    minus = np.asarray(step_map.step(state - eps * direction, i), dtype=np.float64)
    return (plus - minus) / (2.0 * eps)


def dense_jacobian(step_map, state: np.ndarray, i: int) -> np.ndarray:
    if hasattr(step_map, "jacobian"):
        return np.asarray(step_map.jacobian(state, i), dtype=np.float64)
    state = np.asarray(state, dtype=np.float64).reshape(-1)
    n = state.size
    columns = [fd_jvp(step_map, state, i, np.eye(n)[j]).reshape(-1) for j in range(n)]
    return np.stack(columns, axis=1)


def _product_log_norm(step_map, states: Sequence[np.ndarray], first: int, last: int, iterations: int, rng) -> float:
    """log ||J_last ... J_first||_2 by power iteration on P^T P (JVPs forward, VJPs backward).

    Without a ``vjp`` the norm is bounded below by the largest ||P v|| over
    ``iterations`` random unit vectors.
    """
    n = np.asarray(states[first - 1]).size
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    best = 0.0
    for _ in range(iterations):
        w = v
        for i in range(first, last + 1):
            w = fd_jvp(step_map, states[i - 1], i, w).reshape(-1)
        norm = float(np.linalg.norm(w))
        if not math.isfinite(norm):
            raise NonFiniteError("jacobian product", step=last)
        best = max(best, norm)
        if norm == 0.0:
            break
        if hasattr(step_map, "vjp"):
            u = w / norm
            for i in range(last, first - 1, -1):
                u = step_map.vjp(states[i - 1], i, u)
            unorm = np.linalg.norm(u)
            if unorm == 0.0:
                break
            v = u / unorm
        else:
            v = rng.standard_normal(n)
            v /= np.linalg.norm(v)
    return math.log(best) if best > 0 else float("-inf")


def jacobian_series(
    step_map,
    states: Sequence[np.ndarray],
    k: int,
    t: int,
    iterations: int = 8,
    seed: int = 0,
    keep_jacobians: bool = False,
) -> JacobianSeries:
    """J_i = d step(x_{i-1}, i) / d x_{i-1} for i = k+1..t along ``states``, with
    ||J_i||_2 and log ||J_i ... J_{k+1}||_2 for every prefix."""
    if not 0 <= k < t < len(states) + 1:
        raise DomainError(f"need 0 <= k < t <= {len(states)}, got k={k}, t={t}")
    dim = np.asarray(states[k]).size
    dense = dim <= DENSE_LIMIT or hasattr(step_map, "jacobian")
    rng = np.random.default_rng(seed)
    steps, step_norms, log_norms, kept = [], [], [], []
    product = np.eye(dim)
    log_scale = 0.0
    for i in range(k + 1, t + 1):
        if dense:
            jac = dense_jacobian(step_map, states[i - 1], i)
            if not np.all(np.isfinite(jac)):
                raise NonFiniteError("jacobian", step=i)
            step_norms.append(float(np.linalg.norm(jac, 2)))
            product = jac @ product
            scale = float(np.linalg.norm(product, 2))
            if scale == 0.0:
                log_scale = float("-inf")
                product = np.zeros_like(product)
            elif math.isfinite(log_scale):
                log_scale += math.log(scale)
                product = product / scale
            if keep_jacobians:
                kept.append(jac)
        else:
            step_norms.append(math.exp(_product_log_norm(step_map, states, i, i, iterations, rng)))
            log_scale = _product_log_norm(step_map, states, k + 1, i, iterations, rng)
        steps.append(i)
        log_norms.append(log_scale)
    logger.info(f"Jacobian series over steps {k + 1}..{t} ({'dense' if dense else 'matrix-free'}, dim {dim})")
    return JacobianSeries(
        steps=np.array(steps),
        step_norms=np.array(step_norms),
        log_product_norms=np.array(log_norms),
        jacobians=kept if keep_jacobians else None,
    )


def ar_jacobian_series(
    model: ARModel,
    traj: Trajectory,
    probes: ProbeSet,
    k: int,
    t: int,
    iterations: int = 8,
) -> JacobianSeries:
    """Jacobian series of the AR model along the true trajectory (teacher-forced states)."""
    c = model.config.context
    frames = traj.normalized()
    if k - c + 1 < 0 or t >= len(traj):
        raise DomainError(f"need {c - 1} <= k and t < {len(traj)}, got k={k}, t={t}")
    stream = measurement_stream(traj, probes, 0, len(traj))
    cond = encode(stream).channels()
    states = [frames[j - c + 1:j + 1].reshape(-1) if j >= c - 1 else None for j in range(t + 1)]
    return jacobian_series(ARStepMap(model, cond), states, k, t, iterations=iterations)


# ---------------------------------------------------------------------------
# Window sweep
# ---------------------------------------------------------------------------

def window_sweep(
    model: WindowModel,
    traj: Trajectory,
    probes: ProbeSet,
    h_values: Sequence[int],
    start: int,
    horizon: int,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
    steps: int = 20,
    noise_sigma: float = 0.0,
) -> WindowSweepResult:
    """Sliding-window reconstruction MSE of frames start .. start+horizon-1 for each h.

    The model is evaluated with its older measurement slots blanked, which a
    model trained with window dropout has seen.
    """
    h_values = sorted(int(h) for h in h_values)
    if h_values[-1] > model.config.history:
        raise DomainError(f"h={h_values[-1]} exceeds the model's history {model.config.history}")
    if start < h_values[-1] - 1 or start + horizon > len(traj):
        raise DomainError(f"frames [{start}, {start + horizon}) need history {h_values[-1]} inside {len(traj)} frames")
    truth = traj.normalized()[start:start + horizon]
    per_seed = np.zeros((len(h_values), len(seeds)))
    for a, h in enumerate(h_values):
        stream = measurement_stream(traj, probes, start - h + 1, horizon + h - 1, noise_sigma=noise_sigma)
        for b, seed in enumerate(seeds):
            config = TwinConfig(h=h, n=0, mode=TwinMode.SLIDING, steps=steps, seed=int(seed))
            est = reconstruct(model, stream, config).frames
            per_seed[a, b] = float(mse_over_time(truth, est).mean())
        logger.info(f"window sweep h={h}: MSE {per_seed[a].mean():.5f} +- {per_seed[a].std():.5f}")
    return WindowSweepResult(
        h_values=h_values, mse_mean=per_seed.mean(axis=1), mse_std=per_seed.std(axis=1), mse_per_seed=per_seed,
    )


# ---------------------------------------------------------------------------
# Biased logistic map
# ---------------------------------------------------------------------------

def logistic_counterexample(
    eps: float,
    r: float = 3.8,
    n_steps: int = 200,
    n_starts: int = 200,
    threshold: float = 0.1,
    burn_in: int = 100,
    seed: int = 0,
    lyapunov: Optional[float] = None,
) -> DivergenceCurve:
    """Roll x_hat_t = r x_hat (1 - x_hat) + eps against the exact map from shared starts.

    The divergence time of a start is the first t with |x_hat_t - x_t| > threshold.
    """
    if eps < 0:
        raise DomainError(f"eps must be >= 0, got {eps}")
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.05, 0.95, size=n_starts)
    for _ in range(burn_in):
        x = r * x * (1.0 - x)
    x_hat = x.copy()
    errors = np.zeros(n_steps + 1)
    divergence = np.full(n_starts, -1, dtype=int)
    for t in range(1, n_steps + 1):
        x = r * x * (1.0 - x)
        x_hat = np.clip(r * x_hat * (1.0 - x_hat) + eps, 0.0, 1.0)
        gap = np.abs(x_hat - x)
        errors[t] = gap.mean()
        fresh = (divergence < 0) & (gap > threshold)
        divergence[fresh] = t
    lam = logistic_lyapunov(r) if lyapunov is None else lyapunov
    curve = DivergenceCurve(
        eps=eps, r=r, threshold=threshold, mean_abs_error=errors,
        divergence_times=divergence, lyapunov=lam,
    )
    logger.info(
        f"logistic eps={eps:g}: mean divergence time {curve.mean_divergence_time:.2f} "
        f"(predicted {curve.predicted_time:.2f}, lambda={lam:.4f}, diverged {curve.diverged_fraction:.0%})"
    )
    return curve
