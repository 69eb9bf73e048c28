from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field


@dataclass
class FlowStats:
    """Time statistics of a field trajectory: mean (2, H, W), variance (2, H, W), shell spectrum E(k)."""

    time_mean: np.ndarray
    time_variance: np.ndarray
    spectrum: np.ndarray
    wavenumbers: np.ndarray


@dataclass
class DriftReport:
    mse_over_time: np.ndarray
    slope: float
    mae_mean: float
    mae_variance: float
    mse_trajectory: float
    rmse_spectrum: float

    def as_row(self) -> dict:
        return {
            "mae_mean": self.mae_mean,
            "mae_variance": self.mae_variance,
            "mse_trajectory": self.mse_trajectory,
            "rmse_spectrum": self.rmse_spectrum,
            "mse_slope": self.slope,
        }


class MetricsRow(BaseModel):
    """One row of ``metrics.csv``: a model evaluated on one test trajectory and constellation."""

    model: str
    param: float
    constellation: str
    mode: str
    mae_mean: float = Field(ge=0)
    mae_variance: float = Field(ge=0)
    mse_trajectory: float = Field(ge=0)
    rmse_spectrum: float = Field(ge=0)
    mse_slope: float


@dataclass
class JacobianSeries:
    """Per-step Jacobian norms and log spectral norms of their prefix products."""

    steps: np.ndarray                    # i = k+1 .. t
    step_norms: np.ndarray               # ||J_i||_2
    log_product_norms: np.ndarray        # log ||J_i ... J_{k+1}||_2
    jacobians: Optional[List[np.ndarray]] = None

    @property
    def growth_rate(self) -> float:
        """Least-squares slope of the log product norm, a finite-time Lyapunov estimate."""
        if len(self.steps) < 2:
            return float("nan")
        finite = np.isfinite(self.log_product_norms)
        if finite.sum() < 2:
            return float("-inf")
        return float(np.polyfit(self.steps[finite], self.log_product_norms[finite], 1)[0])


@dataclass
class DivergenceCurve:
    """Biased vs true logistic map rollouts from shared starts."""

    eps: float
    r: float
    threshold: float
    mean_abs_error: np.ndarray           # mean |x_hat_t - x_t| over starts, per t
    divergence_times: np.ndarray         # per start; -1 if never exceeded
    lyapunov: float

    @property
    def diverged_fraction(self) -> float:
        return float(np.mean(self.divergence_times >= 0))

    @property
    def mean_divergence_time(self) -> float:
        hit = self.divergence_times[self.divergence_times >= 0]
        return float(hit.mean()) if hit.size else float("inf")

    @property
    def predicted_time(self) -> float:
        if self.eps <= 0 or self.lyapunov <= 0:
            return float("inf")
        return float(np.log(self.threshold / self.eps) / self.lyapunov)

    @property
    def growth_rate(self) -> float:
        """Slope of log mean error before saturation."""
        err = self.mean_abs_error
        stop = int(np.argmax(err > self.threshold)) if np.any(err > self.threshold) else len(err)
        t = np.arange(stop)
        valid = err[:stop] > 0
        if valid.sum() < 2:
            return 0.0
        return float(np.polyfit(t[valid], np.log(err[:stop][valid]), 1)[0])


@dataclass
class WindowSweepResult:
    h_values: List[int]
    mse_mean: np.ndarray
    mse_std: np.ndarray
    mse_per_seed: np.ndarray             # (len(h_values), n_seeds)
