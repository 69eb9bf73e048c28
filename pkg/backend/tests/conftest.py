import math

import numpy as np
import pytest

from app.config import load_run_config
from app.models.network import NetworkConfig
from app.models.run_config import ModelKind, SystemKind
from app.models.system import Field2D, SystemParams, Trajectory
from app.services.dataio import make_splits, read_manifest, write_manifest, write_trajectory
from app.services.dynsys import project_divergence_free

GRID = 8


def smooth_frames(n_frames: int, grid: int = GRID, seed: int = 0, amplitude: float = 1.0) -> np.ndarray:
    """Divergence-free, slowly rotating low-mode fields; cheap stand-ins for simulated flow."""
    rng = np.random.default_rng(seed)
    x = 2.0 * np.pi * np.arange(grid) / grid
    yy, xx = np.meshgrid(x, x, indexing="ij")
    phases = rng.uniform(0, 2 * np.pi, size=4)
    frames = np.empty((n_frames, 2, grid, grid))
    for t in range(n_frames):
        a = 0.1 * t
        u = amplitude * (np.sin(xx + phases[0] + a) * np.cos(yy + phases[1]) + 0.3 * np.cos(2 * yy + phases[2] - a))
        v = amplitude * (-np.cos(xx + phases[0] + a) * np.sin(yy + phases[1]) + 0.3 * np.sin(2 * xx + phases[3] + a))
        frames[t] = project_divergence_free(Field2D(u=u, v=v)).stack()
    return frames


def make_trajectory(n_frames: int = 24, grid: int = GRID, seed: int = 0, amplitude: float = 1.0) -> Trajectory:
    params = SystemParams(kind=SystemKind.KOLMOGOROV, grid=grid, k_f=1, amplitude=amplitude, seed=seed)
    frames = smooth_frames(n_frames, grid, seed, amplitude)
    rms = float(np.mean(np.sqrt(np.mean(frames[:, 0] ** 2 + frames[:, 1] ** 2, axis=(-2, -1)))))
    return Trajectory(frames=frames, dt=0.1, params=params, normalization=rms)


def orbit_average_log_slope(r: float, x0: float, n_steps: int = 1_000_000, burn_in: int = 1000) -> float:
    """Mean of log|r (1 - 2x)| along a plain-loop logistic orbit."""
    x = x0
    for _ in range(burn_in):
        x = r * x * (1.0 - x)
    total = 0.0
    for _ in range(n_steps):
        total += math.log(abs(r * (1.0 - 2.0 * x)))
        x = r * x * (1.0 - x)
    return total / n_steps


@pytest.fixture(scope="session")
def logistic_reference_lyapunov() -> float:
    """Lyapunov exponent of the logistic map at r=3.8 from a 10^6-step orbit started at x0=0.1234."""
    return orbit_average_log_slope(3.8, x0=0.1234)


@pytest.fixture
def trajectory() -> Trajectory:
    return make_trajectory()


@pytest.fixture
def dataset_dir(tmp_path):
    """Six small trajectories on disk plus their manifest."""
    amplitudes = np.linspace(0.6, 1.4, 6)
    manifest = make_splits(amplitudes, seed=0)
    for index, entry in enumerate(manifest.entries):
        write_trajectory(tmp_path / entry.path, make_trajectory(seed=index, amplitude=entry.param))
    write_manifest(manifest, tmp_path / "manifest.csv")
    return tmp_path


@pytest.fixture
def manifest(dataset_dir):
    return read_manifest(dataset_dir / "manifest.csv")


@pytest.fixture
def tiny_run_config(tmp_path):
    return load_run_config(overrides={
        "system": {"grid": GRID, "k_f": 1},
        "model": {
            "patch": 4, "dim": 8, "layers": 2, "heads": 2, "mlp_ratio": 2,
            "history": 3, "forecast": 1, "ar_context": 2, "ar_layers": 2, "train_probes": 4,
        },
        "training": {
            "steps": 6, "batch": 2, "warmup_steps": 2, "log_every": 2, "checkpoint_every": 3,
            "run_dir": str(tmp_path / "runs"),
        },
        "twin": {"steps": 4, "n_seeds": 2, "grid_probes": 2, "vertical_probes": 4, "horizon": 8},
        "eval": {"out_dir": str(tmp_path / "reports")},
    })


@pytest.fixture
def paint_config() -> NetworkConfig:
    return NetworkConfig(kind=ModelKind.PAINT, grid=(GRID, GRID), patch=4, dim=8, layers=2, heads=2,
                         mlp_ratio=2, history=3, forecast=1, seed=1)


@pytest.fixture
def ar_config() -> NetworkConfig:
    return NetworkConfig(kind=ModelKind.AR, grid=(GRID, GRID), patch=4, dim=8, layers=1, heads=2,
                         mlp_ratio=2, context=2, seed=2)
