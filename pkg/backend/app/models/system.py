from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.models.run_config import SystemKind

# Integer codes used in the trajectory file header
SYSTEM_CODES = {SystemKind.LOGISTIC: 0, SystemKind.LORENZ: 1, SystemKind.KOLMOGOROV: 2}


class SystemParams(BaseModel):
    """Parameters identifying one ground-truth system and its seed.

    The forcing amplitude plays the role the Reynolds number plays for the
    jet: it is the per-trajectory conditioning parameter of the dataset.
    """

    model_config = ConfigDict(frozen=True)

    kind: SystemKind
    r: float = 3.8
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    nu: float = Field(0.01, gt=0)
    k_f: int = Field(4, ge=1)
    amplitude: float = Field(1.0, ge=0)
    drag: float = Field(0.1, ge=0)
    grid: int = 32
    dt_solver: float = Field(0.01, gt=0)
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _stable_ranges(self):
        if self.kind == SystemKind.LOGISTIC and not 0 < self.r <= 4:
            raise ValueError(f"logistic r must lie in (0, 4], got {self.r}")
        if self.kind == SystemKind.LORENZ and self.dt_solver > 1e-2:
            raise ValueError(f"lorenz dt_solver must be <= 1e-2, got {self.dt_solver}")
        if self.kind == SystemKind.KOLMOGOROV:
            if self.grid & (self.grid - 1) or self.grid < 4:
                raise ValueError(f"grid must be a power of two >= 4, got {self.grid}")
            if self.k_f >= self.grid // 3:
                raise ValueError(f"forcing wavenumber {self.k_f} is removed by dealiasing at grid {self.grid}")
        return self

    @property
    def code(self) -> int:
        return SYSTEM_CODES[self.kind]

    @property
    def conditioning_value(self) -> float:
        """Scalar that distinguishes trajectories in a dataset."""
        if self.kind == SystemKind.KOLMOGOROV:
            return self.amplitude
        if self.kind == SystemKind.LOGISTIC:
            return self.r
        return self.rho


@dataclass
class Field2D:
    """2-component velocity field on a regular H x W periodic grid."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise ValueError(f"u and v must be equal 2D grids, got {self.u.shape} and {self.v.shape}")

    @property
    def shape(self):
        return self.u.shape

    def stack(self) -> np.ndarray:
        """(2, H, W) array, u first."""
        return np.stack([self.u, self.v])

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Field2D":
        return cls(u=arr[0], v=arr[1])


@dataclass
class Trajectory:
    """Ordered states with constant spacing ``dt``.

    ``frames`` is (T, 2, H, W) for the flow and (T, d) for maps/ODEs. Stored
    velocities are physical; ``normalization`` is the characteristic velocity
    that window extraction divides by.
    """

    frames: np.ndarray
    dt: float
    params: SystemParams
    normalization: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.shape[0] < 1:
            raise ValueError("a trajectory needs at least one frame")

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def is_field(self) -> bool:
        return self.frames.ndim == 4

    @property
    def grid_shape(self):
        if not self.is_field:
            raise ValueError("trajectory does not hold 2D fields")
        return self.frames.shape[-2:]

    def field(self, t: int) -> Field2D:
        return Field2D.from_array(self.frames[t])

    def normalized(self) -> np.ndarray:
        return self.frames / self.normalization

    def slice(self, start: int, stop: Optional[int] = None) -> "Trajectory":
        return Trajectory(
            frames=self.frames[start:stop],
            dt=self.dt,
            params=self.params,
            normalization=self.normalization,
            meta=dict(self.meta),
        )
