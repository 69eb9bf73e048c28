from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from app.models.run_config import TwinMode, TwinSection


class TwinConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    h: int = Field(8, ge=1)
    n: int = Field(0, ge=0)
    mode: TwinMode = TwinMode.SLIDING
    n_seeds: int = Field(1, ge=1)
    steps: int = Field(20, ge=1)
    seed: int = Field(0, ge=0)
    keep_members: bool = False

    @classmethod
    def from_section(cls, section: TwinSection, h: int, n: int) -> "TwinConfig":
        return cls(h=h, n=n, mode=section.mode, n_seeds=section.n_seeds, steps=section.steps, seed=section.seed)


@dataclass
class ReconstructionResult:
    """Estimated frames for stream indices ``t_first .. t_first + len(frames) - 1``.

    ``n_forecast`` trailing frames lie beyond the last measurement.
    """

    frames: np.ndarray                   # (T', 2, H, W), normalised units
    t_first: int
    n_forecast: int = 0
    window_seconds: List[float] = field(default_factory=list)

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def estimated(self) -> np.ndarray:
        """Frames that have measurements (forecast stripped)."""
        return self.frames[: len(self) - self.n_forecast]


@dataclass
class EnsembleEstimate:
    mean: np.ndarray
    std: np.ndarray
    t_first: int
    n_forecast: int = 0
    members: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mean.shape != self.std.shape:
            raise ValueError(f"mean {self.mean.shape} and std {self.std.shape} differ in shape")
        if np.any(self.std < 0):
            raise ValueError("ensemble std must be non-negative")

    def __len__(self) -> int:
        return self.mean.shape[0]
