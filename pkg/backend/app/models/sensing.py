from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator


class ProbeKind(str, Enum):
    RANDOM = "random"
    GRID = "grid"
    VERTICAL = "vertical"


class ProbeSet(BaseModel):
    """Sensor locations as (row, col) grid indices."""

    model_config = ConfigDict(frozen=True)

    positions: List[Tuple[int, int]]
    grid_shape: Tuple[int, int]
    includes_inlet_analog: bool = False

    @model_validator(mode="after")
    def _valid_positions(self):
        if not self.positions:
            raise ValueError("a probe set needs at least one position")
        if len(set(self.positions)) != len(self.positions):
            raise ValueError("probe positions must be unique")
        h, w = self.grid_shape
        for row, col in self.positions:
            if not (0 <= row < h and 0 <= col < w):
                raise ValueError(f"probe ({row}, {col}) lies outside the {h}x{w} grid")
        return self

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def rows(self) -> np.ndarray:
        return np.array([p[0] for p in self.positions], dtype=np.intp)

    @property
    def cols(self) -> np.ndarray:
        return np.array([p[1] for p in self.positions], dtype=np.intp)


@dataclass
class MeasurementWindow:
    """Probe readings over consecutive frames: values are (L, P, 2), u then v."""

    values: np.ndarray
    probe_set: ProbeSet
    t_start: int
    noise_sigma: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[1:] != (len(self.probe_set), 2):
            raise ValueError(
                f"measurement values must be (L, {len(self.probe_set)}, 2), got {self.values.shape}"
            )
        if self.values.shape[0] < 1:
            raise ValueError("a measurement window needs at least one frame")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("measurement values must be finite")

    def __len__(self) -> int:
        return self.values.shape[0]

    def truncate(self, start: int, stop: Optional[int] = None) -> "MeasurementWindow":
        stop = len(self) if stop is None else stop
        return MeasurementWindow(
            values=self.values[start:stop],
            probe_set=self.probe_set,
            t_start=self.t_start + start,
            noise_sigma=self.noise_sigma,
        )


@dataclass
class MaskedWindowEncoding:
    """Per-frame mask (L, 1, H, W) and scattered probe values (L, 2, H, W)."""

    mask: np.ndarray
    values: np.ndarray

    def channels(self) -> np.ndarray:
        """(L, 3, H, W): mask followed by the two value channels."""
        return np.concatenate([self.mask, self.values], axis=1)

    def __len__(self) -> int:
        return self.mask.shape[0]
