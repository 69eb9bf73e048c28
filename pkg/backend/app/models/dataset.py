from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, Field

from app.models.sensing import MeasurementWindow


class Split(str, Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


class ManifestEntry(BaseModel):
    path: str
    param: float
    split: Split


class DatasetManifest(BaseModel):
    entries: List[ManifestEntry] = Field(default_factory=list)

    def by_split(self, split: Split) -> List[ManifestEntry]:
        return [e for e in self.entries if e.split == split]

    def params(self, split: Optional[Split] = None) -> List[float]:
        entries = self.entries if split is None else self.by_split(split)
        return [e.param for e in entries]


@dataclass
class WindowSample:
    """Target window x_[t-h+1, t+n] with the measurements over its first h frames."""

    states: np.ndarray                  # (h + n, 2, H, W), normalised
    measurements: MeasurementWindow     # h frames
    param: float
    t: int
    history: int
    forecast: int


@dataclass
class WindowBatch:
    """Stacked model inputs: states (B, T, 2, H, W), conditioning (B, T, 3, H, W)."""

    states: np.ndarray
    conditioning: np.ndarray
    weights: np.ndarray                 # (B, 1, 1, H, W)
    params: np.ndarray

    def __len__(self) -> int:
        return self.states.shape[0]
