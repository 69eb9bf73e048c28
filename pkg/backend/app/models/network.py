from typing import Dict, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.models.run_config import ModelKind, ModelSection

CONFIG_PREFIX = "config."


class NetworkConfig(BaseModel):
    """Architecture hyperparameters, stored alongside the weights in a checkpoint."""

    model_config = ConfigDict(frozen=True)

    kind: ModelKind = ModelKind.PAINT
    grid: Tuple[int, int] = (32, 32)
    patch: int = Field(4, ge=1)
    dim: int = Field(64, ge=4)
    layers: int = Field(4, ge=1)
    heads: int = Field(2, ge=1)
    mlp_ratio: int = Field(4, ge=1)
    history: int = Field(8, ge=1)
    forecast: int = Field(4, ge=0)
    context: int = Field(2, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _conforming(self):
        h, w = self.grid
        if h % self.patch or w % self.patch:
            raise ValueError(f"grid {self.grid} is not divisible by patch {self.patch}")
        if self.dim % self.heads:
            raise ValueError(f"dim={self.dim} is not divisible by heads={self.heads}")
        return self

    @property
    def window(self) -> int:
        return self.history + self.forecast

    @property
    def n_patches(self) -> int:
        return (self.grid[0] // self.patch) * (self.grid[1] // self.patch)

    @classmethod
    def from_section(cls, section: ModelSection, kind: ModelKind, grid: Tuple[int, int], seed: int = 0) -> "NetworkConfig":
        layers = section.layers if kind == ModelKind.PAINT else section.ar_layers
        return cls(
            kind=kind, grid=grid, patch=section.patch, dim=section.dim, layers=layers,
            heads=section.heads, mlp_ratio=section.mlp_ratio, history=section.history,
            forecast=section.forecast, context=section.ar_context, seed=seed,
        )

    def to_tensors(self) -> Dict[str, np.ndarray]:
        values = {
            "kind": 0.0 if self.kind == ModelKind.PAINT else 1.0,
            "grid_h": self.grid[0], "grid_w": self.grid[1], "patch": self.patch, "dim": self.dim,
            "layers": self.layers, "heads": self.heads, "mlp_ratio": self.mlp_ratio,
            "history": self.history, "forecast": self.forecast, "context": self.context, "seed": self.seed,
        }
        return {f"{CONFIG_PREFIX}{k}": np.array([float(v)]) for k, v in values.items()}

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray]) -> "NetworkConfig":
        try:
            get = {k[len(CONFIG_PREFIX):]: int(v.reshape(-1)[0]) for k, v in tensors.items() if k.startswith(CONFIG_PREFIX)}
            return cls(
                kind=ModelKind.PAINT if get["kind"] == 0 else ModelKind.AR,
                grid=(get["grid_h"], get["grid_w"]), patch=get["patch"], dim=get["dim"],
                layers=get["layers"], heads=get["heads"], mlp_ratio=get["mlp_ratio"],
                history=get["history"], forecast=get["forecast"], context=get["context"], seed=get["seed"],
            )
        except KeyError as e:
            raise ValueError(f"checkpoint carries no network config entry {e}")
