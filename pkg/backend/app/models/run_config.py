"""Schema of the run configuration file (``[section]`` + ``key = value``)."""
from enum import Enum
from typing import List

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class SystemKind(str, Enum):
    LOGISTIC = "logistic"
    LORENZ = "lorenz"
    KOLMOGOROV = "kolmogorov"


class ModelKind(str, Enum):
    PAINT = "paint"
    AR = "ar"


class TwinMode(str, Enum):
    SEQUENCE = "sequence"
    SLIDING = "sliding"


class Constellation(str, Enum):
    GRID = "grid"
    VERTICAL = "vertical"
    FILE = "file"


def _split_list(value):
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    return value


class SystemSection(_Section):
    kind: SystemKind = SystemKind.KOLMOGOROV
    grid: int = Field(32, ge=4)
    nu: float = Field(0.01, gt=0)
    k_f: int = Field(4, ge=1)
    drag: float = Field(0.1, ge=0)
    dt_solver: float = Field(0.01, gt=0)
    burn_in: int = Field(2000, ge=0)
    stride: int = Field(10, ge=1)
    frames: int = Field(1000, ge=1)
    r: float = Field(3.8, gt=0, le=4)
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    seed: int = Field(0, ge=0)

    @field_validator("grid")
    @classmethod
    def _power_of_two(cls, v: int) -> int:
        if v & (v - 1):
            raise ValueError(f"grid must be a power of two, got {v}")
        return v


class DatasetSection(_Section):
    data_dir: str = "data"
    amplitude_min: float = Field(0.6, gt=0)
    amplitude_max: float = Field(1.4, gt=0)
    n_params: int = Field(18, ge=5)
    split_seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _ordered(self):
        if self.amplitude_max <= self.amplitude_min:
            raise ValueError("amplitude_max must exceed amplitude_min")
        return self


class ModelSection(_Section):
    patch: int = Field(4, ge=1)
    dim: int = Field(64, ge=4)
    layers: int = Field(4, ge=1)
    heads: int = Field(2, ge=1)
    mlp_ratio: int = Field(4, ge=1)
    history: int = Field(8, ge=1)
    forecast: int = Field(4, ge=0)
    ar_context: int = Field(2, ge=1)
    ar_layers: int = Field(4, ge=1)
    weight_alpha: float = Field(9.0, ge=0)
    weight_sigma: float = Field(2.0, gt=0)
    train_probes: int = Field(25, ge=1)
    window_dropout: bool = True

    @model_validator(mode="after")
    def _heads_divide(self):
        if self.dim % self.heads:
            raise ValueError(f"dim={self.dim} is not divisible by heads={self.heads}")
        return self


class TrainingSection(_Section):
    steps: int = Field(20000, ge=1)
    batch: int = Field(16, ge=1)
    lr_start: float = Field(5e-7, gt=0)
    lr_peak: float = Field(1e-4, gt=0)
    lr_end: float = Field(1e-5, gt=0)
    warmup_steps: int = Field(2000, ge=0)
    weight_decay: float = Field(0.05, ge=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    log_every: int = Field(50, ge=1)
    checkpoint_every: int = Field(1000, ge=1)
    run_dir: str = "runs"
    seed: int = Field(0, ge=0)


class TwinSection(_Section):
    mode: TwinMode = TwinMode.SLIDING
    n_seeds: int = Field(10, ge=1)
    steps: int = Field(20, ge=1)
    constellation: Constellation = Constellation.GRID
    probe_file: str = ""
    grid_probes: int = Field(10, ge=1)
    vertical_probes: int = Field(25, ge=1)
    noise_sigma: float = Field(0.0, ge=0)
    start: int = Field(0, ge=0)
    horizon: int = Field(200, ge=1)
    seed: int = Field(0, ge=0)


class EvalSection(_Section):
    out_dir: str = "reports"
    logistic_eps: List[float] = [1e-4, 1e-6, 1e-8]
    logistic_starts: int = Field(200, ge=1)
    window_sweep_h: List[int] = [1, 2, 4, 8]
    sweep_seeds: int = Field(5, ge=1)
    jacobian_k: int = Field(0, ge=0)
    jacobian_t: int = Field(20, ge=1)
    histogram_bins: int = Field(50, ge=2)

    @field_validator("logistic_eps", "window_sweep_h", mode="before")
    @classmethod
    def _comma_separated(cls, v):
        return _split_list(v)


class RunConfig(BaseModel):
    """Fully resolved configuration; every section rejects unknown keys."""

    model_config = ConfigDict(extra="forbid")

    system: SystemSection = SystemSection()
    dataset: DatasetSection = DatasetSection()
    model: ModelSection = ModelSection()
    training: TrainingSection = TrainingSection()
    twin: TwinSection = TwinSection()
    eval: EvalSection = EvalSection()
