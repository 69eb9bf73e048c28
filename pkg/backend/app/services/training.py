import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import pandas as pd

from app.autograd.checkpoint import load_checkpoint
from app.autograd.optim import AdamW, LrSchedule
from app.autograd.tensor import Tensor, mean, power_int, sub
from app.exceptions import NonFiniteError, TrainingDivergedError
from app.models.dataset import DatasetManifest, Split, WindowBatch
from app.models.network import NetworkConfig
from app.models.run_config import ModelKind, RunConfig
from app.services.dataio import TrajectoryDataset, window_conditioning
from app.services.flow_matching import fm_loss, spatial_weight_map
from app.services.networks import ARModel, WindowModel, build_model, save_model
from app.utils.file_utils import ensure_dir

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ["step", "lr", "loss"]


@dataclass
class TrainingResult:
    checkpoint: Path
    loss_log: Path
    losses: pd.DataFrame
    parameter_count: int


def checkpoint_path(run_dir: Union[str, Path], kind: ModelKind) -> Path:
    return Path(run_dir) / f"{kind.value}.ptnt"


def loss_log_path(run_dir: Union[str, Path], kind: ModelKind) -> Path:
    return Path(run_dir) / f"{kind.value}_loss.csv"


def build_schedule(config: RunConfig) -> LrSchedule:
    t = config.training
    warmup = min(t.warmup_steps, t.steps - 1)
    if warmup != t.warmup_steps:
        logger.warning(f"warmup_steps={t.warmup_steps} exceeds the run length; using {warmup}")
    return LrSchedule(
        lr_start=t.lr_start, lr_peak=t.lr_peak, lr_end=t.lr_end,
        warmup_steps=warmup, total_steps=max(t.steps, warmup + 1),
    )


class Trainer:
    """Shared optimisation loop for both model families.

    Every step draws its batch from ``default_rng([seed, step])`` so a run
    resumed from a checkpoint continues the loss curve bit-exactly.
    """

    def __init__(self, kind: ModelKind, manifest: DatasetManifest, config: RunConfig, run_dir: Optional[Union[str, Path]] = None):
        self.logger = logging.getLogger(f"{__name__}.{self.__class__.__name__}")
        self.kind = kind
        self.config = config
        self.run_dir = ensure_dir(run_dir or config.training.run_dir)
        self.dataset = TrajectoryDataset(manifest, Split.TRAIN, k_f=config.system.k_f)
        self.net_config = NetworkConfig.from_section(config.model, kind, self.dataset.grid_shape, seed=config.training.seed)
        self.model = build_model(self.net_config)
        self.names = [name for name, _ in self.model.named_parameters()]
        t = config.training
        self.optim = AdamW(
            self.model.parameters(), lr=t.lr_peak, betas=(t.beta1, t.beta2), eps=t.eps, weight_decay=t.weight_decay,
        )
        self.schedule = build_schedule(config)
        self.rows: List[dict] = []
        self.start_step = 0

    @property
    def checkpoint(self) -> Path:
        return checkpoint_path(self.run_dir, self.kind)

    @property
    def loss_log(self) -> Path:
        return loss_log_path(self.run_dir, self.kind)

    # -- batches -----------------------------------------------------------
    def _paint_loss(self, rng: np.random.Generator) -> Tensor:
        m = self.config.model
        samples = self.dataset.sample_windows(rng, self.config.training.batch, m.history, m.forecast, m.train_probes)
        conditioning, weights = [], []
        for sample in samples:
            active = int(rng.integers(1, m.history + 1)) if m.window_dropout else None
            conditioning.append(window_conditioning(sample, active))
            weights.append(spatial_weight_map(sample.measurements.probe_set, self.dataset.grid_shape,
                                              m.weight_alpha, m.weight_sigma)[None, None])
        batch = WindowBatch(
            states=np.stack([s.states for s in samples]),
            conditioning=np.stack(conditioning),
            weights=np.stack(weights),
            params=np.array([s.param for s in samples]),
        )
        tau = rng.uniform(size=len(batch))
        noise = rng.standard_normal(batch.states.shape)
        return fm_loss(self.model, batch, tau, noise)

    def _ar_loss(self, rng: np.random.Generator) -> Tensor:
        m = self.config.model
        pairs = self.dataset.sample_transitions(rng, self.config.training.batch, m.ar_context, m.train_probes)
        prediction = self.model(pairs["context"], None, pairs["conditioning"])
        return mean(power_int(sub(prediction, pairs["target"]), 2))

    # -- persistence -------------------------------------------------------
    def save(self) -> None:
        save_model(self.checkpoint, self.model, extra=self.optim.state_dict(self.names))
        self._write_losses()

    def _write_losses(self) -> None:
        pd.DataFrame(self.rows, columns=LOSS_COLUMNS).to_csv(self.loss_log, index=False)

    def resume(self) -> int:
        """Restore weights, optimizer moments and the loss log; returns the next step."""
        if not self.checkpoint.is_file():
            self.logger.info(f"No checkpoint at {self.checkpoint}; starting from step 0")
            return 0
        tensors = load_checkpoint(self.checkpoint)
        self.model.load_state_dict(tensors)
        self.optim.load_state_dict(self.names, tensors)
        self.start_step = self.optim.state.step_count
        if self.loss_log.is_file():
            frame = pd.read_csv(self.loss_log, float_precision="round_trip")
            self.rows = frame[frame["step"] < self.start_step].to_dict("records")
        self.logger.info(f"Resumed {self.kind.value} training at step {self.start_step}")
        return self.start_step

    # -- loop --------------------------------------------------------------
    def run(self) -> TrainingResult:
        t = self.config.training
        step_loss = self._paint_loss if self.kind == ModelKind.PAINT else self._ar_loss
        self.logger.info(
            f"Training {self.kind.value}: {self.model.parameter_count()} parameters, "
            f"steps {self.start_step}..{t.steps}, batch {t.batch}"
        )
        for step in range(self.start_step, t.steps):
            rng = np.random.default_rng([t.seed, step])
            lr = self.schedule(step)
            try:
                loss = step_loss(rng)
            except NonFiniteError:
                self.logger.error(f"Non-finite activations at step {step}", exc_info=True)
                self._write_losses()
                raise TrainingDivergedError(step, float("nan"))
            value = loss.item()
            if not np.isfinite(value):
                self._write_losses()
                raise TrainingDivergedError(step, value)
            self.optim.zero_grad()
            loss.backward()
            self.optim.step(lr)
            self.rows.append({"step": step, "lr": lr, "loss": value})
            if (step + 1) % t.log_every == 0:
                recent = np.mean([r["loss"] for r in self.rows[-t.log_every:]])
                self.logger.info(f"[{self.kind.value}] step {step + 1}/{t.steps} lr={lr:.3e} loss={recent:.5f}")
            if (step + 1) % t.checkpoint_every == 0:
                self.save()
        self.save()
        return TrainingResult(
            checkpoint=self.checkpoint,
            loss_log=self.loss_log,
            losses=pd.DataFrame(self.rows, columns=LOSS_COLUMNS),
            parameter_count=self.model.parameter_count(),
        )


def train_paint(manifest: DatasetManifest, config: RunConfig, run_dir=None, resume: bool = False) -> TrainingResult:
    trainer = Trainer(ModelKind.PAINT, manifest, config, run_dir)
    if resume:
        trainer.resume()
    return trainer.run()


def train_ar(manifest: DatasetManifest, config: RunConfig, run_dir=None, resume: bool = False) -> TrainingResult:
    trainer = Trainer(ModelKind.AR, manifest, config, run_dir)
    paint_count = WindowModel(
        NetworkConfig.from_section(config.model, ModelKind.PAINT, trainer.dataset.grid_shape)
    ).parameter_count()
    ar_count = trainer.model.parameter_count()
    ratio = ar_count / paint_count
    logger.info(f"AR parameters {ar_count} vs PAINT {paint_count} (ratio {ratio:.3f})")
    if abs(ratio - 1.0) > 0.1:
        logger.warning(f"AR model size differs from PAINT by {abs(ratio - 1.0):.1%}; adjust model.ar_layers")
    if resume:
        trainer.resume()
    return trainer.run()


def parameter_counts(config: RunConfig, grid) -> dict:
    """Parameter counts of both families for a model section, without data."""
    return {
        kind.value: (WindowModel if kind == ModelKind.PAINT else ARModel)(
            NetworkConfig.from_section(config.model, kind, tuple(grid))
        ).parameter_count()
        for kind in ModelKind
    }
