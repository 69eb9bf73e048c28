import logging

import numpy as np
import pandas as pd
import pytest

from app.autograd.checkpoint import load_checkpoint
from app.autograd.tensor import Tensor
from app.exceptions import TrainingDivergedError
from app.models.dataset import Split
from app.models.run_config import ModelKind
from app.models.twin import TwinConfig
from app.services.dataio import read_trajectory
from app.services.networks import load_model
from app.services.sensing import sample_probes
from app.services.training import (
    LOSS_COLUMNS,
    Trainer,
    build_schedule,
    checkpoint_path,
    loss_log_path,
    train_ar,
    train_paint,
)
from app.services.twin import measurement_stream, reconstruct


class Interrupted(Exception):
    pass


def test_paint_run_writes_checkpoint_and_loss_log(tmp_path, manifest, tiny_run_config):
    result = train_paint(manifest, tiny_run_config, run_dir=tmp_path / "run")
    assert result.checkpoint == checkpoint_path(tmp_path / "run", ModelKind.PAINT)
    assert result.loss_log == loss_log_path(tmp_path / "run", ModelKind.PAINT)
    assert list(result.losses.columns) == LOSS_COLUMNS
    assert result.losses.step.tolist() == list(range(6))
    assert np.all(np.isfinite(result.losses.loss))
    assert result.losses.lr.iloc[0] == pytest.approx(tiny_run_config.training.lr_start)
    model, _ = load_model(result.checkpoint)
    assert model.parameter_count() == result.parameter_count


def test_ar_run_logs_parameter_ratio(tmp_path, manifest, tiny_run_config, caplog):
    with caplog.at_level(logging.INFO, logger="app.services.training"):
        result = train_ar(manifest, tiny_run_config, run_dir=tmp_path / "run")
    assert result.checkpoint.name == "ar.ptnt"
    assert any("ratio" in r.message for r in caplog.records)
    assert len(result.losses) == 6


@pytest.mark.parametrize("kind", [ModelKind.PAINT, ModelKind.AR])
def test_resume_continues_the_loss_curve_exactly(tmp_path, monkeypatch, manifest, tiny_run_config, kind):
    train = train_paint if kind == ModelKind.PAINT else train_ar
    full = train(manifest, tiny_run_config, run_dir=tmp_path / "full")

    original_save = Trainer.save

    def save_then_stop(self):
        original_save(self)
        raise Interrupted

    monkeypatch.setattr(Trainer, "save", save_then_stop)
    with pytest.raises(Interrupted):
        train(manifest, tiny_run_config, run_dir=tmp_path / "resumed")
    monkeypatch.undo()
    assert pd.read_csv(loss_log_path(tmp_path / "resumed", kind)).step.tolist() == [0, 1, 2]

    resumed = train(manifest, tiny_run_config, run_dir=tmp_path / "resumed", resume=True)
    pd.testing.assert_frame_equal(full.losses, resumed.losses)
    a, b = load_checkpoint(full.checkpoint), load_checkpoint(resumed.checkpoint)
    assert a.keys() == b.keys()
    for name in a:
        np.testing.assert_array_equal(a[name], b[name])


def test_resume_without_checkpoint_starts_fresh(tmp_path, manifest, tiny_run_config):
    trainer = Trainer(ModelKind.PAINT, manifest, tiny_run_config, tmp_path / "empty")
    assert trainer.resume() == 0


def test_non_finite_loss_stops_training(tmp_path, monkeypatch, manifest, tiny_run_config):
    monkeypatch.setattr(Trainer, "_paint_loss", lambda self, rng: Tensor(np.array(np.nan)))
    with pytest.raises(TrainingDivergedError):
        train_paint(manifest, tiny_run_config, run_dir=tmp_path / "run")
    assert loss_log_path(tmp_path / "run", ModelKind.PAINT).is_file()


def test_schedule_clamps_warmup_for_short_runs(tiny_run_config):
    tiny_run_config.training.warmup_steps = 100
    schedule = build_schedule(tiny_run_config)
    t = tiny_run_config.training
    assert schedule(0) == pytest.approx(t.lr_start)
    assert schedule(t.steps - 1) == pytest.approx(t.lr_peak)


@pytest.mark.slow
def test_trained_window_model_is_most_accurate_at_the_probes(tmp_path, manifest, tiny_run_config):
    t = tiny_run_config.training
    t.steps, t.checkpoint_every, t.log_every, t.warmup_steps = 300, 100, 50, 20
    result = train_paint(manifest, tiny_run_config, run_dir=tmp_path / "run")
    model, _ = load_model(result.checkpoint)

    truth = read_trajectory(manifest.by_split(Split.TEST)[0].path)
    probes = sample_probes("grid", 2, grid_shape=truth.grid_shape, k_f=1)
    stream = measurement_stream(truth, probes, 0, 10)
    estimate = reconstruct(model, stream, TwinConfig(h=3, steps=10, seed=0))

    target = truth.normalized()[estimate.t_first:estimate.t_first + len(estimate.frames)]
    error = np.abs(estimate.frames - target)
    at_probe = np.zeros(truth.grid_shape, dtype=bool)
    at_probe[probes.rows, probes.cols] = True
    assert error[..., at_probe].mean() < error[..., ~at_probe].mean()
