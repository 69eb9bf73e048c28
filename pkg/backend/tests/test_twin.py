import numpy as np
import pytest

from app.exceptions import DomainError, ShapeError
from app.models.run_config import TwinMode
from app.models.sensing import MeasurementWindow
from app.models.twin import TwinConfig
from app.services.dataio import read_trajectory
from app.services.networks import ARModel, WindowModel
from app.services.sensing import encode, sample_probes
from app.services.twin import (
    SlidingWindowStepper,
    ar_estimate,
    ar_rollout,
    ar_step,
    ensemble,
    measurement_stream,
    reconstruct,
    window_conditioning,
    write_estimate,
)


@pytest.fixture
def probes():
    return sample_probes("grid", 2, grid_shape=(8, 8), k_f=1)


@pytest.fixture
def stream(trajectory, probes):
    return measurement_stream(trajectory, probes, 0, 7)


class TestWindowConditioning:
    def test_only_last_h_slots_are_measured(self, stream):
        cond = window_conditioning(stream, t_end=4, h=2, model_history=3, forecast=1)
        assert cond.shape == (4, 3, 8, 8)
        measured = cond[:, 0].sum(axis=(1, 2))
        np.testing.assert_array_equal(measured, [0, 5, 5, 0])

    def test_slots_before_the_stream_are_empty(self, stream):
        cond = window_conditioning(stream, t_end=1, h=3, model_history=3, forecast=0)
        np.testing.assert_array_equal(cond[:, 0].sum(axis=(1, 2)), [0, 5, 5])


class TestReconstruct:
    def test_sliding_counts(self, paint_config, stream):
        model = WindowModel(paint_config)
        result = reconstruct(model, stream, TwinConfig(h=2, mode=TwinMode.SLIDING, steps=2))
        assert result.frames.shape == (6, 2, 8, 8)
        assert result.t_first == 1
        assert result.n_forecast == 0
        assert len(result.window_seconds) == 6

    def test_sequence_counts_with_ragged_tail_and_forecast(self, paint_config, stream):
        model = WindowModel(paint_config)
        result = reconstruct(model, stream, TwinConfig(h=3, n=1, mode=TwinMode.SEQUENCE, steps=2))
        assert len(result) == 8
        assert result.n_forecast == 1
        assert result.estimated.shape[0] == 7
        assert result.t_first == 0
        assert len(result.window_seconds) == 3

    def test_window_locality(self, paint_config, stream):
        model = WindowModel(paint_config)
        config = TwinConfig(h=2, mode=TwinMode.SLIDING, steps=2, seed=4)
        values = stream.values.copy()
        values[0] += 5.0
        perturbed = MeasurementWindow(values=values, probe_set=stream.probe_set, t_start=0)
        a = reconstruct(model, stream, config).frames
        b = reconstruct(model, perturbed, config).frames
        assert not np.array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1:], b[1:])

    def test_independent_of_worker_count(self, paint_config, stream):
        model = WindowModel(paint_config)
        config = TwinConfig(h=3, mode=TwinMode.SLIDING, steps=2)
        serial = reconstruct(model, stream, config, workers=1).frames
        threaded = reconstruct(model, stream, config, workers=3).frames
        np.testing.assert_array_equal(serial, threaded)

    def test_preconditions(self, paint_config, stream):
        model = WindowModel(paint_config)
        with pytest.raises(DomainError):
            reconstruct(model, stream, TwinConfig(h=4))
        with pytest.raises(DomainError):
            reconstruct(model, stream.truncate(0, 1), TwinConfig(h=2))
        with pytest.raises(ValueError, match="seed"):
            TwinConfig(h=2, seed=-1)

    def test_ensemble_statistics(self, paint_config, stream):
        model = WindowModel(paint_config)
        est = ensemble(model, stream, TwinConfig(h=3, n_seeds=3, steps=2, keep_members=True))
        assert est.members.shape == (3, 5, 2, 8, 8)
        np.testing.assert_allclose(est.mean, est.members.mean(axis=0))
        assert np.all(est.std >= 0)
        assert np.any(est.std > 0)

    def test_ensemble_is_reproducible_for_a_seed(self, paint_config, stream):
        model = WindowModel(paint_config)
        config = TwinConfig(h=3, n_seeds=2, steps=2, seed=5, keep_members=True)
        first = ensemble(model, stream, config)
        second = ensemble(model, stream, config)
        np.testing.assert_array_equal(first.members, second.members)
        np.testing.assert_array_equal(first.mean, second.mean)
        np.testing.assert_array_equal(first.std, second.std)
        reseeded = ensemble(model, stream, config.model_copy(update={"seed": 6}))
        assert not np.array_equal(first.mean, reseeded.mean)

    def test_sampler_ignores_the_prior(self, paint_config, stream):
        stepper = SlidingWindowStepper(WindowModel(paint_config), stream, TwinConfig(h=3, steps=2))
        a = stepper.step(np.zeros((2, 8, 8)), 4)
        b = stepper.step(np.ones((2, 8, 8)), 4)
        np.testing.assert_array_equal(a, b)
        with pytest.raises(DomainError):
            stepper.step(None, 1)

    def test_estimate_files(self, tmp_path, paint_config, stream, trajectory):
        est = ensemble(WindowModel(paint_config), stream, TwinConfig(h=3, n_seeds=2, steps=2))
        mean_path, std_path = write_estimate(tmp_path / "est.ptrj", est, trajectory)
        assert std_path.name == "est.std.ptrj"
        mean = read_trajectory(mean_path)
        np.testing.assert_allclose(mean.frames, est.mean * trajectory.normalization)
        assert mean.normalization == trajectory.normalization


class TestAutoregressive:
    def test_zero_steps_returns_the_context(self, ar_config, stream, trajectory):
        init = trajectory.normalized()[:2]
        out = ar_rollout(ARModel(ar_config), init, stream, 0)
        np.testing.assert_array_equal(out, init)

    def test_rollout_feeds_back_its_predictions(self, ar_config, stream, trajectory):
        model = ARModel(ar_config)
        init = trajectory.normalized()[:2]
        out = ar_rollout(model, init, stream, 3)
        assert out.shape == (5, 2, 8, 8)
        cond = encode(stream).channels()
        np.testing.assert_array_equal(out[2], ar_step(model, init, cond[0]))
        np.testing.assert_array_equal(out[4], ar_step(model, out[2:4], cond[2]))

    def test_rollout_checks(self, ar_config, stream, trajectory):
        model = ARModel(ar_config)
        with pytest.raises(ShapeError):
            ar_rollout(model, trajectory.normalized()[:3], stream, 1)
        with pytest.raises(DomainError):
            ar_rollout(model, trajectory.normalized()[:2], stream, 8)

    def test_estimate_window(self, ar_config, trajectory, probes):
        frames = ar_estimate(ARModel(ar_config), trajectory, probes, t_start=4, horizon=6)
        assert frames.shape == (6, 2, 8, 8)
        with pytest.raises(DomainError):
            ar_estimate(ARModel(ar_config), trajectory, probes, t_start=0, horizon=2)
