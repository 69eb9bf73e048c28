import math

import numpy as np
import pytest

from app.exceptions import CFLViolationError, DomainError
from app.models.run_config import SystemKind
from app.models.system import Field2D, SystemParams
from app.services.dynsys import (
    SpectralGrid,
    kinetic_energy,
    kolmogorov_step,
    logistic_lyapunov,
    logistic_orbit,
    logistic_step,
    lorenz_lyapunov,
    lorenz_step,
    project_divergence_free,
    simulate,
    spectral_divergence,
    taylor_green,
)


def flow_params(**kw) -> SystemParams:
    defaults = dict(kind=SystemKind.KOLMOGOROV, grid=16, k_f=4, nu=0.05, amplitude=0.0, drag=0.0, dt_solver=0.01)
    defaults.update(kw)
    return SystemParams(**defaults)


class TestLogistic:
    def test_step_and_domain(self):
        assert logistic_step(0.5, 4.0) == 1.0
        with pytest.raises(DomainError):
            logistic_step(1.2, 3.8)
        with pytest.raises(DomainError):
            logistic_step(0.5, 4.5)

    def test_orbit_stays_in_unit_interval(self):
        orbit = logistic_orbit(0.3, 3.8, 500)
        assert orbit.shape == (501,)
        assert np.all((orbit >= 0) & (orbit <= 1))

    @pytest.mark.slow
    def test_lyapunov_matches_an_independent_orbit_average(self, logistic_reference_lyapunov):
        assert logistic_reference_lyapunov > 0
        assert logistic_lyapunov(3.8) == pytest.approx(logistic_reference_lyapunov, abs=1e-2)

    def test_lyapunov_negative_in_periodic_window(self):
        assert logistic_lyapunov(3.2, n_steps=5000) < 0

    def test_simulate_keeps_stride(self):
        traj = simulate(SystemParams(kind=SystemKind.LOGISTIC, r=3.8, seed=3), 50, burn_in=10, stride=2)
        assert traj.frames.shape == (50, 1)
        assert traj.dt == 2.0


class TestLorenz:
    def test_step_size_limit(self):
        with pytest.raises(DomainError):
            lorenz_step(np.ones(3), dt=0.02)
        with pytest.raises(ValueError):
            SystemParams(kind=SystemKind.LORENZ, dt_solver=0.05)

    def test_rk4_step_matches_fine_substeps(self):
        state = np.array([1.0, 2.0, 20.0])
        fine = state
        for _ in range(100):
            fine = lorenz_step(fine, 1e-4)
        np.testing.assert_allclose(lorenz_step(state, 1e-2), fine, atol=1e-6)

    def test_nearby_states_separate(self):
        a = np.array([1.0, 1.0, 1.0])
        b = a + np.array([1e-8, 0.0, 0.0])
        separation = []
        for _ in range(5000):
            a, b = lorenz_step(a, 0.01), lorenz_step(b, 0.01)
            separation.append(np.linalg.norm(a - b))
        assert separation[100] < 1e-5
        assert max(separation) > 1.0

    @pytest.mark.slow
    def test_largest_lyapunov_exponent(self):
        assert lorenz_lyapunov(n_steps=30_000) == pytest.approx(0.9, abs=0.15)


class TestKolmogorov:
    def test_taylor_green_decays_at_viscous_rate(self):
        params = flow_params()
        tg = taylor_green(16, k=1, amplitude=1.0)
        traj = simulate(params, 5, burn_in=0, stride=10, initial_state=tg)
        for i, frame in enumerate(traj.frames):
            t = (i + 1) * 10 * params.dt_solver
            expected = tg.stack() * math.exp(-2.0 * params.nu * t)
            np.testing.assert_allclose(frame, expected, atol=1e-8)

    def test_kinetic_energy_decays(self):
        params = flow_params()
        traj = simulate(params, 4, burn_in=0, stride=5, initial_state=taylor_green(16))
        energy = kinetic_energy(traj.frames)
        assert np.all(np.diff(energy) < 0)
        assert kinetic_energy(taylor_green(16).stack()) == pytest.approx(0.25)

    def test_step_is_divergence_free(self):
        rng = np.random.default_rng(0)
        raw = Field2D(u=rng.standard_normal((16, 16)), v=rng.standard_normal((16, 16)))
        state = project_divergence_free(raw)
        assert spectral_divergence(state) < 1e-12
        stepped = kolmogorov_step(state, 0.01, flow_params(amplitude=1.0, drag=0.1, nu=0.01))
        assert spectral_divergence(stepped) < 1e-12
        assert spectral_divergence(raw) > 1e-3

    def test_cfl_violation_is_reported(self):
        fast = taylor_green(16, amplitude=1e3)
        with pytest.raises(CFLViolationError):
            kolmogorov_step(fast, 0.01, flow_params())

    def test_forced_simulation_records_normalisation(self):
        params = flow_params(amplitude=1.0, drag=0.1, nu=0.01, seed=5)
        traj = simulate(params, 3, burn_in=20, stride=2)
        assert traj.frames.shape == (3, 2, 16, 16)
        assert traj.dt == pytest.approx(0.02)
        assert traj.normalization > 0
        np.testing.assert_allclose(traj.normalized() * traj.normalization, traj.frames)

    def test_spectral_masks_are_float_weights(self):
        grid = SpectralGrid(16, 16)
        assert grid.keep.dtype == np.float64
        assert grid.dealias.dtype == np.float64
        assert set(np.unique(grid.dealias)) == {0.0, 1.0}
        assert grid.dealias[0, 5] == 1.0 and grid.dealias[0, 6] == 0.0

    def test_forced_nonlinear_step_on_random_field_stays_finite(self):
        rng = np.random.default_rng(3)
        raw = Field2D(u=rng.standard_normal((16, 16)), v=rng.standard_normal((16, 16)))
        state = project_divergence_free(raw)
        params = flow_params(amplitude=1.0, drag=0.1, nu=0.01)
        stepped = kolmogorov_step(state, 0.01, params)
        assert np.all(np.isfinite(stepped.stack()))
        assert not np.allclose(stepped.stack(), state.stack())

    def test_same_seed_gives_identical_frames(self):
        params = flow_params(amplitude=1.0, drag=0.1, nu=0.01, seed=11)
        first = simulate(params, 3, burn_in=10, stride=2)
        second = simulate(params, 3, burn_in=10, stride=2)
        np.testing.assert_array_equal(first.frames, second.frames)
        assert first.normalization == second.normalization
        other = simulate(params.model_copy(update={"seed": 12}), 3, burn_in=10, stride=2)
        assert not np.array_equal(first.frames, other.frames)

    @pytest.mark.slow
    def test_nearby_states_diverge_at_default_forcing(self):
        params = SystemParams(kind=SystemKind.KOLMOGOROV, seed=4)
        start = Field2D.from_array(simulate(params, 1, burn_in=2000, stride=1).frames[-1])

        rng = np.random.default_rng(9)
        noise = project_divergence_free(
            Field2D(u=rng.standard_normal(start.shape), v=rng.standard_normal(start.shape))
        ).stack()
        noise -= noise.mean(axis=(-2, -1), keepdims=True)
        noise *= 1e-8 / np.sqrt(np.mean(noise ** 2))
        nudged = Field2D.from_array(start.stack() + noise)

        a = simulate(params, 80, burn_in=0, stride=100, initial_state=start)
        b = simulate(params, 80, burn_in=0, stride=100, initial_state=nudged)
        separation = np.sqrt(np.mean((a.frames - b.frames) ** 2, axis=(1, 2, 3))) / a.normalization
        assert separation[0] < 1e-6
        assert separation.max() > 0.1


@pytest.mark.parametrize("kind", list(SystemKind))
def test_negative_seed_is_rejected(kind):
    with pytest.raises(ValueError, match="seed"):
        SystemParams(kind=kind, seed=-1)
