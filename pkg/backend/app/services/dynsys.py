"""Ground-truth dynamical systems: logistic map, Lorenz-63 and 2D Kolmogorov flow.

The flow solver works on the vorticity of a periodic [0, 2pi)^2 box, which
removes pressure and keeps every stored velocity field divergence-free in
spectral space. Time stepping is RK4 with an exact integrating factor for the
linear (viscous + drag) term; the advection term is dealiased with the 2/3 rule.
"""
import logging
import math
from typing import Optional, Tuple

import numpy as np

from app.exceptions import CFLViolationError, DomainError, NonFiniteError
from app.models.run_config import SystemKind
from app.models.system import Field2D, SystemParams, Trajectory
from app.utils.fft import fft2, ifft2, is_power_of_two, wavenumbers

logger = logging.getLogger(__name__)

CFL_LIMIT = 0.5


# ---------------------------------------------------------------------------
# Logistic map
# ---------------------------------------------------------------------------

def logistic_step(x: float, r: float) -> float:
    """One iteration ``r * x * (1 - x)``; inputs must satisfy 0<=x<=1, 0<r<=4."""
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"logistic state must lie in [0, 1], got {x}")
    if not 0.0 < r <= 4.0:
        raise DomainError(f"logistic parameter must lie in (0, 4], got {r}")
    return r * x * (1.0 - x)


def logistic_derivative(x: float, r: float) -> float:
    return r * (1.0 - 2.0 * x)


def logistic_orbit(x0: float, r: float, n_steps: int) -> np.ndarray:
    out = np.empty(n_steps + 1)
    out[0] = x0
    for i in range(n_steps):
        out[i + 1] = logistic_step(out[i], r)
    return out


def logistic_lyapunov(r: float = 3.8, n_steps: int = 1_000_000, x0: float = 0.3, burn_in: int = 1000) -> float:
    """Lyapunov exponent estimate ``mean(log|r(1 - 2 x_t)|)`` along one long orbit."""
    x = x0
    for _ in range(burn_in):
        x = logistic_step(x, r)
    total = 0.0
    for _ in range(n_steps):
        total += math.log(max(abs(logistic_derivative(x, r)), 1e-300))
        x = logistic_step(x, r)
    return total / n_steps


# ---------------------------------------------------------------------------
# Lorenz-63
# ---------------------------------------------------------------------------

def lorenz_rhs(state: np.ndarray, sigma: float, rho: float, beta: float) -> np.ndarray:
    x, y, z = state
    return np.array([sigma * (y - x), x * (rho - z) - y, x * y - beta * z])


def lorenz_jacobian(state: np.ndarray, sigma: float, rho: float, beta: float) -> np.ndarray:
    x, y, z = state
    return np.array([
        [-sigma, sigma, 0.0],
        [rho - z, -1.0, -x],
        [y, x, -beta],
    ])


def lorenz_step(state, dt: float, sigma: float = 10.0, rho: float = 28.0, beta: float = 8.0 / 3.0) -> np.ndarray:
    """One classical RK4 step of the Lorenz-63 vector field."""
    if dt > 1e-2:
        raise DomainError(f"lorenz_step requires dt <= 1e-2, got {dt}")
    state = np.asarray(state, dtype=np.float64)
    if not np.all(np.isfinite(state)):
        raise NonFiniteError("lorenz_step input")
    k1 = lorenz_rhs(state, sigma, rho, beta)
    k2 = lorenz_rhs(state + 0.5 * dt * k1, sigma, rho, beta)
    k3 = lorenz_rhs(state + 0.5 * dt * k2, sigma, rho, beta)
    k4 = lorenz_rhs(state + dt * k3, sigma, rho, beta)
    out = state + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("lorenz_step")
    return out


def lorenz_lyapunov(
    state0=(1.0, 1.0, 1.0),
    dt: float = 1e-2,
    n_steps: int = 100_000,
    burn_in: int = 1000,
    sigma: float = 10.0,
    rho: float = 28.0,
    beta: float = 8.0 / 3.0,
) -> float:
    """Largest Lyapunov exponent by tangent propagation with renormalisation."""
    state = np.asarray(state0, dtype=np.float64)
    for _ in range(burn_in):
        state = lorenz_step(state, dt, sigma, rho, beta)
    tangent = np.ones(3) / math.sqrt(3.0)
    log_growth = 0.0
    for _ in range(n_steps):
        # RK4 on the variational equation alongside the state
        j1 = lorenz_jacobian(state, sigma, rho, beta)
        k1 = lorenz_rhs(state, sigma, rho, beta)
        t1 = j1 @ tangent
        s2 = state + 0.5 * dt * k1
        k2 = lorenz_rhs(s2, sigma, rho, beta)
        t2 = lorenz_jacobian(s2, sigma, rho, beta) @ (tangent + 0.5 * dt * t1)
        s3 = state + 0.5 * dt * k2
        k3 = lorenz_rhs(s3, sigma, rho, beta)
        t3 = lorenz_jacobian(s3, sigma, rho, beta) @ (tangent + 0.5 * dt * t2)
        s4 = state + dt * k3
        k4 = lorenz_rhs(s4, sigma, rho, beta)
        t4 = lorenz_jacobian(s4, sigma, rho, beta) @ (tangent + dt * t3)
        state = state + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        tangent = tangent + dt / 6.0 * (t1 + 2 * t2 + 2 * t3 + t4)
        norm = np.linalg.norm(tangent)
        log_growth += math.log(norm)
        tangent /= norm
    return log_growth / (n_steps * dt)


# ---------------------------------------------------------------------------
# Spectral helpers for periodic 2D fields
# ---------------------------------------------------------------------------

class SpectralGrid:
    """Wavenumbers and masks for an H x W periodic box of side 2pi."""

    def __init__(self, h: int, w: int):
        if not (is_power_of_two(h) and is_power_of_two(w)):
            raise DomainError(f"grid must be powers of two, got {h}x{w}")
        self.h, self.w = h, w
        self.ky, self.kx = wavenumbers(h, w)
        # Nyquist modes have no well-defined derivative; they are dropped
        nyquist = (np.abs(self.ky) == h // 2) | (np.abs(self.kx) == w // 2)
        self.keep = (~nyquist).astype(np.float64)
        self.dky = np.where(nyquist, 0.0, self.ky)
        self.dkx = np.where(nyquist, 0.0, self.kx)
        self.k2 = self.kx ** 2 + self.ky ** 2
        self.inv_k2 = np.where(self.k2 > 0, 1.0 / np.where(self.k2 > 0, self.k2, 1.0), 0.0)
        self.dealias = ((np.abs(self.kx) < w / 3.0) & (np.abs(self.ky) < h / 3.0)).astype(np.float64)
        self.dx = 2.0 * np.pi / w
        self.y = 2.0 * np.pi * np.arange(h) / h
        self.x = 2.0 * np.pi * np.arange(w) / w

    def vorticity_hat(self, field: Field2D) -> np.ndarray:
        u_hat = fft2(field.u)
        v_hat = fft2(field.v)
        return self.keep * (1j * self.dkx * v_hat - 1j * self.dky * u_hat)

    def velocity_hat(self, w_hat: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        psi_hat = w_hat * self.inv_k2
        return 1j * self.dky * psi_hat, -1j * self.dkx * psi_hat

    def velocity(self, w_hat: np.ndarray, mean_uv=(0.0, 0.0)) -> Field2D:
        u_hat, v_hat = self.velocity_hat(w_hat)
        uv = ifft2(np.stack([u_hat, v_hat])).real
        return Field2D(u=uv[0] + mean_uv[0], v=uv[1] + mean_uv[1])


def spectral_divergence(field: Field2D) -> float:
    """Largest per-mode magnitude of the normalised spectral divergence."""
    grid = SpectralGrid(*field.shape)
    u_hat = fft2(field.u)
    v_hat = fft2(field.v)
    div_hat = 1j * grid.dkx * u_hat + 1j * grid.dky * v_hat
    return float(np.max(np.abs(div_hat)) / (grid.h * grid.w))


def project_divergence_free(field: Field2D) -> Field2D:
    """Keep the spatial mean and the solenoidal part of ``field``."""
    grid = SpectralGrid(*field.shape)
    return grid.velocity(grid.vorticity_hat(field), (field.u.mean(), field.v.mean()))


def kinetic_energy(frames: np.ndarray) -> np.ndarray:
    """Spatially averaged ``0.5 (u^2 + v^2)``; frames are (..., 2, H, W)."""
    frames = np.asarray(frames)
    return 0.5 * np.mean(frames[..., 0, :, :] ** 2 + frames[..., 1, :, :] ** 2, axis=(-2, -1))


def vorticity(field: Field2D) -> np.ndarray:
    grid = SpectralGrid(*field.shape)
    return ifft2(grid.vorticity_hat(field)).real


def taylor_green(n: int, k: int = 1, amplitude: float = 1.0) -> Field2D:
    """``u = A sin(kx) cos(ky)``, ``v = -A cos(kx) sin(ky)``; an exact steady Euler flow."""
    x = 2.0 * np.pi * np.arange(n) / n
    yy, xx = np.meshgrid(x, x, indexing="ij")
    return Field2D(
        u=amplitude * np.sin(k * xx) * np.cos(k * yy),
        v=-amplitude * np.cos(k * xx) * np.sin(k * yy),
    )


# ---------------------------------------------------------------------------
# Kolmogorov flow
# ---------------------------------------------------------------------------

class KolmogorovSolver:
    """Pseudo-spectral vorticity solver with forcing ``A sin(k_f y)`` on u."""

    def __init__(self, params: SystemParams, h: Optional[int] = None, w: Optional[int] = None):
        self.params = params
        self.grid = SpectralGrid(h or params.grid, w or params.grid)
        g = self.grid
        self.linear = -(params.nu * g.k2 + params.drag)
        # curl of (A sin(k_f y), 0) is -A k_f cos(k_f y)
        curl_f = -params.amplitude * params.k_f * np.cos(params.k_f * g.y)[:, None] * np.ones((1, g.w))
        self.forcing_hat = g.dealias * fft2(curl_f)
        self._factors = {}

    def _integrating_factors(self, dt: float):
        if dt not in self._factors:
            self._factors[dt] = (np.exp(self.linear * dt), np.exp(self.linear * dt / 2.0))
        return self._factors[dt]

    def _nonlinear(self, w_hat: np.ndarray, mean_uv) -> Tuple[np.ndarray, float]:
        g = self.grid
        u_hat, v_hat = g.velocity_hat(w_hat)
        phys = ifft2(np.stack([u_hat, v_hat, 1j * g.dkx * w_hat, 1j * g.dky * w_hat])).real
        u = phys[0] + mean_uv[0]
        v = phys[1] + mean_uv[1]
        advection = u * phys[2] + v * phys[3]
        speed = float(max(np.max(np.abs(u)), np.max(np.abs(v))))
        return -g.dealias * fft2(advection) + self.forcing_hat, speed

    def step_hat(self, w_hat: np.ndarray, mean_uv, dt: float):
        """Advance (vorticity spectrum, mean velocity) by one IF-RK4 step."""
        e, e2 = self._integrating_factors(dt)
        a, speed = self._nonlinear(w_hat, mean_uv)
        cfl = speed * dt / self.grid.dx
        if not np.isfinite(cfl):
            raise NonFiniteError("kolmogorov_step")
        if cfl > CFL_LIMIT:
            raise CFLViolationError(cfl, CFL_LIMIT)
        decay = math.exp(-self.params.drag * dt)
        mean_half = (mean_uv[0] * math.sqrt(decay), mean_uv[1] * math.sqrt(decay))
        mean_next = (mean_uv[0] * decay, mean_uv[1] * decay)

        b, _ = self._nonlinear(e2 * (w_hat + 0.5 * dt * a), mean_half)
        c, _ = self._nonlinear(e2 * w_hat + 0.5 * dt * b, mean_half)
        d, _ = self._nonlinear(e * w_hat + dt * e2 * c, mean_next)
        w_next = e * w_hat + dt / 6.0 * (e * a + 2.0 * e2 * (b + c) + d)
        w_next = self.grid.keep * w_next
        if not np.all(np.isfinite(w_next)):
            raise NonFiniteError("kolmogorov_step")
        return w_next, mean_next

    def initial_vorticity(self, rng: np.random.Generator, rms_velocity: float = 1.0) -> np.ndarray:
        """Random band-limited vorticity (|k| in [1, 6]) scaled to a target RMS speed."""
        g = self.grid
        noise_hat = fft2(rng.standard_normal((g.h, g.w)))
        band = (g.k2 >= 1.0) & (g.k2 <= 36.0)
        w_hat = g.keep * band * noise_hat
        vel = g.velocity(w_hat)
        rms = math.sqrt(float(np.mean(vel.u ** 2 + vel.v ** 2)))
        return w_hat * (rms_velocity / rms)


def kolmogorov_step(state: Field2D, dt_solver: float, params: SystemParams) -> Field2D:
    """One solver step from a velocity field; the output is projected divergence-free."""
    solver = KolmogorovSolver(params, *state.shape)
    w_hat = solver.grid.vorticity_hat(state)
    mean_uv = (float(state.u.mean()), float(state.v.mean()))
    w_next, mean_next = solver.step_hat(w_hat, mean_uv, dt_solver)
    return solver.grid.velocity(w_next, mean_next)


def _characteristic_velocity(frames: np.ndarray) -> float:
    rms = np.sqrt(np.mean(frames[:, 0] ** 2 + frames[:, 1] ** 2, axis=(-2, -1)))
    value = float(np.mean(rms))
    return value if value > 0 else 1.0


def simulate(
    params: SystemParams,
    n_frames: int,
    burn_in: int = 2000,
    stride: int = 10,
    initial_state=None,
) -> Trajectory:
    """Integrate from a seeded random initial condition and keep every ``stride``-th step.

    ``initial_state`` (a Field2D for the flow, a scalar/vector for the maps)
    replaces the random draw when given.
    """
    if n_frames < 1:
        raise DomainError(f"n_frames must be >= 1, got {n_frames}")
    rng = np.random.default_rng(params.seed)
    logger.info(
        f"Simulating {params.kind.value} (param={params.conditioning_value}, seed={params.seed}): "
        f"{n_frames} frames, burn-in {burn_in}, stride {stride}"
    )

    if params.kind == SystemKind.LOGISTIC:
        x = float(rng.uniform(0.05, 0.95)) if initial_state is None else float(initial_state)
        for _ in range(burn_in):
            x = logistic_step(x, params.r)
        frames = np.empty((n_frames, 1))
        for i in range(n_frames):
            for _ in range(stride):
                x = logistic_step(x, params.r)
            frames[i, 0] = x
        return Trajectory(frames=frames, dt=float(stride), params=params)

    if params.kind == SystemKind.LORENZ:
        if initial_state is None:
            state = np.array([1.0, 1.0, 1.0]) + rng.normal(scale=1.0, size=3)
        else:
            state = np.asarray(initial_state, dtype=np.float64)
        args = (params.dt_solver, params.sigma, params.rho, params.beta)
        for _ in range(burn_in):
            state = lorenz_step(state, *args)
        frames = np.empty((n_frames, 3))
        for i in range(n_frames):
            for _ in range(stride):
                state = lorenz_step(state, *args)
            frames[i] = state
        return Trajectory(frames=frames, dt=stride * params.dt_solver, params=params)

    solver = KolmogorovSolver(params)
    if initial_state is None:
        w_hat = solver.initial_vorticity(rng)
        mean_uv = (0.0, 0.0)
    else:
        w_hat = solver.grid.vorticity_hat(initial_state)
        mean_uv = (float(initial_state.u.mean()), float(initial_state.v.mean()))

    dt = params.dt_solver
    for i in range(burn_in):
        w_hat, mean_uv = solver.step_hat(w_hat, mean_uv, dt)
        if burn_in >= 10 and (i + 1) % (burn_in // 10) == 0:
            logger.debug(f"burn-in {i + 1}/{burn_in}")

    g = solver.grid
    frames = np.empty((n_frames, 2, g.h, g.w))
    report_every = max(1, n_frames // 10)
    for i in range(n_frames):
        for _ in range(stride):
            w_hat, mean_uv = solver.step_hat(w_hat, mean_uv, dt)
        frames[i] = g.velocity(w_hat, mean_uv).stack()
        if (i + 1) % report_every == 0:
            logger.info(f"[seed {params.seed}] stored {i + 1}/{n_frames} frames")

    traj = Trajectory(
        frames=frames,
        dt=stride * dt,
        params=params,
        normalization=_characteristic_velocity(frames),
        meta={"burn_in": burn_in, "stride": stride},
    )
    logger.info(f"Finished trajectory seed={params.seed}, normalisation={traj.normalization:.4f}")
    return traj
