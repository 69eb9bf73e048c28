import argparse
import logging

import numpy as np
import pandas as pd

from app.cli.common import load_trained, report_dir, test_trajectories
from app.exceptions import ConfigError
from app.models.run_config import ModelKind, RunConfig, SystemKind
from app.models.system import SystemParams
from app.models.twin import TwinConfig
from app.services.diagnostics import (
    LogisticStepMap,
    LorenzStepMap,
    PaintStepMap,
    ar_jacobian_series,
    jacobian_series,
    logistic_counterexample,
    window_sweep,
)
from app.services.dynsys import logistic_lyapunov, lorenz_lyapunov, simulate
from app.services.flow_matching import gaussian_target, sample_gaussian_toy, train_gaussian_toy
from app.services.networks import ToyVelocityMLP
from app.services.sensing import constellation_probes
from app.services.twin import SlidingWindowStepper, measurement_stream

logger = logging.getLogger(__name__)

NAME = "diagnose"
HELP = "theory checks: logistic divergence, Lorenz growth, Gaussian toy, window sweep, Jacobian series"


def add_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--logistic", action="store_true", help="biased logistic map divergence curves")
    parser.add_argument("--eps", type=float, nargs="+", help="eval.logistic_eps")
    parser.add_argument("--lorenz", action="store_true", help="Lorenz-63 Lyapunov vs Jacobian growth rate")
    parser.add_argument("--toy", action="store_true", help="flow matching on the 2D Gaussian target")
    parser.add_argument("--window-sweep", action="store_true", help="reconstruction MSE against window size h")
    parser.add_argument("--jacobian", action="store_true", help="Jacobian product series of both models")


def config_overrides(args) -> dict:
    if args.eps:
        return {"eval": {"logistic_eps": ",".join(repr(e) for e in args.eps)}}
    return {}


def _logistic(config: RunConfig, out) -> None:
    r = config.system.r
    lam = logistic_lyapunov(r)
    curves = [logistic_counterexample(eps, r=r, n_starts=config.eval.logistic_starts, lyapunov=lam, seed=config.system.seed)
              for eps in config.eval.logistic_eps]
    length = len(curves[0].mean_abs_error)
    frame = pd.DataFrame({"t": np.arange(length)})
    for c in curves:
        frame[f"eps_{c.eps:g}"] = c.mean_abs_error
    frame.to_csv(out / "divergence.csv", index=False)
    summary = pd.DataFrame([{
        "eps": c.eps, "divergence_time": c.mean_divergence_time, "predicted_time": c.predicted_time,
        "lyapunov": c.lyapunov, "growth_rate": c.growth_rate, "diverged_fraction": c.diverged_fraction,
    } for c in curves])
    summary.to_csv(out / "divergence_summary.csv", index=False)
    print(summary.to_string(index=False))


def _lorenz(config: RunConfig, out) -> None:
    s = config.system
    dt = min(s.dt_solver, 1e-2)
    params = SystemParams(kind=SystemKind.LORENZ, sigma=s.sigma, rho=s.rho, beta=s.beta, dt_solver=dt, seed=s.seed)
    traj = simulate(params, 2000, burn_in=1000, stride=1)
    series = jacobian_series(LorenzStepMap(dt, 1, s.sigma, s.rho, s.beta), list(traj.frames), 0, len(traj) - 1)
    lam = lorenz_lyapunov(traj.frames[0], dt=dt, n_steps=50_000, sigma=s.sigma, rho=s.rho, beta=s.beta)
    row = {"lyapunov": lam, "jacobian_growth_rate": series.growth_rate / dt}
    pd.DataFrame([row]).to_csv(out / "lorenz.csv", index=False)
    print(f"lorenz lyapunov={lam:.4f} jacobian_growth_rate={row['jacobian_growth_rate']:.4f}")


def _toy(config: RunConfig, out) -> None:
    mu, cov = gaussian_target()
    model = ToyVelocityMLP(seed=config.training.seed)
    losses = train_gaussian_toy(model, mu, cov, seed=config.training.seed)
    samples = sample_gaussian_toy(model, 10_000, steps=config.twin.steps, seed=config.twin.seed)
    mean_err = float(np.linalg.norm(samples.mean(axis=0) - mu) / np.linalg.norm(mu))
    cov_err = float(np.linalg.norm(np.cov(samples.T) - cov) / np.linalg.norm(cov))
    pd.DataFrame([{"mean_rel_error": mean_err, "cov_rel_error": cov_err, "final_loss": losses[-1]}]).to_csv(
        out / "toy.csv", index=False)
    print(f"toy mean_rel_error={mean_err:.4f} cov_rel_error={cov_err:.4f}")


def _window_sweep(config: RunConfig, out) -> None:
    tw, ev = config.twin, config.eval
    model = load_trained(config, ModelKind.PAINT)
    traj = test_trajectories(config)[0]
    probes = constellation_probes(tw.constellation, traj.grid_shape, config.system.k_f,
                                  tw.grid_probes, tw.vertical_probes, tw.probe_file)
    h_values = [h for h in ev.window_sweep_h if h <= model.config.history]
    start = max(tw.start, max(h_values) - 1)
    horizon = min(tw.horizon, len(traj) - start)
    result = window_sweep(model, traj, probes, h_values, start, horizon,
                          seeds=[tw.seed + i for i in range(ev.sweep_seeds)], steps=tw.steps,
                          noise_sigma=tw.noise_sigma)
    frame = pd.DataFrame({"h": result.h_values, "mse": result.mse_mean, "mse_std": result.mse_std})
    frame.to_csv(out / "window_sweep.csv", index=False)
    print(frame.to_string(index=False))


def _jacobian(config: RunConfig, out) -> None:
    tw, ev = config.twin, config.eval
    traj = test_trajectories(config)[0]
    probes = constellation_probes(tw.constellation, traj.grid_shape, config.system.k_f,
                                  tw.grid_probes, tw.vertical_probes, tw.probe_file)
    ar = load_trained(config, ModelKind.AR)
    paint = load_trained(config, ModelKind.PAINT)
    k = max(ev.jacobian_k, ar.config.context - 1, paint.config.history - 1)
    t = min(k + ev.jacobian_t, len(traj) - 1)
    ar_series = ar_jacobian_series(ar, traj, probes, k, t)

    stream = measurement_stream(traj, probes)
    stepper = SlidingWindowStepper(paint, stream, TwinConfig(h=paint.config.history, steps=tw.steps, seed=tw.seed))
    frames = [f.reshape(-1) for f in traj.normalized()[:t + 1]]
    paint_series = jacobian_series(PaintStepMap(stepper), frames, k, t, iterations=2)
    frame = pd.DataFrame({
        "step": ar_series.steps,
        "ar": ar_series.log_product_norms,
        "paint": paint_series.log_product_norms,
    })
    frame.to_csv(out / "jacobian_series.csv", index=False)
    print(frame.to_string(index=False))


def run(args, config: RunConfig) -> int:
    chosen = [name for name in ("logistic", "lorenz", "toy", "window_sweep", "jacobian") if getattr(args, name)]
    if not chosen:
        raise ConfigError("diagnose needs at least one of --logistic, --lorenz, --toy, --window-sweep, --jacobian")
    out = report_dir(config)
    handlers = {
        "logistic": _logistic,
        "lorenz": _lorenz,
        "toy": _toy,
        "window_sweep": _window_sweep,
        "jacobian": _jacobian,
    }
    for name in chosen:
        logger.info(f"Running diagnostic '{name}'")
        handlers[name](config, out)
    return 0
