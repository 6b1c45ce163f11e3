"""Config-driven workflows shared by the CLI and the acceptance suite."""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.special import expit, logit

from .config import RunConfig
from .io import load_series
from .model import RateState, StaticParams, forward_simulate, window_totals
from .observation import ObservationSeries, sample_obs
from .smc import forecast_one_step, run_filter


def simulate(cfg: RunConfig, seed: Optional[int] = None):
    """Simulate a ground-truth trajectory and its observations.

    Returns ``(trajectory, observations)``; the latent path uses
    ``simulation.dtau`` and observations are window totals corrupted by the
    observation model (with the reporting rate at each window end).
    """
    sim = cfg.simulation
    if sim is None:
        raise ValueError("simulation: block required to simulate data")
    spec, obs = cfg.model_spec(), cfg.obs_spec()
    seed = sim.seed if seed is None else seed
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    fixed = {k: p.value for k, p in cfg.priors.items() if p.dist == "fixed"}
    truth = {**fixed, **sim.truth}
    params = StaticParams.from_dict(truth)
    x0 = cfg.prior_set().initial_state.sample(rng, 1)[0]
    rates = RateState(log_beta=truth.get("log_beta0"),
                      logit_rho=None if "rho0" not in truth else float(logit(truth["rho0"])))
    spacing = cfg.observation.spacing
    m = int(round(spacing / sim.dtau))
    traj = forward_simulate(spec, params, x0, rates, sim.dtau, m * sim.n_windows, rng)
    totals = window_totals(traj.increments, m)
    if traj.logit_rho is not None:
        rho = expit(traj.logit_rho[m::m])
    else:
        rho = params.rho
    y = sample_obs(totals, rho, params.nu, obs, rng)
    times = spacing * np.arange(1, sim.n_windows + 1)
    return traj, ObservationSeries(times, np.asarray(y, dtype=np.int64), spacing)


def observations(cfg: RunConfig, data_path: Optional[str] = None) -> ObservationSeries:
    """Data from ``data_path``/``io.data``, else simulated from the config."""
    path = data_path or cfg.io.data
    if path is not None:
        data = load_series(path)
        if len(data) >= 2 and abs(data.spacing - cfg.observation.spacing) > 1e-9:
            raise ValueError(f"observation.spacing: config says {cfg.observation.spacing} "
                             f"but the data are spaced {data.spacing}")
        return data
    if cfg.simulation is None:
        raise ValueError("io.data: no data file and no simulation block")
    return simulate(cfg)[1]


def forecast_targets(data: ObservationSeries, windows: int, skip_zero: bool = True) -> list:
    """Indices of the last ``windows`` observations (non-zero ones if asked)."""
    idx = [i for i in range(1, len(data)) if not skip_zero or data.counts[i] > 0]
    return idx[-windows:]


def one_step_forecasts(cfg: RunConfig, data: ObservationSeries, n_particles: int, seed: int,
                       targets: list, workers: Optional[int] = None) -> list:
    """Forecast ``data[i]`` from the filter after ``data[:i]`` for each target.

    A single filter pass over the data snapshots the cloud before each
    target window, so the forecasts use exactly the information available
    at the time.
    """
    spec, obs, priors = cfg.model_spec(), cfg.obs_spec(), cfg.prior_set()
    dtau = cfg.algorithm.dtau
    m = int(round(data.spacing / dtau))
    quantiles = tuple(cfg.algorithm.forecast.quantiles)
    wanted = set(i - 1 for i in targets)
    records = {}

    def snapshot(w, cloud):
        if w in wanted:
            f = forecast_one_step(cloud, spec, obs, dtau, m, seed, window=w + 1,
                                  quantiles=quantiles)
            records[w + 1] = {"time": float(data.times[w + 1]),
                              "observed": int(data.counts[w + 1]),
                              **f.summary, "samples": f.samples}

    last = max(targets)
    opts = cfg.filter_options(workers)
    opts.summaries = False
    run_filter(spec, obs, priors, data.head(last), n_particles, dtau, seed, opts,
               on_window=snapshot)
    return [records[i] for i in targets]
