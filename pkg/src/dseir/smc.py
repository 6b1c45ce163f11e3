"""Particle filter with conjugate rejuvenation and bridged incidence proposals.

Each window runs: Liu-West jitter of non-conjugate observation parameters,
blind propagation of the latent rate SDEs, bridged incidence over the
sub-intervals, importance weighting, resampling, sufficient-statistic
update and a fresh draw of the conjugate parameters.

Particles are processed in fixed-size blocks. Every random stream is keyed
by (seed, stage, window, block), so results do not depend on how many
worker processes evaluate the blocks.
"""

from __future__ import annotations

import logging
import multiprocessing as mp
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import expit, logit

from .bridge import propagate_window
from .conjugate import (SufficientStats, conjugate_params, init_stats,
                        sample_conjugate, window_deltas)
from .model import ModelSpec, RateState, StaticParams, sde_noise_shape, sde_step
from .observation import ObservationSeries, ObsModelSpec, obs_logpmf, sample_obs
from .priors import Fixed, PriorSet, from_unconstrained, to_unconstrained

log = logging.getLogger(__name__)

STAGE_INIT, STAGE_JITTER, STAGE_PROPAGATE, STAGE_RESAMPLE, STAGE_REJUVENATE, \
    STAGE_FORECAST = range(6)

NEGBIN_DEGENERACY_N = 4_000_000
JITTER_REGULARISER = 1e-10


class WeightCollapse(RuntimeError):
    """Every particle received zero weight."""


def stream(seed: int, stage: int, window: int = 0, block: int = 0) -> np.random.Generator:
    """Philox generator whose key is (seed, stage, window, block).

    Distinct keys give independent counter-based streams; stage < 2**8,
    window < 2**24 and block < 2**32.
    """
    word = (int(stage) << 56) | (int(window) << 32) | int(block)
    key = np.array([int(seed) % 2 ** 64, word], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


# --- elementary SMC operations ------------------------------------------------

def ess(weights) -> float:
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.sum(w * w))


def normalise_log_weights(logw):
    """Normalised weights and log-mean-weight from log-weights."""
    logw = np.asarray(logw, dtype=float)
    top = np.max(logw)
    if not np.isfinite(top):
        return None, -np.inf
    w = np.exp(logw - top)
    total = w.sum()
    return w / total, float(top + np.log(total / len(logw)))


def systematic_resample(weights, rng: np.random.Generator, n: Optional[int] = None):
    w = np.asarray(weights, dtype=float)
    if not np.any(w > 0):
        raise ValueError("cannot resample with all-zero weights")
    if abs(w.sum() - 1.0) > 1e-12 * max(1, len(w)) ** 0.5 * 10:
        raise ValueError("weights must sum to one")
    n = len(w) if n is None else n
    c = np.cumsum(w)
    c[-1] = 1.0
    u = (rng.random() + np.arange(n)) / n
    return np.minimum(np.searchsorted(c, u, side="right"), len(w) - 1)


def multinomial_resample(weights, rng: np.random.Generator, n: Optional[int] = None):
    w = np.asarray(weights, dtype=float)
    if not np.any(w > 0):
        raise ValueError("cannot resample with all-zero weights")
    n = len(w) if n is None else n
    return np.sort(rng.choice(len(w), size=n, p=w / w.sum()))


RESAMPLERS = {"systematic": systematic_resample, "multinomial": multinomial_resample}


def liu_west_moments(phi):
    phi = np.asarray(phi, dtype=float).reshape(len(phi), -1)
    mean = phi.mean(axis=0)
    d = phi - mean
    cov = d.T @ d / len(phi)
    return mean, cov


def liu_west_jitter(phi, a: float, s: float, rng: np.random.Generator,
                    mean=None, cov=None):
    """Shrink each particle towards the cloud mean and add N(0, s^2 V) noise.

    ``phi`` is ``(N,)`` or ``(N, d)`` on an unconstrained scale. ``mean``
    and ``cov`` default to the moments of ``phi`` itself; pass the global
    moments when jittering one block of a larger cloud.
    """
    phi = np.asarray(phi, dtype=float)
    flat = phi.reshape(len(phi), -1)
    if mean is None or cov is None:
        mean, cov = liu_west_moments(flat)
    d = flat.shape[1]
    chol = np.linalg.cholesky(np.atleast_2d(cov) + JITTER_REGULARISER * np.eye(d))
    z = rng.standard_normal(flat.shape)
    out = a * flat + (1 - a) * mean + s * z @ chol.T
    return out.reshape(phi.shape)


def liu_west_constants(delta: float):
    a = (3 * delta - 1) / (2 * delta)
    return a, float(np.sqrt(1 - a * a))


def filtering_summary(values, quantiles=(0.025, 0.975)) -> dict:
    """Mean and type-7 (linear interpolation) quantiles of equally weighted values."""
    v = np.asarray(values, dtype=float)
    qs = np.quantile(v, quantiles, axis=0)
    return {"mean": v.mean(axis=0), **{f"q{q}": qv for q, qv in zip(quantiles, qs)}}


# --- particle cloud -----------------------------------------------------------

@dataclass
class ParticleCloud:
    state: np.ndarray
    params: dict
    stats: SufficientStats
    window_incidence: np.ndarray
    log_beta: Optional[np.ndarray] = None
    logit_rho: Optional[np.ndarray] = None
    log_weight: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.state)

    def take(self, idx) -> "ParticleCloud":
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return ParticleCloud(state=self.state[idx],
                             params={k: v[idx] for k, v in self.params.items()},
                             stats=self.stats.take(idx),
                             window_incidence=self.window_incidence[idx],
                             log_beta=pick(self.log_beta), logit_rho=pick(self.logit_rho),
                             log_weight=pick(self.log_weight))

    def rho_now(self):
        if self.logit_rho is not None:
            return expit(self.logit_rho)
        return self.params.get("rho")

    def static_params(self) -> StaticParams:
        return StaticParams.from_dict(self.params)


def required_params(spec: ModelSpec, obs: ObsModelSpec) -> list:
    names = ["gamma"]
    if spec.kind == "SEIR":
        names.append("kappa")
    names.append("lambda_beta" if spec.time_varying_contact else "beta")
    names.append("lambda_rho" if spec.time_varying_reporting else "rho")
    if obs.family == "negative-binomial":
        names.append("nu")
    return names


def jittered_params(spec: ModelSpec, obs: ObsModelSpec, priors: PriorSet) -> list:
    if obs.family != "negative-binomial":
        return []
    names = ["nu"]
    if not spec.time_varying_reporting:
        names.insert(0, "rho")
    return [n for n in names if not isinstance(priors.params.get(n), Fixed)]


def block_bounds(n: int, block_size: int) -> list:
    return [(a, min(a + block_size, n)) for a in range(0, n, block_size)]


def init_cloud(spec: ModelSpec, obs: ObsModelSpec, priors: PriorSet, n: int, seed: int,
               block_size: int, conj_names) -> ParticleCloud:
    missing = [p for p in required_params(spec, obs) if p not in priors.params]
    if missing:
        raise ValueError(f"no prior or fixed value for {missing}")
    if spec.time_varying_contact and priors.log_beta0 is None:
        raise ValueError("a time-varying contact rate needs a log_beta0 prior")
    if spec.time_varying_reporting and priors.rho0 is None:
        raise ValueError("a dynamic reporting rate needs a rho0 prior")
    parts = []
    for b, (lo, hi) in enumerate(block_bounds(n, block_size)):
        rng = stream(seed, STAGE_INIT, 0, b)
        size = hi - lo
        params = {name: np.asarray(priors.params[name].sample(rng, size), dtype=float)
                  for name in required_params(spec, obs)}
        state = priors.initial_state.sample(rng, size)
        lb = priors.log_beta0.sample(rng, size) if spec.time_varying_contact else None
        lr = logit(priors.rho0.sample(rng, size)) if spec.time_varying_reporting else None
        parts.append(ParticleCloud(
            state=state, params=params,
            stats=init_stats(priors.params, conj_names, size),
            window_incidence=np.zeros((size, spec.n_reactions), dtype=np.int64),
            log_beta=None if lb is None else np.asarray(lb, dtype=float),
            logit_rho=lr))
    return concatenate_clouds(parts)


def concatenate_clouds(parts) -> ParticleCloud:
    parts = list(parts)
    cat = lambda name: (None if getattr(parts[0], name) is None  # noqa: E731
                        else np.concatenate([getattr(p, name) for p in parts]))
    return ParticleCloud(state=cat("state"),
                         params={k: np.concatenate([p.params[k] for p in parts])
                                 for k in parts[0].params},
                         stats=SufficientStats.concatenate(p.stats for p in parts),
                         window_incidence=cat("window_incidence"),
                         log_beta=cat("log_beta"), logit_rho=cat("logit_rho"),
                         log_weight=cat("log_weight"))


# --- propagation --------------------------------------------------------------

def draw_rate_paths(cloud: ParticleCloud, spec: ModelSpec, dtau: float, m: int,
                    rng: np.random.Generator):
    """Blind SDE paths over one window, shape (m + 1, N) each (or None)."""
    if not (spec.time_varying_contact or spec.time_varying_reporting):
        return None, None
    n = len(cloud)
    params = cloud.static_params()
    lb = np.empty((m + 1, n)) if spec.time_varying_contact else None
    lr = np.empty((m + 1, n)) if spec.time_varying_reporting else None
    rates = RateState(log_beta=cloud.log_beta, logit_rho=cloud.logit_rho)
    if lb is not None:
        lb[0] = cloud.log_beta
    if lr is not None:
        lr[0] = cloud.logit_rho
    noise = rng.standard_normal((m,) + sde_noise_shape((n,), spec))
    for j in range(m):
        rates = sde_step(rates, params, dtau, noise[j], spec)
        if lb is not None:
            lb[j + 1] = rates.log_beta
        if lr is not None:
            lr[j + 1] = rates.logit_rho
    return lb, lr


@dataclass
class _BlockTask:
    cloud: ParticleCloud
    spec: ModelSpec
    obs: ObsModelSpec
    y: int
    dtau: float
    m: int
    seed: int
    window: int
    block: int
    use_bridge: bool
    conj_names: tuple


def _propagate_block(task: _BlockTask) -> dict:
    cloud, spec, obs = task.cloud, task.spec, task.obs
    rng = stream(task.seed, STAGE_PROPAGATE, task.window, task.block)
    lb, lr = draw_rate_paths(cloud, spec, task.dtau, task.m, rng)
    rho_end = expit(lr[-1]) if lr is not None else cloud.params["rho"]
    params = cloud.static_params()
    path = propagate_window(cloud.state, lb, lr, params, task.y, task.m * task.dtau,
                            spec, obs, task.dtau, task.m, rng,
                            use_bridge=task.use_bridge, rho=rho_end)
    total = path.total
    with np.errstate(divide="ignore"):
        logw = (path.log_p - path.log_q
                + obs_logpmf(task.y, total, rho_end, params.nu, obs))
    deltas = window_deltas(task.conj_names, path.states, path.increments, task.dtau,
                           spec, obs, lb, lr, task.y)
    return {"state": path.end_state, "window_incidence": total,
            "log_beta": None if lb is None else lb[-1],
            "logit_rho": None if lr is None else lr[-1],
            "logw": logw, "deltas": deltas}


# --- the filter ---------------------------------------------------------------

@dataclass
class FilterOptions:
    bridge: bool = True
    rejuvenate: bool = True
    resampler: str = "systematic"
    liu_west_delta: float = 0.99
    workers: int = 1
    block_size: int = 8192
    quantiles: tuple = (0.025, 0.975)
    summaries: bool = True
    raise_on_collapse: bool = True


@dataclass
class FilterResult:
    times: np.ndarray
    rows: list
    loglik_increments: np.ndarray
    ess: np.ndarray
    cloud: ParticleCloud
    collapsed_at: Optional[int] = None

    @property
    def log_likelihood(self) -> float:
        return float(np.sum(self.loglik_increments))

    def summary(self, quantity: str) -> dict:
        """Per-time mean and quantile arrays for one quantity."""
        rows = [r for r in self.rows if r["quantity"] == quantity]
        keys = [k for k in rows[0] if k not in ("time", "quantity")]
        return {k: np.array([r[k] for r in rows]) for k in ["time"] + keys}


def cloud_quantities(cloud: ParticleCloud, spec: ModelSpec, priors: PriorSet) -> dict:
    q = {}
    for name, prior in priors.params.items():
        if name in cloud.params and not isinstance(prior, Fixed):
            q[name] = cloud.params[name]
    if cloud.log_beta is not None:
        q["beta_t"] = np.exp(cloud.log_beta)
    if cloud.logit_rho is not None:
        q["rho_t"] = expit(cloud.logit_rho)
    for c, name in enumerate(spec.compartments):
        q[name] = cloud.state[:, c]
    return q


def _make_executor(workers: int):
    if workers <= 1:
        return None
    try:
        ctx = mp.get_context("fork")
    except ValueError:  # pragma: no cover - platforms without fork
        ctx = mp.get_context()
    return ProcessPoolExecutor(max_workers=workers, mp_context=ctx)


def run_filter(spec: ModelSpec, obs: ObsModelSpec, priors: PriorSet,
               data: ObservationSeries, n_particles: int, dtau: float, seed: int,
               options: Optional[FilterOptions] = None, executor=None,
               on_window=None) -> FilterResult:
    """Run the filter over ``data``.

    ``on_window(w, cloud)`` is called with the equally weighted cloud after
    window ``w`` has been assimilated (used for forecasting snapshots).
    """
    opts = options or FilterOptions()
    if n_particles < 2:
        raise ValueError("need at least two particles")
    m = int(round(data.spacing / dtau))
    if m < 1 or abs(m * dtau - data.spacing) > 1e-9 * max(1.0, data.spacing):
        raise ValueError(f"dtau={dtau} does not divide the observation spacing {data.spacing}")
    conj = tuple(conjugate_params(spec, obs, priors.params)) if opts.rejuvenate else ()
    jit = jittered_params(spec, obs, priors) if opts.rejuvenate else []
    if jit and n_particles < NEGBIN_DEGENERACY_N:
        warnings.warn(f"jittered observation parameters with N={n_particles} < "
                      f"{NEGBIN_DEGENERACY_N}; the parameter cloud may degenerate",
                      RuntimeWarning, stacklevel=2)
    a_lw, s_lw = liu_west_constants(opts.liu_west_delta)
    resample = RESAMPLERS[opts.resampler]
    bounds = block_bounds(n_particles, opts.block_size)

    cloud = init_cloud(spec, obs, priors, n_particles, seed, opts.block_size, conj)
    own_executor = executor is None and opts.workers > 1
    pool = _make_executor(opts.workers) if own_executor else executor
    rows, incs, esses = [], [], []
    collapsed = None
    try:
        for w, (t, y) in enumerate(zip(data.times, data.counts)):
            y = int(y)
            if jit:
                cloud = _jitter(cloud, jit, a_lw, s_lw, seed, w, bounds)
            tasks = [_BlockTask(cloud.take(slice(lo, hi)), spec, obs, y, dtau, m, seed, w,
                                b, opts.bridge, conj) for b, (lo, hi) in enumerate(bounds)]
            results = list(pool.map(_propagate_block, tasks)) if pool else \
                [_propagate_block(task) for task in tasks]
            logw = np.concatenate([r["logw"] for r in results])
            weights, inc = normalise_log_weights(logw)
            if weights is None:
                collapsed = w
                msg = (f"total weight collapse at observation index {w} "
                       f"(time {t:g}, y={y}); every particle has zero likelihood")
                if opts.raise_on_collapse:
                    raise WeightCollapse(msg)
                log.debug(msg)
                incs.append(-np.inf)
                esses.append(0.0)
                break
            incs.append(inc)
            esses.append(ess(weights))
            cat = lambda k: (None if results[0][k] is None  # noqa: E731
                             else np.concatenate([r[k] for r in results]))
            stats = cloud.stats
            if conj:
                deltas = {n: {f: np.concatenate([r["deltas"][n][f] for r in results])
                              for f in results[0]["deltas"][n]} for n in conj}
                stats = stats.add(deltas)
            cloud = ParticleCloud(state=cat("state"), params=cloud.params, stats=stats,
                                  window_incidence=cat("window_incidence"),
                                  log_beta=cat("log_beta"), logit_rho=cat("logit_rho"),
                                  log_weight=logw)
            idx = resample(weights, stream(seed, STAGE_RESAMPLE, w))
            cloud = cloud.take(idx)
            cloud.log_weight = np.zeros(n_particles)
            if conj:
                cloud = _rejuvenate(cloud, seed, w, bounds)
            if opts.summaries:
                rows.extend(_summary_rows(cloud, spec, priors, float(t), esses[-1], inc,
                                          opts.quantiles))
            if on_window is not None:
                on_window(w, cloud)
    finally:
        if own_executor and pool is not None:
            pool.shutdown()
    return FilterResult(times=np.asarray(data.times[:len(incs)], dtype=float), rows=rows,
                        loglik_increments=np.array(incs), ess=np.array(esses), cloud=cloud,
                        collapsed_at=collapsed)


def _jitter(cloud, names, a, s, seed, window, bounds) -> ParticleCloud:
    phi = np.stack([to_unconstrained(n, cloud.params[n]) for n in names], axis=-1)
    mean, cov = liu_west_moments(phi)
    out = np.empty_like(phi)
    for b, (lo, hi) in enumerate(bounds):
        out[lo:hi] = liu_west_jitter(phi[lo:hi], a, s, stream(seed, STAGE_JITTER, window, b),
                                     mean=mean, cov=cov)
    params = dict(cloud.params)
    for k, n in enumerate(names):
        params[n] = from_unconstrained(n, out[:, k])
    return replace(cloud, params=params)


def _rejuvenate(cloud, seed, window, bounds) -> ParticleCloud:
    params = dict(cloud.params)
    fresh = [sample_conjugate(cloud.stats.take(slice(lo, hi)),
                              stream(seed, STAGE_REJUVENATE, window, b))
             for b, (lo, hi) in enumerate(bounds)]
    for name in fresh[0]:
        params[name] = np.concatenate([f[name] for f in fresh])
    return replace(cloud, params=params)


def _summary_rows(cloud, spec, priors, t, ess_value, inc, quantiles) -> list:
    rows = []
    for name, values in cloud_quantities(cloud, spec, priors).items():
        s = filtering_summary(values, quantiles)
        row = {"time": t, "quantity": name, "mean": float(s["mean"])}
        for q in quantiles:
            row[_qkey(q)] = float(s[f"q{q}"])
        row["ess"] = ess_value
        rows.append(row)
    row = {"time": t, "quantity": "loglik_increment", "mean": inc}
    for q in quantiles:
        row[_qkey(q)] = inc
    row["ess"] = ess_value
    rows.append(row)
    return rows


def _qkey(q: float) -> str:
    return f"q{int(round(q * 1000)):03d}"


# --- forecasting --------------------------------------------------------------

@dataclass
class Forecast:
    samples: np.ndarray
    summary: dict


def forecast_one_step(cloud: ParticleCloud, spec: ModelSpec, obs: ObsModelSpec,
                      dtau: float, m: int, seed: int, window: int = 0,
                      quantiles=(0.025, 0.25, 0.5, 0.75, 0.975)) -> Forecast:
    """Predictive draws of the next observation from an equally weighted cloud."""
    rng = stream(seed, STAGE_FORECAST, window)
    lb, lr = draw_rate_paths(cloud, spec, dtau, m, rng)
    rho_end = expit(lr[-1]) if lr is not None else cloud.params["rho"]
    params = cloud.static_params()
    path = propagate_window(cloud.state, lb, lr, params, None, m * dtau, spec, obs, dtau,
                            m, rng, use_bridge=False, rho=rho_end)
    y = sample_obs(path.total, rho_end, params.nu, obs, rng)
    return Forecast(samples=y, summary=forecast_summary(y, quantiles))


def forecast_summary(samples, quantiles=(0.025, 0.25, 0.5, 0.75, 0.975)) -> dict:
    y = np.asarray(samples, dtype=float)
    out = {"min": float(y.min()), "q1": float(np.quantile(y, 0.25)),
           "median": float(np.median(y)), "q3": float(np.quantile(y, 0.75)),
           "max": float(y.max()), "mean": float(y.mean())}
    for q in quantiles:
        out[_qkey(q)] = float(np.quantile(y, q))
    return out
