"""Observation-conditioned propagation of incidence over one window.

The conditioned hazard perturbs the observed reaction's rate towards the
value that would reproduce the next observation, using a joint Gaussian
approximation of the remaining incidence and the observation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, pdtrc, xlogy

from .model import (ModelSpec, RateState, StaticParams, event_caps, hazard,
                    truncate_events, _MAX_POISSON_MEAN)
from .observation import ObsModelSpec, obs_gaussian_moments


@dataclass
class WindowPath:
    states: np.ndarray  # (m + 1, *batch, C), state at the start of each sub-interval
    increments: np.ndarray  # (m, *batch, R)
    log_q: np.ndarray
    log_p: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.increments.sum(axis=0)

    @property
    def end_state(self) -> np.ndarray:
        return self.states[-1]


def conditioned_hazard(h, so_far, remaining, y, rho, nu, obs: ObsModelSpec) -> np.ndarray:
    """Hazard conditioned on the observation ``y`` at the window end.

    ``h`` has reactions on its last axis, ``so_far`` is the observed
    incidence accumulated since the window start and ``remaining`` the time
    left until the observation (> 0).
    """
    h = np.asarray(h, dtype=float)
    k = obs.observed_reaction
    hk = h[..., k]
    mu_hat, sigma2 = obs_gaussian_moments(so_far, hk * remaining, rho, nu, obs)
    rho = np.asarray(rho, dtype=float)
    gain = rho * hk / (rho ** 2 * hk * remaining + sigma2)
    out = h.copy()
    out[..., k] = np.maximum(hk + gain * (y - mu_hat), 0.0)
    return out


def censored_poisson_logpmf(k, mean, cap) -> np.ndarray:
    """Log mass of min(X, cap) at ``k`` for X ~ Poisson(mean).

    At ``k == cap`` the mass is the upper tail P(X >= cap).
    """
    k = np.asarray(k)
    mean = np.asarray(mean, dtype=float)
    cap = np.asarray(cap)
    out = xlogy(k, mean) - mean - gammaln(k + 1.0)
    at_cap = k >= cap
    if np.any(at_cap):
        k_b, mean_b, cap_b = np.broadcast_arrays(k, mean, cap)
        m, c = mean_b[at_cap], cap_b[at_cap]
        with np.errstate(divide="ignore"):
            tail = np.where(c <= 0, 0.0, np.log(pdtrc(c - 1, m)))
        out = np.array(np.broadcast_to(out, k_b.shape))
        out[at_cap] = tail
    return out


def propagate_window(state, log_beta_path, logit_rho_path, params: StaticParams,
                     y, t_remaining0: float, spec: ModelSpec, obs: ObsModelSpec,
                     dtau: float, m: int, rng: np.random.Generator,
                     use_bridge: bool = True, rho=None) -> WindowPath:
    """Simulate incidence over ``m`` sub-intervals ending at the observation.

    ``log_beta_path`` holds the contact path at the sub-interval starts
    (leading axis of length >= m) and is ignored for constant contact.
    ``rho`` is the reporting rate at the window end. ``log_q``/``log_p``
    are the proposal and model log-densities of the sampled increments,
    each a product of (censored) Poisson masses. With ``use_bridge=False``
    the proposal is the model itself; both are then left at zero since only
    their difference enters the weights.
    """
    x = np.asarray(state, dtype=np.int64)
    batch = x.shape[:-1]
    states = np.empty((m + 1,) + x.shape, dtype=np.int64)
    incs = np.empty((m,) + batch + (spec.n_reactions,), dtype=np.int64)
    states[0] = x
    log_q = np.zeros(batch)
    log_p = np.zeros(batch)
    so_far = np.zeros(batch)
    k_obs = obs.observed_reaction
    nu = params.nu
    for j in range(m):
        rates = RateState(log_beta=None if log_beta_path is None else log_beta_path[j])
        h = hazard(x, params, rates, spec)
        if use_bridge:
            remaining = t_remaining0 - j * dtau
            h_star = conditioned_hazard(h, so_far, remaining, y, rho, nu, obs)
        else:
            h_star = h
        raw = rng.poisson(np.minimum(h_star * dtau, _MAX_POISSON_MEAN))
        inc = truncate_events(x, raw, spec)
        if use_bridge:
            caps = event_caps(x, inc, spec)
            lp = censored_poisson_logpmf(inc, h * dtau, caps)
            # only the observed reaction differs between proposal and model
            lq_k = censored_poisson_logpmf(inc[..., k_obs], h_star[..., k_obs] * dtau,
                                           caps[..., k_obs])
            lp_sum = lp.sum(axis=-1)
            log_p += lp_sum
            log_q += lp_sum - lp[..., k_obs] + lq_k
        x = x + inc @ spec.net_effect
        so_far = so_far + inc[..., k_obs]
        incs[j] = inc
        states[j + 1] = x
    return WindowPath(states=states, increments=incs, log_q=log_q, log_p=log_p)


def path_log_density(path: WindowPath, rate_fn, spec: ModelSpec, dtau: float) -> np.ndarray:
    """Full censored-Poisson log density of a window path under ``rate_fn``.

    ``rate_fn(j, state)`` returns the hazard used at sub-interval ``j``.
    Used by tests and diagnostics; the filter only needs the ratio.
    """
    total = np.zeros(path.states.shape[1:-1])
    for j in range(path.increments.shape[0]):
        x, inc = path.states[j], path.increments[j]
        caps = event_caps(x, inc, spec)
        total = total + censored_poisson_logpmf(inc, rate_fn(j, x) * dtau, caps).sum(axis=-1)
    return total
