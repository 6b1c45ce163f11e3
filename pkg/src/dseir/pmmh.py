"""Pseudo-marginal Metropolis-Hastings using the bootstrap filter likelihood.

Static parameters are walked on an unconstrained scale (log for rates and
precisions, logit for probabilities) with the prior density carrying the
Jacobian of that transform.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .model import ModelSpec
from .observation import ObservationSeries, ObsModelSpec
from .priors import Beta, Fixed, Gamma, LogitNormal, InvSqrtUniform, Normal, PriorSet
from .smc import FilterOptions, run_filter

RWM_SCALE = 2.38 ** 2


@dataclass
class Chain:
    names: list
    samples: np.ndarray  # (n_iters + 1, d), natural scale
    log_post: np.ndarray
    log_lik: np.ndarray
    accepted: np.ndarray

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted[1:].mean()) if len(self.accepted) > 1 else 1.0

    def column(self, name: str) -> np.ndarray:
        return self.samples[:, self.names.index(name)]

    def unconstrained(self, priors: dict) -> np.ndarray:
        return np.column_stack([priors[n].to_unconstrained(self.samples[:, k])
                                for k, n in enumerate(self.names)])


def prior_center(prior) -> float:
    """A sensible starting value: the prior mean (or its analogue)."""
    if isinstance(prior, (Gamma, Beta)):
        return float(prior.mean)
    if isinstance(prior, LogitNormal):
        return float(expit(prior.mean))
    if isinstance(prior, Normal):
        return float(prior.mean)
    if isinstance(prior, InvSqrtUniform):
        return float(1.0 / (0.5 * prior.upper) ** 2)
    if isinstance(prior, Fixed):
        return float(prior.value)
    raise TypeError(f"unsupported prior {prior!r}")


def _matrix_sqrt(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    if np.any(vals < -1e-12 * max(1.0, np.abs(vals).max())):
        raise ValueError("proposal covariance must be positive semi-definite")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def random_walk_mh(loglik: Callable, priors: dict, names: list, init: dict,
                   proposal_cov, n_iters: int, rng: np.random.Generator) -> Chain:
    """Gaussian random-walk MH on the unconstrained scale.

    ``loglik(params, iteration)`` may be noisy (pseudo-marginal); the stored
    value is always the one computed when the current state was accepted.
    A zero proposal covariance yields a constant chain in which every move
    is accepted without re-estimating the likelihood.
    """
    d = len(names)
    cov = np.atleast_2d(np.asarray(proposal_cov, dtype=float))
    if cov.shape != (d, d):
        raise ValueError(f"proposal covariance must be {d}x{d}")
    root = _matrix_sqrt(cov)
    degenerate = not np.any(root)
    u = np.array([priors[n].to_unconstrained(init[n]) for n in names], dtype=float)

    def natural(v):
        return {n: float(priors[n].from_unconstrained(v[k])) for k, n in enumerate(names)}

    def log_prior(v):
        return float(sum(priors[n].logpdf_unconstrained(v[k]) for k, n in enumerate(names)))

    lp = log_prior(u)
    ll = loglik(natural(u), 0)
    samples = np.empty((n_iters + 1, d))
    log_post = np.empty(n_iters + 1)
    log_lik = np.empty(n_iters + 1)
    accepted = np.zeros(n_iters + 1, dtype=bool)
    samples[0] = [natural(u)[n] for n in names]
    log_post[0], log_lik[0], accepted[0] = lp + ll, ll, True
    for it in range(1, n_iters + 1):
        if degenerate:
            acc = True
        else:
            u_new = u + root @ rng.standard_normal(d)
            lp_new = log_prior(u_new)
            acc = False
            if np.isfinite(lp_new):
                ll_new = loglik(natural(u_new), it)
                log_u = np.log(rng.random())
                if np.isfinite(ll_new) and log_u < (ll_new + lp_new) - (ll + lp):
                    u, lp, ll, acc = u_new, lp_new, ll_new, True
        nat = natural(u)
        samples[it] = [nat[n] for n in names]
        log_post[it], log_lik[it], accepted[it] = lp + ll, ll, acc
    return Chain(names=list(names), samples=samples, log_post=log_post, log_lik=log_lik,
                 accepted=accepted)


def estimate_loglik(params: dict, data: ObservationSeries, n_particles: int,
                    spec: ModelSpec, obs: ObsModelSpec, priors: PriorSet, dtau: float,
                    seed: int, bridge: bool = False) -> float:
    """Particle estimate of log p(y | params) with every static parameter held fixed.

    Latent initial conditions (state, log beta_0, rho_0) are still drawn
    from ``priors``. Returns -inf when every particle is incompatible.
    """
    if len(data) == 0:
        return 0.0
    fixed = priors.with_fixed(params)
    opts = FilterOptions(bridge=bridge, rejuvenate=False, summaries=False,
                         raise_on_collapse=False, block_size=max(n_particles, 1))
    res = run_filter(spec, obs, fixed, data, n_particles, dtau, seed, opts)
    if res.collapsed_at is not None:
        return -np.inf
    return res.log_likelihood


def iteration_seed(seed: int, iteration: int) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=(1, int(iteration)))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def run_pmmh(spec: ModelSpec, obs: ObsModelSpec, priors: PriorSet, data: ObservationSeries,
             n_iters: int, proposal_cov, n_particles: int, seed: int, dtau: float,
             init: Optional[dict] = None, bridge: bool = False) -> Chain:
    names = priors.free()
    params = priors.params
    start = {n: prior_center(params[n]) for n in names}
    if init:
        start.update({k: v for k, v in init.items() if k in start})

    def loglik(theta, it):
        return estimate_loglik(theta, data, n_particles, spec, obs, priors, dtau,
                               iteration_seed(seed, it), bridge=bridge)

    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(0,)))
    return random_walk_mh(loglik, params, names, start, proposal_cov, n_iters, rng)


def pilot_covariance(chain: Chain, priors: dict, burn_in: float = 0.1) -> np.ndarray:
    """Scaled empirical covariance of a pilot chain on the unconstrained scale."""
    u = chain.unconstrained(priors)
    u = u[int(burn_in * len(u)):]
    d = u.shape[1]
    return RWM_SCALE / d * np.atleast_2d(np.cov(u, rowvar=False))
