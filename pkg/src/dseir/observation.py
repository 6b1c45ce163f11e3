"""Binomial and Negative-Binomial observation models for windowed incidence."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, xlog1py, xlogy

FAMILIES = ("binomial", "negative-binomial")
SIGMA2_FLOOR = 1e-6


@dataclass(frozen=True)
class ObsModelSpec:
    family: str
    observed_reaction: int
    dynamic_rho: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if self.family == "binomial" and self.dynamic_rho:
            raise ValueError("a dynamic reporting rate requires the negative-binomial family")

    def observed(self, incidence) -> np.ndarray:
        """P' applied to an incidence vector (last axis = reactions)."""
        return np.asarray(incidence)[..., self.observed_reaction]


@dataclass(frozen=True)
class ObservationSeries:
    """Counts on a regular time grid; window i covers (times[i] - spacing, times[i]]."""

    times: np.ndarray
    counts: np.ndarray
    spacing: float = 1.0

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "counts", counts)
        if times.shape != counts.shape or times.ndim != 1:
            raise ValueError("times and counts must be 1-d arrays of equal length")
        if np.any(counts < 0):
            raise ValueError("observed counts must be non-negative")
        if len(times) >= 2:
            d = np.diff(times)
            if np.any(d <= 0):
                raise ValueError("observation times must be strictly increasing")
            if not np.allclose(d, d[0], rtol=0, atol=1e-9 * max(1.0, abs(d[0]))):
                raise ValueError("observation times must be equally spaced")
            object.__setattr__(self, "spacing", float(d[0]))

    def __len__(self):
        return len(self.times)

    @property
    def t0(self) -> float:
        return float(self.times[0] - self.spacing) if len(self.times) else 0.0

    def head(self, n: int) -> "ObservationSeries":
        return ObservationSeries(self.times[:n], self.counts[:n], self.spacing)


def _check_domain(rho, nu, family):
    rho = np.asarray(rho, dtype=float)
    if np.any((rho < 0) | (rho > 1)):
        raise ValueError("reporting rate must lie in [0, 1]")
    if family == "negative-binomial":
        if nu is None or np.any(np.asarray(nu, dtype=float) <= 0):
            raise ValueError("over-dispersion nu must be positive")


def binomial_logpmf(y, n, rho) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    n = np.asarray(n, dtype=float)
    with np.errstate(invalid="ignore"):
        out = (gammaln(n + 1) - gammaln(y + 1) - gammaln(n - y + 1)
               + xlogy(y, rho) + xlog1py(n - y, -np.asarray(rho, dtype=float)))
    return np.where((y > n) | (y < 0), -np.inf, out)


def negbin_logpmf(y, mu, nu) -> np.ndarray:
    """Negative-Binomial with mean ``mu`` and variance ``mu + mu**2/nu``.

    Uses r = nu, p = nu/(nu + mu); ``mu == 0`` is a point mass at zero.
    """
    y = np.asarray(y, dtype=float)
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    total = nu + mu
    out = (gammaln(y + nu) - gammaln(nu) - gammaln(y + 1)
           + nu * (np.log(nu) - np.log(total)) + xlogy(y, mu) - y * np.log(total))
    return np.where(y < 0, -np.inf, out)


def obs_logpmf(y, window_incidence, rho, nu, obs: ObsModelSpec) -> np.ndarray:
    """log pi(y | window incidence); -inf for impossible observations."""
    _check_domain(rho, nu, obs.family)
    n = obs.observed(window_incidence)
    if obs.family == "binomial":
        return binomial_logpmf(y, n, rho)
    return negbin_logpmf(y, np.asarray(rho) * n, nu)


def sample_obs(window_incidence, rho, nu, obs: ObsModelSpec,
               rng: np.random.Generator) -> np.ndarray:
    _check_domain(rho, nu, obs.family)
    n = obs.observed(window_incidence)
    if obs.family == "binomial":
        return rng.binomial(np.asarray(n, dtype=np.int64), rho)
    mu = np.asarray(rho, dtype=float) * n
    nu = np.asarray(nu, dtype=float)
    mu, nu = np.broadcast_arrays(mu, nu)
    p = nu / (nu + mu)
    draws = rng.negative_binomial(nu, np.where(mu > 0, p, 0.5))
    return np.where(mu > 0, draws, 0)


def obs_gaussian_moments(incidence_so_far, predicted_remaining, rho, nu,
                         obs: ObsModelSpec):
    """Mean and variance of the Gaussian approximation to the observation.

    Both incidence arguments are the observed component only (P' already
    applied). The variance is floored at ``SIGMA2_FLOOR``.
    """
    total = np.asarray(incidence_so_far, dtype=float) + predicted_remaining
    rho = np.asarray(rho, dtype=float)
    mu_hat = rho * total
    if obs.family == "binomial":
        sigma2 = rho * (1 - rho) * total
    else:
        sigma2 = mu_hat + mu_hat ** 2 / nu
    return mu_hat, np.maximum(sigma2, SIGMA2_FLOOR)
