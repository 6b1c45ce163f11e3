"""Prior distributions with the unconstrained transforms used by MCMC and jitter.

Gamma priors use the shape-rate convention (density proportional to
x**(a-1) * exp(-b*x)).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import stats
from scipy.special import betaln, expit, log_expit, logit


@dataclass(frozen=True)
class Fixed:
    value: float

    def sample(self, rng, size):
        return np.full(size, float(self.value))


@dataclass(frozen=True)
class Gamma:
    shape: float
    rate: float

    def __post_init__(self):
        if self.shape <= 0 or self.rate <= 0:
            raise ValueError("Gamma hyper-parameters must be positive")

    def sample(self, rng, size):
        return rng.gamma(self.shape, 1.0 / self.rate, size)

    def logpdf(self, x):
        return stats.gamma.logpdf(x, self.shape, scale=1.0 / self.rate)

    @property
    def mean(self):
        return self.shape / self.rate

    @property
    def var(self):
        return self.shape / self.rate ** 2

    def to_unconstrained(self, x):
        return np.log(x)

    def from_unconstrained(self, u):
        return np.exp(u)

    def logpdf_unconstrained(self, u):
        return self.logpdf(np.exp(u)) + u


@dataclass(frozen=True)
class Beta:
    a: float
    b: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("Beta hyper-parameters must be positive")

    def sample(self, rng, size):
        return rng.beta(self.a, self.b, size)

    def logpdf(self, x):
        return stats.beta.logpdf(x, self.a, self.b)

    @property
    def mean(self):
        return self.a / (self.a + self.b)

    @property
    def var(self):
        s = self.a + self.b
        return self.a * self.b / (s * s * (s + 1))

    def to_unconstrained(self, x):
        return logit(x)

    def from_unconstrained(self, u):
        return expit(u)

    def logpdf_unconstrained(self, u):
        # a log x + b log(1 - x) in terms of u, stable in both tails
        u = np.asarray(u, dtype=float)
        return (self.a * log_expit(u) + self.b * log_expit(-u)
                - float(betaln(self.a, self.b)))


@dataclass(frozen=True)
class Normal:
    """Normal prior on a real-valued quantity (e.g. log beta_0)."""

    mean: float
    sd: float

    def sample(self, rng, size):
        return rng.normal(self.mean, self.sd, size)

    def logpdf(self, x):
        return stats.norm.logpdf(x, self.mean, self.sd)

    def to_unconstrained(self, x):
        return np.asarray(x, dtype=float)

    def from_unconstrained(self, u):
        return np.asarray(u, dtype=float)

    def logpdf_unconstrained(self, u):
        return self.logpdf(u)


@dataclass(frozen=True)
class LogitNormal:
    """Probability whose logit is Normal(mean, sd**2)."""

    mean: float
    sd: float

    def sample(self, rng, size):
        return expit(rng.normal(self.mean, self.sd, size))

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return stats.norm.logpdf(logit(x), self.mean, self.sd) - np.log(x) - np.log1p(-x)

    def to_unconstrained(self, x):
        return logit(x)

    def from_unconstrained(self, u):
        return expit(u)

    def logpdf_unconstrained(self, u):
        return stats.norm.logpdf(u, self.mean, self.sd)


@dataclass(frozen=True)
class InvSqrtUniform:
    """Over-dispersion nu with 1/sqrt(nu) ~ Uniform(0, upper)."""

    upper: float

    def sample(self, rng, size):
        u = rng.uniform(0.0, self.upper, size)
        return 1.0 / np.maximum(u, 1e-300) ** 2

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        ok = x > 1.0 / self.upper ** 2
        with np.errstate(divide="ignore", invalid="ignore"):
            val = -np.log(self.upper) - np.log(2.0) - 1.5 * np.log(x)
        return np.where(ok, val, -np.inf)

    def to_unconstrained(self, x):
        return np.log(x)

    def from_unconstrained(self, u):
        return np.exp(u)

    def logpdf_unconstrained(self, u):
        return self.logpdf(np.exp(u)) + u


Prior = Union[Fixed, Gamma, Beta, Normal, LogitNormal, InvSqrtUniform]

# natural-scale parameter -> transform used for Liu-West jitter and random walks
PARAM_TRANSFORMS = {
    "gamma": "log", "kappa": "log", "beta": "log", "lambda_beta": "log",
    "lambda_rho": "log", "nu": "log", "rho": "logit",
}


def to_unconstrained(name: str, x):
    return np.log(x) if PARAM_TRANSFORMS[name] == "log" else logit(x)


def from_unconstrained(name: str, u):
    return np.exp(u) if PARAM_TRANSFORMS[name] == "log" else expit(u)


@dataclass(frozen=True)
class InitialState:
    """Fixed initial counts or a product of independent categoricals."""

    values: tuple  # one entry per compartment: int or ((v, p), ...)

    @property
    def is_fixed(self) -> bool:
        return all(isinstance(v, (int, np.integer)) for v in self.values)

    def sample(self, rng, size) -> np.ndarray:
        cols = []
        for v in self.values:
            if isinstance(v, (int, np.integer)):
                cols.append(np.full(size, int(v), dtype=np.int64))
            else:
                vals = np.array([int(a) for a, _ in v])
                probs = np.array([float(p) for _, p in v])
                cols.append(vals[rng.choice(len(vals), size=size, p=probs / probs.sum())])
        return np.stack(cols, axis=-1)

    def max_total(self) -> int:
        return sum(int(v) if isinstance(v, (int, np.integer)) else max(int(a) for a, _ in v)
                   for v in self.values)


@dataclass(frozen=True)
class PriorSet:
    """Everything the filter needs to draw an initial particle cloud."""

    params: dict  # name -> Prior (Fixed for known values)
    initial_state: InitialState
    log_beta0: Optional[Prior] = None
    rho0: Optional[Prior] = None

    def free(self) -> list:
        return [k for k, p in self.params.items() if not isinstance(p, Fixed)]

    def with_fixed(self, values: dict) -> "PriorSet":
        params = dict(self.params)
        for k, v in values.items():
            params[k] = Fixed(float(v))
        return PriorSet(params=params, initial_state=self.initial_state,
                        log_beta0=self.log_beta0, rho0=self.rho0)
