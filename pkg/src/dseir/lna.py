"""Linear noise approximation of cumulative incidence.

Incidence coordinates ``n`` relate to prevalence through
``x = x0 + A' n``. The LNA writes ``N_t = eta_t + R_t`` where ``eta`` solves
the rate equations and the residual is Gaussian with fundamental matrix
``G`` and covariance ``V``; all three are co-integrated with explicit Euler.

The forward filter tracks the Gaussian law of cumulative incidence at the
observation times. At every window start the integration restarts from the
filtered mean with ``G = I`` and ``V = 0``; the filtered covariance ``C``
enters the predictive through ``G C G'``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .model import ModelSpec, StaticParams
from .observation import ObservationSeries, ObsModelSpec, obs_gaussian_moments, sample_obs
from .pmmh import Chain, prior_center, random_walk_mh
from .priors import PriorSet

VAR_FLOOR = 1e-6
_LOG_2PI = np.log(2.0 * np.pi)


class LnaNumericalError(FloatingPointError):
    """The ODE integration produced non-finite values."""


def _check_spec(spec: ModelSpec):
    if spec.time_varying_contact or spec.time_varying_reporting:
        raise ValueError("the LNA supports constant contact and reporting rates only")


def _rate_coefficients(theta: StaticParams, spec: ModelSpec):
    beta = float(theta.beta)
    if spec.contact_scaling == "frequency":
        beta /= spec.pop_size
    kappa = float(theta.kappa) if spec.kind == "SEIR" else 0.0
    return beta, kappa, float(theta.gamma)


def _raw_hazard(n, x0, theta: StaticParams, spec: ModelSpec):
    x = np.asarray(x0, dtype=float) + np.asarray(n, dtype=float) @ spec.net_effect
    beta, kappa, gamma = _rate_coefficients(theta, spec)
    s, i = x[..., 0], x[..., -1]
    if spec.kind == "SIR":
        return np.stack([beta * s * i, gamma * i], axis=-1), x
    return np.stack([beta * s * i, kappa * x[..., 1], gamma * i], axis=-1), x


def incidence_hazard(n, x0, theta: StaticParams, spec: ModelSpec) -> np.ndarray:
    """Hazard as a function of cumulative incidence, clamped at zero."""
    h, _ = _raw_hazard(n, x0, theta, spec)
    return np.maximum(h, 0.0)


def jacobian(n, x0, theta: StaticParams, spec: ModelSpec) -> np.ndarray:
    """d h*(n) / d n, with zero rows where the hazard is clamped."""
    h, x = _raw_hazard(n, x0, theta, spec)
    beta, kappa, gamma = _rate_coefficients(theta, spec)
    s, i = x[0], x[-1]
    C = spec.n_compartments
    dx = np.zeros((spec.n_reactions, C))  # d h / d x
    dx[0, 0], dx[0, C - 1] = beta * i, beta * s
    if spec.kind == "SEIR":
        dx[1, 1] = kappa
    dx[-1, C - 1] = gamma
    F = dx @ spec.net_effect.T
    F[h < 0] = 0.0
    return F


@dataclass
class LnaState:
    eta: np.ndarray
    G: np.ndarray
    V: np.ndarray

    @classmethod
    def reset(cls, eta) -> "LnaState":
        eta = np.array(eta, dtype=float)
        d = eta.shape[0]
        return cls(eta=eta, G=np.eye(d), V=np.zeros((d, d)))


@njit(cache=True)
def _euler(eta, G, V, x0, A, beta, kappa, gamma, n_steps, dt):
    # Same hazard and Jacobian as incidence_hazard/jacobian, unrolled.
    R, C = A.shape
    x = np.empty(C)
    h = np.empty(R)
    dx = np.zeros((R, C))
    F = np.empty((R, R))
    FV = np.empty((R, R))
    FG = np.empty((R, R))
    for _ in range(n_steps):
        for c in range(C):
            acc = x0[c]
            for r in range(R):
                acc += A[r, c] * eta[r]
            x[c] = acc
        s, i = x[0], x[C - 1]
        h[0] = beta * s * i
        h[R - 1] = gamma * i
        dx[0, 0] = beta * i
        dx[0, C - 1] = beta * s
        dx[R - 1, C - 1] = gamma
        if R == 3:
            h[1] = kappa * x[1]
            dx[1, 1] = kappa
        for r in range(R):
            for q in range(R):
                acc = 0.0
                if h[r] >= 0.0:
                    for c in range(C):
                        acc += dx[r, c] * A[q, c]
                F[r, q] = acc
            if h[r] < 0.0:
                h[r] = 0.0
        for r in range(R):
            for q in range(R):
                a1 = 0.0
                a2 = 0.0
                for p in range(R):
                    a1 += F[r, p] * V[p, q]
                    a2 += F[r, p] * G[p, q]
                FV[r, q] = a1
                FG[r, q] = a2
        for r in range(R):
            eta[r] += h[r] * dt
            for q in range(R):
                G[r, q] += FG[r, q] * dt
        for r in range(R):
            for q in range(r, R):
                v = V[r, q] + (FV[r, q] + FV[q, r]) * dt
                if r == q:
                    v += h[r] * dt
                V[r, q] = v
                V[q, r] = v
    return eta, G, V


def integrate_lna(state: LnaState, theta: StaticParams, x0, duration: float,
                  ode_step: float, spec: ModelSpec) -> LnaState:
    """Explicit Euler for d eta = h*, dG = F G, dV = V F' + diag(h*) + F V.

    V is kept exactly symmetric by updating its upper triangle and mirroring.
    """
    _check_spec(spec)
    n_steps = int(round(duration / ode_step))
    if abs(n_steps * ode_step - duration) > 1e-9 * max(1.0, duration):
        raise ValueError(f"ode_step={ode_step} does not divide duration {duration}")
    beta, kappa, gamma = _rate_coefficients(theta, spec)
    eta, G, V = _euler(state.eta.astype(float).copy(), state.G.astype(float).copy(),
                       state.V.astype(float).copy(), np.asarray(x0, dtype=float),
                       spec.net_effect.astype(float), beta, kappa, gamma, n_steps,
                       float(ode_step))
    if not (np.all(np.isfinite(eta)) and np.all(np.isfinite(G)) and np.all(np.isfinite(V))):
        raise LnaNumericalError(f"non-finite LNA solution for parameters {theta}")
    return LnaState(eta=eta, G=G, V=V)


@dataclass
class LnaFilterResult:
    log_likelihood: float
    loglik_increments: np.ndarray
    means: np.ndarray  # filtered mean of cumulative incidence at each observation
    covs: np.ndarray
    predictive_mean: np.ndarray  # of y
    predictive_var: np.ndarray


def lna_window_moments(mean, cov, theta: StaticParams, x0, spacing: float,
                       ode_step: float, spec: ModelSpec, deterministic: bool = False):
    """Joint Gaussian of (N at window start, N at window end).

    Returns (eta_end, cov_end, cross) where ``cross = Cov(N_end, N_start)``.
    """
    st = integrate_lna(LnaState.reset(mean), theta, x0, spacing, ode_step, spec)
    if deterministic:
        z = np.zeros_like(st.V)
        return st.eta, z, z
    G = st.G
    cross = G @ cov
    cov_end = cross @ G.T + st.V
    return st.eta, 0.5 * (cov_end + cov_end.T), cross


def lna_forward_filter(theta: StaticParams, data: ObservationSeries, x0, spec: ModelSpec,
                       obs: ObsModelSpec, ode_step: float = 0.01,
                       deterministic: bool = False) -> LnaFilterResult:
    """Gaussian forward filter giving the LNA marginal likelihood.

    The observation is approximated by Y ~ N(rho P' dN, mu + mu^2/nu) with
    mu = rho P' E(dN) the predicted mean (Binomial: rho(1-rho) P' E(dN)).
    ``deterministic`` switches off the LNA noise so that the likelihood is
    the Gaussian observation density at the deterministic increments.
    """
    _check_spec(spec)
    d = spec.n_reactions
    k = obs.observed_reaction
    rho = float(theta.rho)
    mean, cov = np.zeros(d), np.zeros((d, d))
    L = len(data)
    incs = np.empty(L)
    means, covs = np.empty((L, d)), np.empty((L, d, d))
    pm, pv = np.empty(L), np.empty(L)
    for w, y in enumerate(data.counts):
        eta, cov_end, cross = lna_window_moments(mean, cov, theta, x0, data.spacing, ode_step,
                                                 spec, deterministic)
        expected = eta[k] - mean[k]
        mu_hat, sigma2 = obs_gaussian_moments(0.0, max(expected, 0.0), rho, theta.nu, obs)
        # Cov(dN, N_end) and Var(dN) on the observed component
        c_dn_end = cov_end[k] - cross[:, k]
        var_dn = cov_end[k, k] - 2.0 * cross[k, k] + cov[k, k]
        f = rho * expected
        q = max(rho ** 2 * var_dn + float(sigma2), VAR_FLOOR)
        resid = float(y) - f
        incs[w] = -0.5 * (_LOG_2PI + np.log(q) + resid ** 2 / q)
        gain = rho * c_dn_end / q
        mean = eta + gain * resid
        cov = cov_end - q * np.outer(gain, gain)
        cov = 0.5 * (cov + cov.T)
        means[w], covs[w], pm[w], pv[w] = mean, cov, f, q
    return LnaFilterResult(log_likelihood=float(incs.sum()), loglik_increments=incs,
                           means=means, covs=covs, predictive_mean=pm, predictive_var=pv)


def _gaussian_draw(rng, mean, cov):
    vals, vecs = np.linalg.eigh(0.5 * (cov + cov.T))
    root = vecs * np.sqrt(np.clip(vals, 0.0, None))
    return mean + root @ rng.standard_normal(len(mean))


def lna_params(values: dict) -> StaticParams:
    return StaticParams.from_dict(values)


def run_lna_mh(spec: ModelSpec, obs: ObsModelSpec, priors: PriorSet, data: ObservationSeries,
               n_iters: int, proposal_cov, seed: int, ode_step: float = 0.01,
               init: Optional[dict] = None) -> Chain:
    """Marginal random-walk MH targeting the LNA posterior."""
    _check_spec(spec)
    if not priors.initial_state.is_fixed:
        raise ValueError("the LNA fit needs a fixed initial state")
    x0 = np.array(priors.initial_state.values, dtype=float)
    names = priors.free()
    fixed = {k: float(p.value) for k, p in priors.params.items() if k not in names}
    start = {n: prior_center(priors.params[n]) for n in names}
    if init:
        start.update({k: v for k, v in init.items() if k in start})

    def loglik(theta, it):
        try:
            res = lna_forward_filter(lna_params({**fixed, **theta}), data, x0, spec, obs,
                                     ode_step)
        except LnaNumericalError:
            return -np.inf
        return res.log_likelihood

    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(2,)))
    return random_walk_mh(loglik, priors.params, names, start, proposal_cov, n_iters, rng)


def lna_forecast(chain: Chain, priors: PriorSet, spec: ModelSpec, obs: ObsModelSpec,
                 data: ObservationSeries, n_samples: int, seed: int, ode_step: float = 0.01,
                 burn_in: float = 0.1) -> np.ndarray:
    """One-step-ahead predictive draws of the observation after ``data``.

    A thinned set of chain draws is taken; for each, the cumulative
    incidence at the last observation time is drawn from its filtered
    Gaussian and propagated over one window, then passed through the
    observation model.
    """
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(3,)))
    x0 = np.array(priors.initial_state.values, dtype=float)
    fixed = {k: float(p.value) for k, p in priors.params.items() if k not in chain.names}
    start = int(burn_in * len(chain.samples))
    pool = chain.samples[start:]
    idx = np.linspace(0, len(pool) - 1, n_samples).round().astype(int)
    k = obs.observed_reaction
    out = np.empty(n_samples, dtype=np.int64)
    for j, row in enumerate(pool[idx]):
        theta = lna_params({**fixed, **dict(zip(chain.names, row))})
        res = lna_forward_filter(theta, data, x0, spec, obs, ode_step)
        mean, cov = res.means[-1], res.covs[-1]
        n_prev = _gaussian_draw(rng, mean, cov)
        st = integrate_lna(LnaState.reset(mean), theta, x0, data.spacing, ode_step, spec)
        n_next = _gaussian_draw(rng, st.eta + st.G @ (n_prev - mean), st.V)
        dn = max(float(n_next[k] - n_prev[k]), 0.0)
        inc = np.zeros(spec.n_reactions)
        inc[k] = dn
        if obs.family == "binomial":
            inc[k] = np.round(dn)
        out[j] = sample_obs(inc, theta.rho, theta.nu, obs, rng)
    return out
