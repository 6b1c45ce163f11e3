"""Time-discretised SIR/SEIR transmission models.

States are integer count arrays whose last axis indexes compartments
(S, I) or (S, E, I); the removed count is implicit. Every function is
vectorised over any leading batch axes, so a particle cloud is simply a
``(N, n_compartments)`` array.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional

import numpy as np

KINDS = ("SIR", "SEIR")
CONTACT_MODES = ("constant", "brownian-log")
REPORTING_MODES = ("constant", "brownian-logit")
CONTACT_SCALINGS = ("mass-action", "frequency")

# Upper bound on a Poisson mean handed to numpy; the conservation cap makes
# anything larger irrelevant.
_MAX_POISSON_MEAN = 1e12


class StateViolation(RuntimeError):
    """A compartment count went negative."""


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    pop_size: int
    contact_mode: str = "constant"
    reporting_mode: str = "constant"
    contact_scaling: str = "mass-action"
    drift: str = "zero"
    diffusion: str = "precision"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.contact_mode not in CONTACT_MODES:
            raise ValueError(f"unknown contact_mode {self.contact_mode!r}")
        if self.reporting_mode not in REPORTING_MODES:
            raise ValueError(f"unknown reporting_mode {self.reporting_mode!r}")
        if self.contact_scaling not in CONTACT_SCALINGS:
            raise ValueError(f"unknown contact_scaling {self.contact_scaling!r}")
        if self.drift not in DRIFTS:
            raise ValueError(f"unknown drift {self.drift!r}")
        if self.diffusion not in DIFFUSIONS:
            raise ValueError(f"unknown diffusion {self.diffusion!r}")
        if self.pop_size <= 0:
            raise ValueError("pop_size must be positive")

    @cached_property
    def compartments(self) -> tuple:
        return ("S", "I") if self.kind == "SIR" else ("S", "E", "I")

    @cached_property
    def reactions(self) -> tuple:
        if self.kind == "SIR":
            return ("infection", "removal")
        return ("exposure", "infection", "removal")

    @property
    def n_compartments(self) -> int:
        return len(self.compartments)

    @property
    def n_reactions(self) -> int:
        return len(self.reactions)

    @cached_property
    def net_effect(self) -> np.ndarray:
        """Net effect matrix, one row per reaction."""
        if self.kind == "SIR":
            return np.array([[-1, 1], [0, -1]], dtype=np.int64)
        return np.array([[-1, 1, 0], [0, -1, 1], [0, 0, -1]], dtype=np.int64)

    @cached_property
    def observed_reaction(self) -> int:
        """Index of the reaction whose incidence is reported (new infections)."""
        return 0 if self.kind == "SIR" else 1

    @cached_property
    def obs_matrix(self) -> np.ndarray:
        P = np.zeros(self.n_reactions, dtype=np.int64)
        P[self.observed_reaction] = 1
        return P

    @cached_property
    def sources(self) -> tuple:
        """Compartment consumed by each reaction."""
        return tuple(int(np.flatnonzero(row == -1)[0]) for row in self.net_effect)

    @cached_property
    def effects(self) -> tuple:
        """Per reaction, the (compartment, change) pairs of its net effect."""
        return tuple(tuple((int(c), int(row[c])) for c in np.flatnonzero(row))
                     for row in self.net_effect)

    @property
    def time_varying_contact(self) -> bool:
        return self.contact_mode == "brownian-log"

    @property
    def time_varying_reporting(self) -> bool:
        return self.reporting_mode == "brownian-logit"


@dataclass
class StaticParams:
    """Static parameters; any field may be a scalar or a per-particle array."""

    gamma: object = None
    kappa: object = None
    beta: object = None
    lambda_beta: object = None
    lambda_rho: object = None
    rho: object = None
    nu: object = None

    @classmethod
    def from_dict(cls, d: dict) -> "StaticParams":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class RateState:
    log_beta: object = None
    logit_rho: object = None


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (n_steps + 1, *batch, C)
    increments: np.ndarray  # (n_steps, *batch, R)
    log_beta: Optional[np.ndarray] = None  # (n_steps + 1, *batch)
    logit_rho: Optional[np.ndarray] = None


# --- SDE registry -------------------------------------------------------------

DRIFTS: dict = {
    "zero": lambda x, lam: 0.0,
}

DIFFUSIONS: dict = {
    # scaled Brownian motion with precision lam
    "precision": lambda x, lam: np.asarray(lam, dtype=float) ** -0.5,
}


def register_sde(kind: str, name: str, fn: Callable) -> None:
    """Add a named drift (``kind='drift'``) or diffusion coefficient."""
    table = {"drift": DRIFTS, "diffusion": DIFFUSIONS}[kind]
    table[name] = fn


# --- hazards and increments ---------------------------------------------------

def contact_rate(params: StaticParams, rates: RateState, spec: ModelSpec):
    if spec.time_varying_contact:
        beta = np.exp(rates.log_beta)
    else:
        beta = params.beta
    if spec.contact_scaling == "frequency":
        beta = beta / spec.pop_size
    return beta


def hazard(state, params: StaticParams, rates: RateState, spec: ModelSpec) -> np.ndarray:
    """Reaction rates (per unit time) at ``state``."""
    state = np.asarray(state)
    s = state[..., 0]
    i = state[..., -1]
    contact = contact_rate(params, rates, spec) * s * i
    removal = params.gamma * i
    if spec.kind == "SIR":
        parts = (contact, removal)
    else:
        parts = (contact, params.kappa * state[..., 1], removal)
    shape = np.broadcast_shapes(*[np.shape(p) for p in parts])
    out = np.empty(shape + (len(parts),))
    for r, p in enumerate(parts):
        out[..., r] = p
    return out


def sde_step(rates: RateState, params: StaticParams, dtau: float, noise,
             spec: ModelSpec) -> RateState:
    """One Euler-Maruyama step of the log-contact (and logit-reporting) SDEs.

    ``noise`` holds standard normal draws; its last axis has length 2 when
    the reporting rate is dynamic (independent Brownian motions).
    """
    noise = np.asarray(noise, dtype=float)
    drift, diffusion = DRIFTS[spec.drift], DIFFUSIONS[spec.diffusion]
    sq = np.sqrt(dtau)
    log_beta, logit_rho = rates.log_beta, rates.logit_rho
    if spec.time_varying_reporting:
        z_beta, z_rho = noise[..., 0], noise[..., 1]
    else:
        z_beta, z_rho = noise, None
    if spec.time_varying_contact:
        x = np.asarray(log_beta, dtype=float)
        log_beta = (x + drift(x, params.lambda_beta) * dtau
                    + diffusion(x, params.lambda_beta) * sq * z_beta)
    if spec.time_varying_reporting:
        x = np.asarray(logit_rho, dtype=float)
        logit_rho = (x + drift(x, params.lambda_rho) * dtau
                     + diffusion(x, params.lambda_rho) * sq * z_rho)
    return RateState(log_beta=log_beta, logit_rho=logit_rho)


def sde_noise_shape(batch_shape: tuple, spec: ModelSpec) -> tuple:
    return tuple(batch_shape) + ((2,) if spec.time_varying_reporting else ())


def event_caps(state, events, spec: ModelSpec) -> np.ndarray:
    """Source-compartment capacity seen by each reaction.

    Reactions fire in fixed order within a sub-interval and their effects
    apply immediately, so the cap of reaction ``r`` includes the events of
    reactions ``< r``.
    """
    state = np.asarray(state, dtype=np.int64)
    events = np.asarray(events, dtype=np.int64)
    A = spec.net_effect
    caps = np.empty(np.broadcast_shapes(state.shape[:-1], events.shape[:-1])
                    + (spec.n_reactions,), dtype=np.int64)
    for r, src in enumerate(spec.sources):
        c = state[..., src].copy()
        for q in range(r):
            if A[q, src]:
                c = c + A[q, src] * events[..., q]
        caps[..., r] = c
    return caps


def truncate_events(state, raw, spec: ModelSpec) -> np.ndarray:
    """Cap raw Poisson counts so that no compartment goes negative."""
    state = np.asarray(state, dtype=np.int64)
    raw = np.asarray(raw, dtype=np.int64)
    shape = raw.shape[:-1] + state.shape[-1:]
    work = state.copy() if state.shape == shape else np.array(np.broadcast_to(state, shape))
    out = np.empty(raw.shape, dtype=np.int64)
    for r, (src, effect) in enumerate(zip(spec.sources, spec.effects)):
        k = np.minimum(raw[..., r], work[..., src])
        out[..., r] = k
        for c, a in effect:
            work[..., c] += a * k
    return out


def draw_increment(state, params: StaticParams, rates: RateState, spec: ModelSpec,
                   dtau: float, rng: np.random.Generator, rate=None) -> np.ndarray:
    """Truncated Poisson event counts over one sub-interval.

    ``rate`` overrides the hazard (the bridge passes its conditioned hazard).
    """
    if rate is None:
        rate = hazard(state, params, rates, spec)
    raw = rng.poisson(np.minimum(rate * dtau, _MAX_POISSON_MEAN))
    return truncate_events(state, raw, spec)


def apply_increment(state, inc, spec: ModelSpec) -> np.ndarray:
    new = np.asarray(state, dtype=np.int64) + np.asarray(inc, dtype=np.int64) @ spec.net_effect
    if np.any(new < 0):
        raise StateViolation("negative compartment count after increment; "
                             "truncation was bypassed")
    return new


def prevalence_from_incidence(init_state, increments, spec: ModelSpec) -> np.ndarray:
    """Reconstruct prevalence from the initial state and incidence increments.

    ``increments`` is a sequence of per-interval event vectors; they are
    summed along the first axis.
    """
    init_state = np.asarray(init_state, dtype=np.int64)
    inc = np.asarray(increments, dtype=np.int64)
    if inc.size == 0:
        return init_state.copy()
    total = inc.sum(axis=0) if inc.ndim > init_state.ndim else inc
    new = init_state + total @ spec.net_effect
    if np.any(new < 0):
        raise StateViolation("reconstructed prevalence has a negative compartment")
    return new


def forward_simulate(spec: ModelSpec, params: StaticParams, init_state,
                     init_rates: RateState, dtau: float, n_steps: int,
                     rng: np.random.Generator, t0: float = 0.0) -> Trajectory:
    """Exact simulation of the discretised model.

    Per step: hazard at the current state, truncated Poisson increment,
    state update, then one SDE step for the dynamic rates. ``init_state``
    may carry leading batch axes to simulate independent replicates.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    x = np.asarray(init_state, dtype=np.int64)
    batch = x.shape[:-1]
    states = np.empty((n_steps + 1,) + x.shape, dtype=np.int64)
    incs = np.empty((n_steps,) + batch + (spec.n_reactions,), dtype=np.int64)
    states[0] = x
    lb = lr = None
    if spec.time_varying_contact:
        lb = np.empty((n_steps + 1,) + batch)
        lb[0] = init_rates.log_beta
    if spec.time_varying_reporting:
        lr = np.empty((n_steps + 1,) + batch)
        lr[0] = init_rates.logit_rho
    rates = RateState(log_beta=None if lb is None else lb[0],
                      logit_rho=None if lr is None else lr[0])
    noise_shape = sde_noise_shape(batch, spec)
    for j in range(n_steps):
        inc = draw_increment(x, params, rates, spec, dtau, rng)
        x = x + inc @ spec.net_effect
        incs[j] = inc
        states[j + 1] = x
        if lb is not None or lr is not None:
            rates = sde_step(rates, params, dtau, rng.standard_normal(noise_shape), spec)
            if lb is not None:
                lb[j + 1] = rates.log_beta
            if lr is not None:
                lr[j + 1] = rates.logit_rho
    times = t0 + dtau * np.arange(n_steps + 1)
    return Trajectory(times=times, states=states, increments=incs, log_beta=lb,
                      logit_rho=lr)


def window_totals(increments: np.ndarray, steps_per_window: int) -> np.ndarray:
    """Sum sub-interval increments over consecutive windows of equal length."""
    n = increments.shape[0] // steps_per_window
    inc = increments[: n * steps_per_window]
    return inc.reshape((n, steps_per_window) + inc.shape[1:]).sum(axis=1)
