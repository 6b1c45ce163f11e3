"""Gillespie direct-method simulator for the constant-rate MJP.

Kept as a test oracle only; inference never calls it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelSpec, StaticParams


@dataclass
class GillespiePath:
    init_state: np.ndarray
    times: np.ndarray  # event times
    reactions: np.ndarray  # reaction index of each event
    net_effect: np.ndarray

    def states(self) -> np.ndarray:
        """State immediately after each event (row 0 is the initial state)."""
        jumps = self.net_effect[self.reactions]
        return np.vstack([self.init_state, self.init_state + np.cumsum(jumps, axis=0)])

    def state_at(self, t) -> np.ndarray:
        """Right-continuous state at time(s) ``t``."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right")
        return self.states()[idx]


def gillespie_simulate(spec: ModelSpec, params: StaticParams, init_state, t_end: float,
                       rng: np.random.Generator) -> GillespiePath:
    if spec.time_varying_contact:
        raise ValueError("the Gillespie oracle requires a constant contact rate")
    # Scalar arithmetic on plain Python numbers: written independently of
    # model.hazard so the oracle does not share code with what it checks.
    x = [int(v) for v in init_state]
    A = spec.net_effect
    rows = [list(map(int, row)) for row in A]
    beta = float(params.beta)
    if spec.contact_scaling == "frequency":
        beta /= spec.pop_size
    gamma = float(params.gamma)
    kappa = float(params.kappa) if spec.kind == "SEIR" else 0.0
    seir = spec.kind == "SEIR"
    t = 0.0
    times, reactions = [], []
    while True:
        s, i = x[0], x[-1]
        h = [beta * s * i, kappa * x[1], gamma * i] if seir else [beta * s * i, gamma * i]
        total = sum(h)
        if total <= 0:
            break
        t += rng.exponential(1.0 / total)
        if t > t_end:
            break
        u = rng.random() * total
        r, acc = 0, h[0]
        while u >= acc and r < len(h) - 1:
            r += 1
            acc += h[r]
        x = [a + b for a, b in zip(x, rows[r])]
        times.append(t)
        reactions.append(r)
    return GillespiePath(init_state=np.array(init_state, dtype=np.int64),
                         times=np.array(times, dtype=float),
                         reactions=np.array(reactions, dtype=np.int64), net_effect=A)
