"""Sufficient statistics for the conjugate parameter conditionals.

Rate parameters (beta, kappa, gamma) have Gamma conditionals given the
complete incidence path, the random-walk precisions have Gamma
conditionals given the latent rate paths, and a static Binomial reporting
rate has a Beta conditional. Each block is stored per particle so the
whole object can be indexed by resampling ancestors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelSpec
from .observation import ObsModelSpec
from .priors import Beta, Fixed, Gamma

RATE_BLOCKS = ("beta", "kappa", "gamma")
PRECISION_BLOCKS = ("lambda_beta", "lambda_rho")


def conjugate_params(spec: ModelSpec, obs: ObsModelSpec, priors: dict) -> list:
    """Names of the parameters refreshed from their conjugate conditional."""
    active = ["gamma"]
    if spec.kind == "SEIR":
        active.append("kappa")
    if spec.time_varying_contact:
        active.append("lambda_beta")
    else:
        active.append("beta")
    if spec.time_varying_reporting:
        active.append("lambda_rho")
    elif obs.family == "binomial":
        active.append("rho")
    out = []
    for name in active:
        prior = priors.get(name)
        if prior is None or isinstance(prior, Fixed):
            continue
        want = Beta if name == "rho" else Gamma
        if not isinstance(prior, want):
            raise ValueError(f"{name} needs a {want.__name__} prior for conjugate updating, "
                             f"got {type(prior).__name__}")
        out.append(name)
    return out


@dataclass
class SufficientStats:
    blocks: dict  # name -> {field: array of shape (N,)}

    @property
    def size(self) -> int:
        for b in self.blocks.values():
            for v in b.values():
                return len(v)
        return 0

    def take(self, idx) -> "SufficientStats":
        return SufficientStats({n: {f: v[idx] for f, v in b.items()}
                                for n, b in self.blocks.items()})

    def add(self, deltas: dict) -> "SufficientStats":
        out = {}
        for n, b in self.blocks.items():
            d = deltas.get(n, {})
            out[n] = {f: (v + d[f]) if f in d else v for f, v in b.items()}
        return SufficientStats(out)

    @classmethod
    def concatenate(cls, parts) -> "SufficientStats":
        parts = list(parts)
        return cls({n: {f: np.concatenate([p.blocks[n][f] for p in parts])
                        for f in b} for n, b in parts[0].blocks.items()})

    def split(self, bounds) -> list:
        return [self.take(slice(a, b)) for a, b in bounds]

    def conditional(self, name: str):
        """(distribution, hyper-parameters) of the current conditional."""
        b = self.blocks[name]
        if name in RATE_BLOCKS:
            return "gamma", (b["shape"], b["rate"])
        if name in PRECISION_BLOCKS:
            return "gamma", (b["shape0"] + 0.5 * b["n_increments"],
                             b["rate0"] + 0.5 * b["sum_sq"])
        return "beta", (b["a0"] + b["sum_y"], b["b0"] + b["sum_PdN"] - b["sum_y"])


def init_stats(priors: dict, names, n: int) -> SufficientStats:
    """Statistics equal to the prior hyper-parameters, replicated ``n`` times."""
    blocks = {}
    for name in names:
        p = priors[name]
        if name in RATE_BLOCKS:
            blocks[name] = {"shape": np.full(n, float(p.shape)),
                            "rate": np.full(n, float(p.rate))}
        elif name in PRECISION_BLOCKS:
            blocks[name] = {"shape0": np.full(n, float(p.shape)),
                            "rate0": np.full(n, float(p.rate)),
                            "n_increments": np.zeros(n), "sum_sq": np.zeros(n)}
        elif name == "rho":
            blocks[name] = {"a0": np.full(n, float(p.a)), "b0": np.full(n, float(p.b)),
                            "sum_y": np.zeros(n), "sum_PdN": np.zeros(n)}
        else:
            raise ValueError(f"no conjugate block for {name!r}")
    return SufficientStats(blocks)


def _exposure(states, name: str, spec: ModelSpec) -> np.ndarray:
    s, i = states[..., 0], states[..., -1]
    if name == "gamma":
        return i
    if name == "kappa":
        return states[..., 1]
    g = s.astype(float) * i
    return g / spec.pop_size if spec.contact_scaling == "frequency" else g


def _event_index(name: str, spec: ModelSpec) -> int:
    if name == "beta":
        return 0
    if name == "kappa":
        return 1
    return spec.n_reactions - 1


def window_deltas(names, states, increments, dtau: float, spec: ModelSpec,
                  obs: ObsModelSpec, log_beta_path=None, logit_rho_path=None,
                  y=None) -> dict:
    """Contribution of one window to each statistic.

    ``states[j]`` is the state at the start of sub-interval ``j`` (the final
    state is ignored) and the rate paths include both window end points.
    """
    m = increments.shape[0]
    out = {}
    for name in names:
        if name in RATE_BLOCKS:
            r = _event_index(name, spec)
            out[name] = {"shape": increments[..., r].sum(axis=0).astype(float),
                         "rate": _exposure(states[:m], name, spec).sum(axis=0) * dtau}
        elif name in PRECISION_BLOCKS:
            path = log_beta_path if name == "lambda_beta" else logit_rho_path
            d = np.diff(np.asarray(path, dtype=float)[: m + 1], axis=0)
            out[name] = {"n_increments": np.full(d.shape[1:], float(m)),
                         "sum_sq": (d * d).sum(axis=0) / dtau}
        elif name == "rho":
            total = obs.observed(increments.sum(axis=0)).astype(float)
            out[name] = {"sum_y": np.full(total.shape, float(y)), "sum_PdN": total}
    return out


def update_stats(T: SufficientStats, states, increments, dtau: float, spec: ModelSpec,
                 obs: ObsModelSpec, log_beta_path=None, logit_rho_path=None,
                 y=None) -> SufficientStats:
    names = list(T.blocks)
    return T.add(window_deltas(names, states, increments, dtau, spec, obs,
                               log_beta_path, logit_rho_path, y))


def sample_conjugate(T: SufficientStats, rng: np.random.Generator) -> dict:
    out = {}
    for name in T.blocks:
        dist, (a, b) = T.conditional(name)
        if dist == "gamma":
            out[name] = rng.gamma(a, 1.0 / b)
        else:
            out[name] = rng.beta(a, b)
    return out
