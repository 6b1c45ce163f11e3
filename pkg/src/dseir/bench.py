"""Serial versus parallel timing of the particle filter."""

from __future__ import annotations

import hashlib
import os
import time

import numpy as np

from .config import RunConfig
from .smc import FilterResult, _make_executor, run_filter


def result_digest(res: FilterResult) -> str:
    """Hash of everything the filter returns, for bit-identity checks."""
    h = hashlib.sha256()
    h.update(np.asarray(res.loglik_increments).tobytes())
    h.update(np.asarray(res.ess).tobytes())
    for row in res.rows:
        h.update(repr(sorted(row.items())).encode())
    c = res.cloud
    h.update(c.state.tobytes())
    for k in sorted(c.params):
        h.update(np.asarray(c.params[k]).tobytes())
    for arr in (c.log_beta, c.logit_rho):
        if arr is not None:
            h.update(arr.tobytes())
    return h.hexdigest()


def available_cores() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover - non-Linux
        return os.cpu_count() or 1


def run_bench(cfg: RunConfig, data, particles_list, workers_list=(1, 8), seed=None,
              repeats: int = 1) -> list:
    """Time ``run_filter`` for every (N, workers) pair.

    Worker pools are started before the clock; each timing is the best of
    ``repeats`` runs. Rows carry the speed-up relative to the first worker
    count and whether the output digest matches it.
    """
    spec, obs, priors = cfg.model_spec(), cfg.obs_spec(), cfg.prior_set()
    seed = cfg.algorithm.seed if seed is None else seed
    rows = []
    for n in particles_list:
        base_time = base_digest = None
        for workers in workers_list:
            opts = cfg.filter_options(workers)
            pool = _make_executor(workers)
            try:
                best, digest = np.inf, None
                for _ in range(repeats):
                    t0 = time.perf_counter()
                    res = run_filter(spec, obs, priors, data, int(n), cfg.algorithm.dtau, seed,
                                     opts, executor=pool)
                    best = min(best, time.perf_counter() - t0)
                    digest = result_digest(res)
            finally:
                if pool is not None:
                    pool.shutdown()
            if base_time is None:
                base_time, base_digest = best, digest
            rows.append({"particles": int(n), "workers": int(workers), "seconds": best,
                         "speedup": base_time / best, "identical": digest == base_digest,
                         "cores": available_cores()})
    return rows
