"""CSV readers and writers.

Every file written here starts with a ``# config_sha256=... seed=...``
comment line so outputs can be traced to the run that produced them.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable

import numpy as np

from .model import ModelSpec, Trajectory
from .observation import ObservationSeries


class DataError(ValueError):
    """Malformed observation file."""


def header_line(config_hash: str, seed: int) -> str:
    return f"# config_sha256={config_hash} seed={seed}\n"


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path, columns: list, rows: Iterable, config_hash: str, seed: int) -> Path:
    """Write ``rows`` (sequences aligned with ``columns``) as CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(header_line(config_hash, seed))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_rows(path) -> tuple:
    """(columns, rows as lists of strings), skipping ``#`` comment lines."""
    with Path(path).open(newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#") and ln.strip()]
    reader = csv.reader(lines)
    try:
        columns = next(reader)
    except StopIteration:
        return [], []
    return [c.strip() for c in columns], list(reader)


def load_series(path) -> ObservationSeries:
    """Read a ``time,count`` CSV into an observation series."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file {str(path)!r} not found")
    columns, rows = read_rows(path)
    if columns[:2] != ["time", "count"]:
        raise DataError(f"{path}: header must be 'time,count', got {','.join(columns)!r}")
    if not rows:
        raise DataError(f"{path}: no observations")
    try:
        times = np.array([float(r[0]) for r in rows])
        raw = np.array([float(r[1]) for r in rows])
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: unreadable row ({exc})") from None
    if np.any(raw != np.round(raw)):
        raise DataError(f"{path}: counts must be integers")
    try:
        return ObservationSeries(times, raw.astype(np.int64))
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def write_series(path, data: ObservationSeries, config_hash: str, seed: int) -> Path:
    return write_rows(path, ["time", "count"], zip(data.times, data.counts), config_hash,
                      seed)


def write_trajectory(path, traj: Trajectory, spec: ModelSpec, config_hash: str,
                     seed: int) -> Path:
    """One row per grid time; reaction counts are those over the preceding step."""
    cols = ["time", *spec.compartments, *spec.reactions]
    if traj.log_beta is not None:
        cols.append("log_beta")
    if traj.logit_rho is not None:
        cols.append("logit_rho")
    zero = np.zeros((1, spec.n_reactions), dtype=np.int64)
    incs = np.concatenate([zero, traj.increments])

    def rows():
        for j, t in enumerate(traj.times):
            row = [float(t), *traj.states[j].tolist(), *incs[j].tolist()]
            if traj.log_beta is not None:
                row.append(float(traj.log_beta[j]))
            if traj.logit_rho is not None:
                row.append(float(traj.logit_rho[j]))
            yield row

    return write_rows(path, cols, rows(), config_hash, seed)


def write_summary(path, rows: list, quantiles, config_hash: str, seed: int) -> Path:
    from .smc import _qkey

    cols = ["time", "quantity", "mean", *[_qkey(q) for q in quantiles], "ess"]
    return write_rows(path, cols, ([r[c] for c in cols] for r in rows), config_hash, seed)


def write_chain(path, chain, config_hash: str, seed: int) -> Path:
    cols = ["iteration", *chain.names, "log_posterior", "log_likelihood", "accepted"]
    rows = ([it, *chain.samples[it].tolist(), chain.log_post[it], chain.log_lik[it],
             bool(chain.accepted[it])] for it in range(len(chain.samples)))
    return write_rows(path, cols, rows, config_hash, seed)


def read_chain(path):
    """Load a chain CSV written by :func:`write_chain`."""
    from .pmmh import Chain

    columns, rows = read_rows(path)
    if not columns or columns[0] != "iteration" or "log_posterior" not in columns:
        raise DataError(f"{path}: not a chain file")
    names = columns[1:columns.index("log_posterior")]
    arr = np.array([[float(v) for v in r] for r in rows])
    if arr.size == 0:
        raise DataError(f"{path}: empty chain")
    d = len(names)
    return Chain(names=names, samples=arr[:, 1:1 + d], log_post=arr[:, 1 + d],
                 log_lik=arr[:, 2 + d], accepted=arr[:, 3 + d].astype(bool))


def write_particles(path, cloud, config_hash: str, seed: int) -> Path:
    """Binary particle dump (``.npz``) for resuming or forecasting."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {"state": cloud.state, "window_incidence": cloud.window_incidence,
              "config_sha256": np.array(config_hash), "seed": np.array(seed)}
    for k, v in cloud.params.items():
        arrays[f"param_{k}"] = v
    if cloud.log_beta is not None:
        arrays["log_beta"] = cloud.log_beta
    if cloud.logit_rho is not None:
        arrays["logit_rho"] = cloud.logit_rho
    np.savez(path, **arrays)
    return path


def write_forecasts(path, records: list, quantiles, config_hash: str, seed: int) -> Path:
    from .smc import _qkey

    cols = ["time", "observed", "min", "q1", "median", "q3", "max", "mean",
            *[_qkey(q) for q in quantiles]]
    return write_rows(path, cols, ([r[c] for c in cols] for r in records), config_hash, seed)
