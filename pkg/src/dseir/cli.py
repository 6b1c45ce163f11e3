"""Command-line entry point: ``dseir <subcommand> --config FILE ...``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .bench import available_cores, run_bench
from .config import ConfigError, RunConfig, load_config
from .io import (DataError, read_chain, write_chain, write_forecasts, write_particles,
                 write_rows, write_series, write_summary, write_trajectory)
from .lna import LnaNumericalError, lna_forecast, run_lna_mh
from .model import StateViolation
from .pmmh import pilot_covariance, run_pmmh
from .runs import forecast_targets, observations, one_step_forecasts, simulate
from .smc import WeightCollapse, forecast_summary, run_filter

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("dseir")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", required=True,
                   help="YAML config file or a shipped preset name")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE", help="override a config scalar, e.g. algorithm.dtau=0.05")
    p.add_argument("--seed", type=int, help="override algorithm.seed")
    p.add_argument("--data", help="observation CSV (time,count); overrides io.data")
    p.add_argument("--out", help="output directory; overrides io.output_dir")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dseir", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a trajectory and observations")
    _common(p)

    p = sub.add_parser("filter", help="run the particle filter")
    _common(p)
    p.add_argument("--particles", type=int)
    p.add_argument("--workers", type=int, help="worker processes (default: available cores)")
    p.add_argument("--blind", action="store_true", help="use the unconditioned proposal")
    p.add_argument("--dump-particles", action="store_true",
                   help="also write the final particle cloud (.npz)")

    p = sub.add_parser("forecast", help="one-step-ahead forecasts of the final observations")
    _common(p)
    p.add_argument("--particles", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--horizon", type=int, default=1, choices=[1])
    p.add_argument("--windows", type=int)

    p = sub.add_parser("pmmh", help="pseudo-marginal Metropolis-Hastings")
    _common(p)
    p.add_argument("--iters", type=int)
    p.add_argument("--particles", type=int, help="inner particle count")
    p.add_argument("--pilot", help="pilot chain CSV used to tune the proposal")

    p = sub.add_parser("lna-fit", help="marginal MH under the linear noise approximation")
    _common(p)
    p.add_argument("--iters", type=int)
    p.add_argument("--pilot", help="pilot chain CSV used to tune the proposal")
    p.add_argument("--forecast", action="store_true",
                   help="also forecast the final observations (refits per target)")
    p.add_argument("--windows", type=int)

    p = sub.add_parser("bench", help="serial vs parallel filter timings")
    _common(p)
    p.add_argument("--particles-list", type=lambda s: [int(float(v)) for v in s.split(",")],
                   default=[10_000, 100_000])
    p.add_argument("--workers-list", type=lambda s: [int(v) for v in s.split(",")],
                   default=[1, 8])
    p.add_argument("--repeats", type=int, default=1)
    return parser


def _load(args) -> RunConfig:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"algorithm.seed={args.seed}")
    if args.out is not None:
        overrides.append(("io.output_dir", args.out))
    return load_config(args.config, overrides)


def _proposal_cov(names, sd, pilot, priors, burn_in):
    if pilot:
        chain = read_chain(pilot)
        if chain.names != list(names):
            raise ConfigError(f"--pilot: chain parameters {chain.names} do not match {names}")
        return pilot_covariance(chain, priors, burn_in)
    sd = np.broadcast_to(np.asarray(sd, dtype=float), (len(names),))
    return np.diag(sd ** 2)


def cmd_simulate(cfg: RunConfig, args) -> int:
    seed = args.seed if args.seed is not None else (cfg.simulation.seed if cfg.simulation
                                                    else cfg.algorithm.seed)
    traj, data = simulate(cfg, seed)
    out = Path(cfg.io.output_dir)
    h = cfg.sha256()
    write_trajectory(out / "trajectory.csv", traj, cfg.model_spec(), h, seed)
    write_series(out / "observations.csv", data, h, seed)
    print(f"wrote {out / 'trajectory.csv'} and {out / 'observations.csv'}")
    return EXIT_OK


def cmd_filter(cfg: RunConfig, args) -> int:
    data = observations(cfg, args.data)
    n = args.particles or cfg.algorithm.particles
    workers = args.workers or cfg.algorithm.workers or available_cores()
    opts = cfg.filter_options(workers)
    if args.blind:
        opts.bridge = False
    seed = cfg.algorithm.seed
    res = run_filter(cfg.model_spec(), cfg.obs_spec(), cfg.prior_set(), data, n,
                     cfg.algorithm.dtau, seed, opts)
    out = Path(cfg.io.output_dir)
    h = cfg.sha256()
    write_summary(out / "filter_summary.csv", res.rows, opts.quantiles, h, seed)
    if args.dump_particles:
        write_particles(out / "particles.npz", res.cloud, h, seed)
    print(f"log marginal likelihood estimate {res.log_likelihood:.4f}; "
          f"mean ESS {np.mean(res.ess):.1f}; wrote {out / 'filter_summary.csv'}")
    return EXIT_OK


def cmd_forecast(cfg: RunConfig, args) -> int:
    data = observations(cfg, args.data)
    fc = cfg.algorithm.forecast
    targets = forecast_targets(data, args.windows or fc.windows, fc.skip_zero)
    if not targets:
        raise DataError("need at least two observations to forecast")
    n = args.particles or cfg.algorithm.particles
    workers = args.workers or cfg.algorithm.workers or available_cores()
    seed = cfg.algorithm.seed
    records = one_step_forecasts(cfg, data, n, seed, targets, workers)
    out = Path(cfg.io.output_dir)
    h = cfg.sha256()
    write_forecasts(out / "forecast.csv", records, fc.quantiles, h, seed)
    write_rows(out / "forecast_samples.csv", ["time", "sample"],
               ((r["time"], int(s)) for r in records for s in r["samples"]), h, seed)
    print(f"wrote {out / 'forecast.csv'}")
    return EXIT_OK


def cmd_pmmh(cfg: RunConfig, args) -> int:
    data = observations(cfg, args.data)
    pm = cfg.algorithm.pmmh
    priors = cfg.prior_set()
    names = priors.free()
    cov = _proposal_cov(names, pm.proposal_sd, args.pilot, priors.params, pm.pilot_burn_in)
    seed = cfg.algorithm.seed
    chain = run_pmmh(cfg.model_spec(), cfg.obs_spec(), priors, data, args.iters or pm.iters,
                     cov, args.particles or pm.particles, seed, cfg.algorithm.dtau,
                     bridge=pm.bridge)
    out = Path(cfg.io.output_dir)
    write_chain(out / "pmmh_chain.csv", chain, cfg.sha256(), seed)
    print(f"acceptance rate {chain.acceptance_rate:.3f}; wrote {out / 'pmmh_chain.csv'}")
    return EXIT_OK


def cmd_lna_fit(cfg: RunConfig, args) -> int:
    data = observations(cfg, args.data)
    lc = cfg.algorithm.lna
    priors = cfg.prior_set()
    names = priors.free()
    cov = _proposal_cov(names, lc.proposal_sd, args.pilot, priors.params, lc.pilot_burn_in)
    seed = cfg.algorithm.seed
    spec, obs = cfg.model_spec(), cfg.obs_spec()
    iters = args.iters or lc.iters
    chain = run_lna_mh(spec, obs, priors, data, iters, cov, seed, lc.ode_step)
    out = Path(cfg.io.output_dir)
    h = cfg.sha256()
    write_chain(out / "lna_chain.csv", chain, h, seed)
    print(f"acceptance rate {chain.acceptance_rate:.3f}; wrote {out / 'lna_chain.csv'}")
    if args.forecast:
        fc = cfg.algorithm.forecast
        targets = forecast_targets(data, args.windows or fc.windows, fc.skip_zero)
        records = []
        for i in targets:
            past = data.head(i)
            ch = run_lna_mh(spec, obs, priors, past, iters, cov, seed, lc.ode_step)
            y = lna_forecast(ch, priors, spec, obs, past, lc.forecast_samples, seed,
                             lc.ode_step, lc.pilot_burn_in)
            records.append({"time": float(data.times[i]), "observed": int(data.counts[i]),
                            **forecast_summary(y, fc.quantiles)})
        write_forecasts(out / "lna_forecast.csv", records, fc.quantiles, h, seed)
        print(f"wrote {out / 'lna_forecast.csv'}")
    return EXIT_OK


def cmd_bench(cfg: RunConfig, args) -> int:
    data = observations(cfg, args.data)
    rows = run_bench(cfg, data, args.particles_list, args.workers_list, repeats=args.repeats)
    out = Path(cfg.io.output_dir)
    cols = ["particles", "workers", "seconds", "speedup", "identical", "cores"]
    write_rows(out / "bench.csv", cols, ([r[c] for c in cols] for r in rows), cfg.sha256(),
               cfg.algorithm.seed)
    for r in rows:
        print(f"N={r['particles']:>8d} workers={r['workers']:>2d} {r['seconds']:8.2f}s "
              f"speedup {r['speedup']:5.2f} identical={r['identical']}")
    if rows and rows[0]["cores"] < max(args.workers_list):
        print(f"note: only {rows[0]['cores']} core(s) available", file=sys.stderr)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "filter": cmd_filter, "forecast": cmd_forecast,
            "pmmh": cmd_pmmh, "lna-fit": cmd_lna_fit, "bench": cmd_bench}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("default")
    try:
        cfg = _load(args)
        return COMMANDS[args.command](cfg, args)
    except (ValueError, FileNotFoundError) as exc:  # includes ConfigError, DataError
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (WeightCollapse, LnaNumericalError, StateViolation, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
