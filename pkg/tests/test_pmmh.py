import numpy as np
import pytest

from dseir.model import ModelSpec
from dseir.observation import ObsModelSpec, ObservationSeries
from dseir.pmmh import (RWM_SCALE, Chain, estimate_loglik, pilot_covariance, prior_center,
                        random_walk_mh, run_pmmh)
from dseir.priors import Beta, Fixed, Gamma, InitialState, InvSqrtUniform, LogitNormal, PriorSet

SPEC = ModelSpec("SIR", 100)
OBS = ObsModelSpec("binomial", 0)
PRIORS = PriorSet({"beta": Gamma(2, 100), "gamma": Gamma(5, 10), "rho": Beta(8, 2)},
                  InitialState((95, 5)))
DATA = ObservationSeries([1.0, 2.0, 3.0], [6, 9, 7])


def test_prior_centers():
    assert prior_center(Gamma(5, 10)) == 0.5
    assert prior_center(Beta(8, 2)) == 0.8
    assert prior_center(Fixed(3.0)) == 3.0
    assert prior_center(LogitNormal(0.0, 1.0)) == 0.5
    assert prior_center(InvSqrtUniform(0.5)) == pytest.approx(16.0)


def test_zero_covariance_gives_constant_chain():
    calls = []

    def loglik(theta, it):
        calls.append(it)
        return -1.0

    chain = random_walk_mh(loglik, PRIORS.params, ["gamma"], {"gamma": 0.3}, [[0.0]], 50,
                           np.random.default_rng(0))
    assert np.all(chain.column("gamma") == 0.3)
    assert chain.acceptance_rate == 1.0
    assert calls == [0]


def test_empty_data_recovers_prior():
    empty = ObservationSeries([], [])
    chain = random_walk_mh(lambda th, it: 0.0, PRIORS.params, ["gamma", "rho"],
                           {"gamma": 0.5, "rho": 0.8}, np.diag([0.5, 0.5]), 40_000,
                           np.random.default_rng(1))
    g, r = chain.column("gamma")[4000:], chain.column("rho")[4000:]
    assert g.mean() == pytest.approx(0.5, abs=0.02)
    assert g.var() == pytest.approx(5 / 100, rel=0.15)
    assert r.mean() == pytest.approx(0.8, abs=0.01)
    assert estimate_loglik({"beta": 0.02, "gamma": 0.5, "rho": 0.8}, empty, 10, SPEC, OBS,
                           PRIORS, 0.1, 0) == 0.0


def test_impossible_data_has_zero_likelihood():
    bad = ObservationSeries([1.0], [500])
    ll = estimate_loglik({"beta": 0.02, "gamma": 0.5, "rho": 0.8}, bad, 50, SPEC, OBS, PRIORS,
                         0.1, 0)
    assert ll == -np.inf


def test_chain_never_moves_to_impossible_region():
    chain = random_walk_mh(lambda th, it: -np.inf if th["gamma"] > 0.6 else 0.0, PRIORS.params,
                           ["gamma"], {"gamma": 0.5}, [[0.3]], 2000, np.random.default_rng(2))
    assert chain.column("gamma").max() <= 0.6


def test_estimator_variance_falls_with_particles():
    theta = {"beta": 0.02, "gamma": 0.5, "rho": 0.8}
    var = []
    for n in (20, 400):
        ll = [estimate_loglik(theta, DATA, n, SPEC, OBS, PRIORS, 0.1, s) for s in range(30)]
        var.append(np.var(ll))
    assert var[1] < var[0]


def test_run_pmmh_smoke_is_reproducible():
    cov = np.diag([0.05, 0.05, 0.05])
    a = run_pmmh(SPEC, OBS, PRIORS, DATA, 30, cov, 50, seed=4, dtau=0.1)
    b = run_pmmh(SPEC, OBS, PRIORS, DATA, 30, cov, 50, seed=4, dtau=0.1)
    assert a.names == ["beta", "gamma", "rho"]
    np.testing.assert_array_equal(a.samples, b.samples)
    assert np.all(np.isfinite(a.log_post))
    assert 0 < a.acceptance_rate < 1


def test_pilot_covariance_scaling():
    rng = np.random.default_rng(3)
    target = np.array([[0.04, 0.01], [0.01, 0.09]])
    u = rng.multivariate_normal([0.0, 1.0], target, size=200_000)
    samples = np.column_stack([np.exp(u[:, 0]), np.exp(u[:, 1])])
    chain = Chain(["gamma", "beta"], samples, np.zeros(len(u)), np.zeros(len(u)),
                  np.ones(len(u), bool))
    cov = pilot_covariance(chain, PRIORS.params, burn_in=0.0)
    np.testing.assert_allclose(cov, RWM_SCALE / 2 * target, rtol=0.03, atol=1e-4)


def test_proposal_shape_checked():
    with pytest.raises(ValueError):
        random_walk_mh(lambda th, it: 0.0, PRIORS.params, ["gamma"], {"gamma": 0.5},
                       np.eye(2), 5, np.random.default_rng(0))
