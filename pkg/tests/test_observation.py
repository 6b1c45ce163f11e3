import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from dseir.observation import (ObsModelSpec, ObservationSeries, SIGMA2_FLOOR, negbin_logpmf,
                               obs_gaussian_moments, obs_logpmf, sample_obs)

BINOM = ObsModelSpec("binomial", 0)
NEGBIN = ObsModelSpec("negative-binomial", 1)


def test_binomial_examples():
    assert np.exp(obs_logpmf(3, [5, 0], 0.9, None, BINOM)) == pytest.approx(0.0729)
    assert obs_logpmf(6, [5, 0], 0.9, None, BINOM) == -np.inf
    assert obs_logpmf(0, [0, 7], 0.9, None, BINOM) == 0.0
    # rho = 1 is a point mass at the incidence
    assert obs_logpmf(4, [4, 0], 1.0, None, BINOM) == 0.0
    assert obs_logpmf(3, [4, 0], 1.0, None, BINOM) == -np.inf


def test_observed_component_selected():
    # SEIR observes the second reaction (E -> I)
    assert obs_logpmf(0, [100, 0, 100], 0.5, 2.0, NEGBIN) == 0.0


def test_negbin_matches_scipy_parameterisation():
    mu, nu = 7.3, 2.5
    y = np.arange(60)
    ref = stats.nbinom.logpmf(y, nu, nu / (nu + mu))
    np.testing.assert_allclose(negbin_logpmf(y, mu, nu), ref, rtol=1e-10)


def test_negbin_zero_mean_is_point_mass():
    assert negbin_logpmf(0, 0.0, 3.0) == 0.0
    assert negbin_logpmf(2, 0.0, 3.0) == -np.inf


@settings(max_examples=40, deadline=None)
@given(n=st.integers(0, 200), rho=st.floats(0.01, 0.99))
def test_binomial_pmf_sums_to_one(n, rho):
    y = np.arange(n + 1)
    total = np.exp(obs_logpmf(y, np.array([n, 0]), rho, None, BINOM)).sum()
    assert total == pytest.approx(1.0, abs=1e-10)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 300), rho=st.floats(0.05, 1.0), nu=st.floats(0.5, 50))
def test_negbin_pmf_sums_to_one(n, rho, nu):
    mu = rho * n
    y = np.arange(int(stats.nbinom.ppf(1 - 1e-13, nu, nu / (nu + mu))) + 50)
    total = np.exp(obs_logpmf(y, np.array([0, n, 0]), rho, nu, NEGBIN)).sum()
    assert total == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("obs,inc,nu", [(BINOM, [40, 0], None), (NEGBIN, [0, 40, 0], 3.0)])
def test_sampler_matches_pmf(obs, inc, nu):
    rng = np.random.default_rng(7)
    n = 50_000
    draws = sample_obs(np.tile(inc, (n, 1)), 0.6, nu, obs, rng)
    kmax = int(np.percentile(draws, 99.9))
    counts = np.bincount(np.minimum(draws, kmax), minlength=kmax + 1)
    pmf = np.exp(obs_logpmf(np.arange(kmax + 1), inc, 0.6, nu, obs))
    pmf[-1] = 1 - pmf[:-1].sum()
    exp = pmf * n
    keep = exp > 5
    chi = ((counts[keep] - exp[keep]) ** 2 / exp[keep]).sum()
    assert stats.chi2.sf(chi, keep.sum() - 1) > 1e-3


def test_negbin_sample_moments():
    rng = np.random.default_rng(3)
    mu, nu = 20.0, 4.0
    draws = sample_obs(np.tile([0, 40, 0], (200_000, 1)), 0.5, nu, NEGBIN, rng)
    assert draws.mean() == pytest.approx(mu, rel=0.01)
    assert draws.var() == pytest.approx(mu + mu ** 2 / nu, rel=0.03)


def test_gaussian_moments():
    mu, s2 = obs_gaussian_moments(3, 2.0, 0.5, None, BINOM)
    assert (mu, s2) == (pytest.approx(2.5), pytest.approx(1.25))
    mu, s2 = obs_gaussian_moments(0, 10.0, 0.5, 2.0, NEGBIN)
    assert (mu, s2) == (pytest.approx(5.0), pytest.approx(17.5))
    assert obs_gaussian_moments(0, 0.0, 0.5, None, BINOM)[1] == SIGMA2_FLOOR
    assert obs_gaussian_moments(0, 5.0, 1.0, None, BINOM)[1] == SIGMA2_FLOOR


def test_domain_errors():
    with pytest.raises(ValueError):
        obs_logpmf(1, [2, 0], 1.5, None, BINOM)
    with pytest.raises(ValueError):
        obs_logpmf(1, [0, 2, 0], 0.5, 0.0, NEGBIN)
    with pytest.raises(ValueError):
        ObsModelSpec("poisson", 0)
    with pytest.raises(ValueError):
        ObsModelSpec("binomial", 0, dynamic_rho=True)


def test_series_validation():
    s = ObservationSeries([1, 2, 3], [0, 4, 2])
    assert len(s) == 3 and s.spacing == 1.0 and s.t0 == 0.0
    assert len(s.head(2)) == 2
    assert ObservationSeries([7.0, 14.0], [1, 2]).spacing == 7.0
    with pytest.raises(ValueError):
        ObservationSeries([1, 2, 4], [0, 1, 2])
    with pytest.raises(ValueError):
        ObservationSeries([1, 2], [0, -1])
    with pytest.raises(ValueError):
        ObservationSeries([2, 1], [0, 1])
