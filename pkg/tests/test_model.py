import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from dseir.gillespie import gillespie_simulate
from dseir.model import (ModelSpec, RateState, StateViolation, StaticParams, apply_increment,
                         draw_increment, forward_simulate, hazard, prevalence_from_incidence,
                         register_sde, sde_step, truncate_events, window_totals)


def test_net_effect_matrices():
    sir, seir = ModelSpec("SIR", 10), ModelSpec("SEIR", 10)
    assert sir.net_effect.tolist() == [[-1, 1], [0, -1]]
    assert seir.net_effect.tolist() == [[-1, 1, 0], [0, -1, 1], [0, 0, -1]]
    for spec in (sir, seir):
        assert set(np.unique(spec.net_effect)) <= {-1, 0, 1}
        assert set(spec.net_effect.sum(axis=1)) <= {-1, 0}
        assert spec.obs_matrix.sum() == 1
    assert sir.obs_matrix.tolist() == [1, 0]
    assert seir.obs_matrix.tolist() == [0, 1, 0]


def test_bad_spec_rejected():
    with pytest.raises(ValueError):
        ModelSpec("SIRS", 10)
    with pytest.raises(ValueError):
        ModelSpec("SIR", 10, contact_mode="spline")
    with pytest.raises(ValueError):
        ModelSpec("SIR", 0)


def test_hazard_sir_example(sir):
    h = hazard([762, 5], StaticParams(gamma=0.5), RateState(log_beta=-6.0), sir)
    np.testing.assert_allclose(h, [762 * 5 * np.exp(-6), 2.5])
    assert h[0] == pytest.approx(9.4440, abs=1e-4)


def test_hazard_seir_examples(seir):
    p = StaticParams(beta=2 / 50000, kappa=5 / 4.6, gamma=1.0)
    h = hazard([44326, 15, 10], p, RateState(), seir)
    np.testing.assert_allclose(h, [17.7304, 16.304347826, 10.0], rtol=1e-9)
    assert hazard([44326, 0, 0], p, RateState(), seir).tolist() == [0, 0, 0]


def test_hazard_frequency_scaling():
    spec = ModelSpec("SIR", 1000, contact_scaling="frequency")
    h = hazard([900, 10], StaticParams(beta=2.0, gamma=1.0), RateState(), spec)
    assert h[0] == pytest.approx(2.0 * 900 * 10 / 1000)


@given(s=st.integers(0, 1000), e=st.integers(0, 1000), i=st.integers(0, 1000))
def test_hazard_nonnegative_and_zero_at_empty_sources(s, e, i):
    spec = ModelSpec("SEIR", 3000)
    h = hazard([s, e, i], StaticParams(beta=1e-3, kappa=0.7, gamma=0.3), RateState(), spec)
    assert np.all(h >= 0)
    assert (h[0] == 0) == (s == 0 or i == 0)
    assert (h[1] == 0) == (e == 0)
    assert (h[2] == 0) == (i == 0)


def test_sde_step_examples(sir):
    p = StaticParams(lambda_beta=100.0)
    assert sde_step(RateState(log_beta=-6.0), p, 0.1, 0.0, sir).log_beta == -6.0
    out = sde_step(RateState(log_beta=-6.0), p, 0.1, 1.0, sir).log_beta
    assert out == pytest.approx(-6 + 0.1 * np.sqrt(0.1))
    assert out == pytest.approx(-5.96838, abs=1e-5)


def test_sde_increment_variance_and_independence(sir, rng):
    p = StaticParams(lambda_beta=100.0)
    n = 100_000
    z = rng.standard_normal((2, n))
    x1 = sde_step(RateState(log_beta=np.zeros(n)), p, 0.1, z[0], sir).log_beta
    x2 = sde_step(RateState(log_beta=x1), p, 0.1, z[1], sir).log_beta
    d1, d2 = x1, x2 - x1
    var = d1.var()
    se = 0.001 * np.sqrt(2 / n)
    assert abs(var - 0.001) < 4 * se
    r = np.corrcoef(d1, d2)[0, 1]
    assert abs(r) < 4 / np.sqrt(n)


def test_sde_dynamic_reporting_uses_independent_noise():
    spec = ModelSpec("SIR", 10, contact_mode="brownian-log", reporting_mode="brownian-logit")
    p = StaticParams(lambda_beta=4.0, lambda_rho=16.0)
    out = sde_step(RateState(log_beta=0.0, logit_rho=0.0), p, 1.0, np.array([1.0, 2.0]), spec)
    assert out.log_beta == pytest.approx(0.5)
    assert out.logit_rho == pytest.approx(0.5)


def test_register_sde_extends_registry():
    register_sde("drift", "mean-revert-test", lambda x, lam: -x)
    spec = ModelSpec("SIR", 10, contact_mode="brownian-log", drift="mean-revert-test")
    out = sde_step(RateState(log_beta=2.0), StaticParams(lambda_beta=1.0), 0.5, 0.0, spec)
    assert out.log_beta == pytest.approx(1.0)


def test_draw_increment_zero_hazard(rng):
    spec = ModelSpec("SEIR", 100)
    inc = draw_increment([50, 0, 0], StaticParams(beta=0.1, kappa=1.0, gamma=1.0), RateState(),
                         spec, 0.1, rng)
    assert inc.tolist() == [0, 0, 0]


def test_draw_increment_poisson_mean(rng):
    spec = ModelSpec("SIR", 10_000)
    # beta * s * i * dtau = 0.5 with s large enough that truncation never binds
    state = np.tile([5000, 1], (100_000, 1))
    p = StaticParams(beta=0.5 / 5000, gamma=0.0)
    inc = draw_increment(state, p, RateState(), spec, 1.0, rng)
    k = inc[:, 0]
    assert abs(k.mean() - 0.5) < 3 * np.sqrt(0.5 / len(k))


def test_draw_increment_capped_at_source(rng):
    spec = ModelSpec("SIR", 100)
    inc = draw_increment([1, 50], StaticParams(beta=100.0, gamma=0.0), RateState(), spec, 1.0,
                         rng)
    assert inc[0] == 1


def test_truncation_order_uses_updated_counts():
    spec = ModelSpec("SEIR", 100)
    # exposure adds to E before infection is capped, infection adds to I before removal
    out = truncate_events([3, 1, 0], [5, 9, 9], spec)
    assert out.tolist() == [3, 4, 4]


def test_poisson_goodness_of_fit(rng):
    spec = ModelSpec("SIR", 10**6)
    n = 100_000
    state = np.tile([10**5, 20], (n, 1))
    p = StaticParams(beta=1.5e-6, gamma=0.1)
    inc = draw_increment(state, p, RateState(), spec, 1.0, rng)
    for r, mean in enumerate([1.5e-6 * 1e5 * 20, 2.0]):
        k = inc[:, r]
        kmax = int(stats.poisson.ppf(1 - 1e-4, mean))
        obs = np.bincount(np.minimum(k, kmax), minlength=kmax + 1)
        exp = stats.poisson.pmf(np.arange(kmax + 1), mean) * n
        exp[-1] = stats.poisson.sf(kmax - 1, mean) * n
        keep = exp > 5
        chi = ((obs[keep] - exp[keep]) ** 2 / exp[keep]).sum()
        pval = stats.chi2.sf(chi, keep.sum() - 1)
        assert pval > 1e-3


def test_apply_increment_examples():
    seir, sir = ModelSpec("SEIR", 100), ModelSpec("SIR", 100)
    assert apply_increment([5, 2, 1], [0, 0, 0], seir).tolist() == [5, 2, 1]
    assert apply_increment([5, 2, 1], [1, 1, 0], seir).tolist() == [4, 2, 2]
    assert apply_increment([10, 1], [2, 1], sir).tolist() == [8, 2]
    with pytest.raises(StateViolation):
        apply_increment([0, 1], [1, 0], sir)


def test_prevalence_from_incidence_examples():
    seir = ModelSpec("SEIR", 44351)
    x0 = [44326, 15, 10]
    assert prevalence_from_incidence(x0, [], seir).tolist() == x0
    assert prevalence_from_incidence(x0, [[100, 90, 80]], seir).tolist() == [44226, 25, 20]
    with pytest.raises(StateViolation):
        prevalence_from_incidence([1, 0, 0], [[0, 1, 0]], seir)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), s=st.integers(0, 60), e=st.integers(0, 10),
       i=st.integers(0, 10), log_beta=st.floats(-5, 0))
def test_forward_simulate_invariants(seed, s, e, i, log_beta):
    spec = ModelSpec("SEIR", 100, contact_mode="brownian-log")
    p = StaticParams(kappa=1.0, gamma=0.5, lambda_beta=10.0)
    tr = forward_simulate(spec, p, [s, e, i], RateState(log_beta=log_beta), 0.25, 40,
                          np.random.default_rng(seed))
    assert tr.states.shape == (41, 3) and tr.increments.shape == (40, 3)
    assert np.all(tr.states >= 0) and np.all(tr.increments >= 0)
    # conservation: removed count = N_pop - sum stays in [0, N_pop] and never decreases
    removed = spec.pop_size - tr.states.sum(axis=1)
    assert np.all(removed >= 0) and np.all(np.diff(removed) >= 0)
    assert np.all(np.diff(np.cumsum(tr.increments, axis=0), axis=0) >= 0)
    # step-by-step states agree with reconstruction from incidence
    for j in range(0, 41, 8):
        assert np.array_equal(prevalence_from_incidence([s, e, i], tr.increments[:j], spec),
                              tr.states[j])


def test_forward_simulate_absorbing(rng):
    spec = ModelSpec("SIR", 100, contact_mode="brownian-log")
    tr = forward_simulate(spec, StaticParams(gamma=0.5, lambda_beta=100.0), [90, 0],
                          RateState(log_beta=-2.0), 0.1, 50, rng)
    assert np.all(tr.states == [90, 0]) and np.all(tr.increments == 0)


def test_forward_simulate_rejects_zero_steps(rng):
    with pytest.raises(ValueError):
        forward_simulate(ModelSpec("SIR", 10), StaticParams(beta=0.1, gamma=0.1), [9, 1],
                         RateState(), 0.1, 0, rng)


def test_window_totals_match_observation_windows(rng):
    spec = ModelSpec("SIR", 767, contact_mode="brownian-log")
    tr = forward_simulate(spec, StaticParams(gamma=0.5, lambda_beta=100.0), [762, 5],
                          RateState(log_beta=-6.0), 0.001, 3000, rng)
    tot = window_totals(tr.increments, 1000)
    assert tot.shape == (3, 2)
    np.testing.assert_array_equal(tot[1], tr.increments[1000:2000].sum(axis=0))
    np.testing.assert_array_equal(tr.states[-1], prevalence_from_incidence([762, 5], tot, spec))


def _mean_infected_gillespie(spec, p, x0, times, reps, rng):
    return np.array([gillespie_simulate(spec, p, x0, times[-1], rng).state_at(times)[:, -1]
                     for _ in range(reps)])


def test_weak_convergence_to_mjp(rng):
    spec = ModelSpec("SIR", 100)
    p = StaticParams(beta=0.02, gamma=0.5)
    times = np.array([0.5, 1.0, 1.5, 2.0, 3.0])
    reps = 4000
    exact = _mean_infected_gillespie(spec, p, [95, 5], times, reps, rng).mean(axis=0)
    errors = []
    for dtau in (0.1, 0.01, 0.001):
        n = int(round(times[-1] / dtau))
        tr = forward_simulate(spec, p, np.tile([95, 5], (reps, 1)), RateState(), dtau, n, rng)
        idx = np.round(times / dtau).astype(int)
        approx = tr.states[idx, :, 1].mean(axis=1)
        errors.append(np.abs(approx - exact).mean())
    # the 0.01 -> 0.001 step is within Monte Carlo noise, so allow that much slack
    noise = 3 * 15 / np.sqrt(reps)
    assert errors[0] >= errors[1] - noise
    assert errors[1] >= errors[2] - noise
    assert errors[0] > errors[2]
