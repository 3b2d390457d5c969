import math

import numpy as np
import pytest
from scipy import integrate
from scipy.optimize import brentq

from gjnsim.bounds import (CapabilityError, SupremumError, SupWalkSpec, WalkSampler,
                           best_dyadic_bound, block_constant_bound, block_event_mc,
                           chernoff_dyadic_bound, cramer_root, head_event_mc, lemma_bounds,
                           lemma_rhs, lemma_walks, lundberg_bound, lundberg_exponent,
                           second_moment_block_bound, supwalk_tail_mc, target_event_mc,
                           write_bounds_csv)
from gjnsim.model import DistributionSpec as D
from gjnsim.model import NetworkSpec

# increments xi - 2 with xi ~ Exp(1): M_i = (tau_i - i) - i
EXP_WALK = SupWalkSpec("scaled_service", D.exponential(1.0), 1.0, 1.0, 0.0, "ordinary", lag=0)
# frozen from brentq on the closed form exp(-2 t) / (1 - t) = 1
THETA_EXP = 0.7968121300200202


def exact_exp_tail(u):
    # exponential overshoot: P(sup >= u) = (1 - theta*) exp(-theta* u) for u > 0
    return (1 - THETA_EXP) * np.exp(-THETA_EXP * np.asarray(u, float))


def test_frozen_root_matches_brentq():
    ref = brentq(lambda t: -2 * t - math.log1p(-t), 1e-6, 1 - 1e-9, xtol=1e-15)
    assert ref == pytest.approx(THETA_EXP, abs=1e-12)


def test_lundberg_exponent_solves_cramer_equation():
    th = lundberg_exponent(EXP_WALK)
    assert th == pytest.approx(THETA_EXP, abs=1e-10)
    # independent route: E exp(th (xi - 2)) by quadrature
    val, _ = integrate.quad(lambda x: math.exp(th * (x - 2) - x), 0, np.inf, epsabs=1e-14, epsrel=1e-13)
    assert abs(val - 1) <= 1e-8


def test_lundberg_for_gamma_against_quadrature():
    w = SupWalkSpec("scaled_service", D.gamma(2.0, 0.5), 1.3, 0.4, 0.0, "ordinary", lag=0)
    th = lundberg_exponent(w)
    g = D.gamma(2.0, 0.5)
    f = lambda x: x * math.exp(th * (1.3 * (x - 1.0) - 0.4) - x / 0.5) / 0.25
    val, _ = integrate.quad(f, 0, np.inf, epsabs=1e-14, epsrel=1e-13)
    assert abs(val - 1) <= 1e-8 and g.mean == 1.0


def test_plus_minus_one_walk():
    lm = lambda t: math.log(math.cosh(t))
    th = lundberg_exponent((lm, 0.5))
    ref = brentq(lambda t: math.log(math.cosh(t)) - 0.5 * t, 0.1, 5, xtol=1e-14)
    assert th == pytest.approx(ref, abs=1e-10)
    assert th == pytest.approx(1.2188, abs=1e-3)


def test_cramer_root_none_when_no_positive_root():
    assert cramer_root(lambda t: -t) is None


def test_mc_matches_exact_tail():
    u = np.array([1.0, 2.0, 4.0, 5.0])
    r = supwalk_tail_mc(EXP_WALK, u, replications=20000, seed=1)
    assert r.method == "lundberg" and r.truncation_bound <= 1 / (100 * 20000)
    assert np.all(np.abs(r.p - exact_exp_tail(u)) <= 3 * np.sqrt(exact_exp_tail(u) * (1 - exact_exp_tail(u)) / 20000))
    lb = lundberg_bound(EXP_WALK, u)
    np.testing.assert_allclose(lb, np.exp(-THETA_EXP * u), rtol=1e-9)
    assert np.all(lb >= r.p - 3 * r.se)


def test_mc_monotone_in_u():
    r = supwalk_tail_mc(EXP_WALK, np.linspace(0, 6, 13), replications=4000, seed=2)
    assert np.all(np.diff(r.p) <= 0)


def test_deterministic_walk_has_no_exponent_and_trivial_tails():
    w = SupWalkSpec("scaled_service", D.deterministic(1.0), 1.0, 1.0, 0.0, "ordinary", lag=0)
    assert lundberg_exponent(w) is None
    assert math.isnan(lundberg_bound(w, 1.0))
    r = supwalk_tail_mc(w, [0.0, -1e9], replications=200, seed=0)
    assert r.p[0] == 0.0 and r.p[1] == 1.0


def test_truncation_doubling_is_stable():
    r = supwalk_tail_mc(EXP_WALK, [0.5, 2.0], replications=5000, seed=5)
    r2 = supwalk_tail_mc(EXP_WALK, [0.5, 2.0], replications=5000, seed=5, i_max=2 * r.i_max)
    assert np.all(np.abs(r2.p - r.p) <= np.maximum(r.se, 1 / 5000))


def test_doubling_mode_for_heavy_tails():
    w = SupWalkSpec("scaled_service", D.pareto(2.5, 0.6), 1.0, 0.5, 0.0, "ordinary", lag=0)
    r = supwalk_tail_mc(w, [1.0, 3.0], replications=2000, seed=0)
    assert r.method == "doubling" and r.stabilized and r.i_max >= 256


def test_sampler_is_chunk_invariant():
    w = SupWalkSpec("routing_service", D.gamma(2.0, 0.5), -0.2, 0.3, 0.0, route_prob=0.4)
    a = WalkSampler(w, 1500, seed=7)
    a.max_upto(70)
    a.max_upto(130)
    m_a = a.max_upto(5000)
    b = WalkSampler(w, 1500, seed=7)
    np.testing.assert_array_equal(m_a, b.max_upto(5000))
    np.testing.assert_array_equal(a.value_at(5000), b.value_at(5000))
    # replicate rows do not depend on R
    c = WalkSampler(w, 1024, seed=7)
    np.testing.assert_array_equal(c.max_upto(5000), m_a[:1024])


def test_capability_and_drift_errors():
    heavy = SupWalkSpec("scaled_service", D.pareto(1.8, 0.5), 1.0, 0.5, 0.0, "ordinary")
    with pytest.raises(CapabilityError):
        lundberg_exponent(heavy)
    with pytest.raises(CapabilityError):
        second_moment_block_bound(heavy, 1.0)
    with pytest.raises(CapabilityError):
        chernoff_dyadic_bound(heavy, 1.0)
    # negative coefficient: the right tail is bounded, so an exponent exists
    assert lundberg_exponent(heavy.replace(coef=-1.0)) > 0
    with pytest.raises(SupremumError, match="supremum may be infinite"):
        supwalk_tail_mc(EXP_WALK.replace(drift=0.0), 1.0)


# -- block bounds ------------------------------------------------------------------

GAMMA_WALK = SupWalkSpec("scaled_service", D.gamma(2.0, 0.5), 1.0, 0.5, 0.0, "equilibrium", lag=0)


def test_chernoff_bound_decreases_in_u():
    vals = [chernoff_dyadic_bound(EXP_WALK, u, n_scale=10).value for u in (1, 2, 4, 8, 16)]
    assert all(b >= a for a, b in zip(vals[1:], vals[:-1]))
    assert vals[-1] < 0.2


def test_block_bounds_dominate_mc_events():
    R = 20000
    for j in (3, 5):
        ch, sm = block_constant_bound(GAMMA_WALK, j)
        p, se, lo, hi = block_event_mc(GAMMA_WALK, j, R, seed=j)
        assert ch >= p[0] - 3 * se[0] and sm >= p[0] - 3 * se[0]
    b = chernoff_dyadic_bound(GAMMA_WALK, 4.0, n_scale=10)
    p, se, _, _ = head_event_mc(GAMMA_WALK, b.N, b.threshold, R, seed=11)
    assert b.head >= p[0] - 3 * se[0]
    t = target_event_mc(GAMMA_WALK, [b.threshold], R, seed=12)
    assert b.value >= t.p[0] - 3 * t.se[0]
    s = second_moment_block_bound(GAMMA_WALK, 4.0, n_scale=10)
    t2 = target_event_mc(GAMMA_WALK, [s.threshold], R, seed=13)
    assert s.value >= t2.p[0] - 3 * t2.se[0]


def test_second_moment_tail_halves_when_n_doubles():
    for u in (0.7, 1.0, 3.3):
        a = second_moment_block_bound(GAMMA_WALK, u, n_scale=8)
        b = second_moment_block_bound(GAMMA_WALK, u, n_scale=16)
        assert b.tail == pytest.approx(a.tail / 2, rel=1e-12)
        plain = second_moment_block_bound(GAMMA_WALK.replace(first="ordinary"), u, n_scale=8)
        assert a.tail <= 4 * (a.block_constant + plain.block_constant) / math.floor(8 * u) + 1e-12


def test_deterministic_service_keeps_first_moment_term_only():
    w = SupWalkSpec("scaled_service", D.deterministic(1.0), 1.0, 0.5, 0.0, "equilibrium", lag=0)
    s = second_moment_block_bound(w, 2.0, n_scale=10)
    assert s.block_constant == pytest.approx(4 * 0.5 / 0.5)
    assert s.head == pytest.approx(2 * 0.5 / s.threshold)


def test_best_dyadic_bound_never_exceeds_a_single_head():
    x = 3.0
    best = best_dyadic_bound(GAMMA_WALK, x)
    single = chernoff_dyadic_bound(GAMMA_WALK, 0.0, threshold=x, head=4).value
    assert best <= single


# -- lemma right-hand sides ------------------------------------------------------

def test_arrival_tail_decays_at_lundberg_rate(mm1):
    # frozen from brentq on exp(t) * 0.8 / (0.8 + t) = 1
    theta = 0.43084220978425425
    w = lemma_walks(mm1, None, 0, None, "arrival")[0]
    assert lundberg_exponent(w) == pytest.approx(theta, abs=1e-10)
    u = np.array([1.0, 2.0, 4.0, 8.0])
    est = lemma_rhs(mm1, 0, "arrival", u, replications=20000, seed=3)
    slope = np.polyfit(u, np.log(est.p), 1)[0]
    assert abs(slope + theta) < 0.05
    assert np.all(np.diff(est.p) < 0)


def test_arrival_term_vanishes_without_exogenous_input(tandem_strong):
    est = lemma_rhs(tandem_strong, 1, "arrival", [1.0, 2.0], replications=100)
    assert np.all(est.p == 0) and est.parts == []


def test_service_term_with_deterministic_service_is_zero():
    net = NetworkSpec([D.exponential(0.5)], [D.deterministic(1.0)], [[0.0]])
    est = lemma_rhs(net, 0, "service", [1.0, 2.0, 4.0], l=0, replications=2000)
    assert np.all(est.p == 0) and len(est.parts) == 2


def test_lemma_walks_validation(tandem_critical_second, feedback3):
    with pytest.raises(SupremumError):
        lemma_walks(tandem_critical_second, None, 1, 0, "routing")
    with pytest.raises(ValueError):
        lemma_walks(feedback3, None, 0, None, "routing")
    with pytest.raises(ValueError):
        lemma_walks(feedback3, None, 0, None, "bogus")


def test_sum_interval_combines_parts(feedback3):
    est = lemma_rhs(feedback3, 0, "service", [0.5, 1.0], l=1, replications=2000, seed=1)
    a, b = est.parts
    np.testing.assert_allclose(est.p, a.p + b.p)
    np.testing.assert_allclose(est.se, np.hypot(a.se, b.se))
    assert np.all(est.ci_low <= est.p) and np.all(est.p <= est.ci_high)


def test_lemma_bounds_csv(tmp_path, mm1):
    res = [lemma_bounds(mm1, 0, "arrival", [1.0, 4.0], replications=2000),
           lemma_bounds(mm1, 0, "routing", [1.0, 4.0], l=0, replications=2000)]
    assert all(r.dominated()["lundberg"] for r in res)
    p = tmp_path / "b.csv"
    write_bounds_csv(res, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "which,u,mc_estimate,ci_low,ci_high,lundberg_bound,dyadic_bound,second_moment_bound"
    assert len(lines) == 5
