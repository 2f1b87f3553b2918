import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from screenlab.bernoulli_core import PopulationParams
from screenlab.dynamic_policy import (
    Decision,
    DegenerateGeometry,
    GreedyPolicyParams,
    StepCapExceeded,
    WalkGeometry,
    approx_tests_skilled,
    approx_tests_unskilled,
    exact_lattice_geometry,
    expected_tests_overall,
    expected_tests_skilled,
    expected_tests_unskilled,
    greedy_confusion_exact,
    greedy_decide,
    log_odds_position,
    markov_absorption_oracle,
    posterior_given_counts,
    quantization_gap,
    simulate_greedy,
    simulate_greedy_batch,
    simulate_lattice_walks,
    order_of_magnitude_ratios,
    walk_geometry,
)

from conftest import within_3se

probs = st.floats(0.05, 0.95)
sigmas = st.floats(0.05, 0.9)


class TestPolicyParams:
    @pytest.mark.parametrize("eps, eps_p", [(0, 0.3), (0.1, 1), (0.5, 0.6), (0.3, 0.7)])
    def test_rejects_empty_band(self, eps, eps_p):
        with pytest.raises(ValueError):
            GreedyPolicyParams(eps, eps_p)

    def test_barriers(self):
        gp = GreedyPolicyParams(0.1, 0.2)
        assert gp.beta == pytest.approx(9)
        assert gp.beta_prime == pytest.approx(0.25)
        assert gp.accept_barrier == pytest.approx(math.log(9))
        assert gp.reject_barrier == pytest.approx(math.log(0.25))


class TestPosterior:
    @given(p=probs, sigma=sigmas, tau=st.integers(0, 30), data=st.data())
    def test_matches_bayes_rule(self, p, sigma, tau, data):
        k = data.draw(st.integers(0, tau))
        like_s = ((1 + sigma) / 2) ** k * ((1 - sigma) / 2) ** (tau - k)
        like_u = ((1 - sigma) / 2) ** k * ((1 + sigma) / 2) ** (tau - k)
        direct = p * like_s / (p * like_s + (1 - p) * like_u)
        assert posterior_given_counts(p, sigma, tau, k) == pytest.approx(direct, rel=1e-9, abs=1e-300)

    def test_balanced_counts_return_prior(self):
        assert posterior_given_counts(0.37, 0.6, 8, 4) == 0.37

    def test_order_of_outcomes_is_irrelevant(self):
        assert log_odds_position(0.3, 0.5, [1, 0, 1, 1]) == log_odds_position(0.3, 0.5, [1, 1, 1, 0])

    def test_rejects_impossible_counts(self):
        with pytest.raises(ValueError):
            posterior_given_counts(0.3, 0.5, 3, 4)

    def test_decide_boundaries(self):
        gp = GreedyPolicyParams(0.1, 0.2)
        assert greedy_decide(gp.accept_barrier, gp) is Decision.ACCEPT
        assert greedy_decide(gp.reject_barrier, gp) is Decision.RETEST
        assert greedy_decide(math.nextafter(gp.reject_barrier, -math.inf), gp) is Decision.REJECT
        assert greedy_decide(0.0, gp) is Decision.RETEST


class TestGeometry:
    def test_default_cutoff_starts_one_step_up(self):
        for p in (0.1, 0.3, 0.5, 0.8):
            for sigma in (0.1, 0.4, 0.7):
                gp = GreedyPolicyParams(0.01, p)
                geom = walk_geometry(p, sigma, gp)
                assert geom.z == 1
                assert geom == exact_lattice_geometry(p, sigma, gp)

    def test_barrier_formula(self):
        p, sigma, eps = 0.3, 0.4, 0.05
        geom = walk_geometry(p, sigma, GreedyPolicyParams(eps, p))
        arg = (1 - eps) * (1 - p) * (1 + sigma) / (eps * p * (1 - sigma))
        assert geom.a == math.ceil(math.log(arg) / geom.step)

    def test_rounding_moves_the_lattice(self):
        gp = GreedyPolicyParams(0.05, 0.2)
        report = quantization_gap(0.3, 0.4, gp)
        assert not report["identical"]
        assert (report["rounded"]["a"], report["rounded"]["z"]) == (7, 2)
        assert (report["actual"]["a"], report["actual"]["z"]) == (6, 1)

    @given(p=probs, sigma=sigmas, eps=st.floats(0.001, 0.3), frac=st.floats(0.05, 1.0))
    def test_exact_lattice_reproduces_policy(self, p, sigma, eps, frac):
        # walking the real-valued policy net steps from the start must hit the
        # same barriers as the lattice walk
        eps_p = frac * min(p, 1 - eps) * 0.999
        gp = GreedyPolicyParams(eps, eps_p)
        geom = exact_lattice_geometry(p, sigma, gp)
        start = greedy_decide(log_odds_position(p, sigma, []), gp)
        if geom.degenerate:
            return
        assert start is Decision.RETEST
        pos = lambda net: log_odds_position(p, sigma, [1] * net if net >= 0 else [0] * -net)
        assert greedy_decide(pos(geom.a - geom.z), gp) is Decision.ACCEPT
        assert greedy_decide(pos(geom.a - geom.z - 1), gp) is Decision.RETEST
        assert greedy_decide(pos(-geom.z), gp) is Decision.REJECT
        assert greedy_decide(pos(1 - geom.z), gp) is Decision.RETEST

    def test_degenerate_detected(self):
        geom = WalkGeometry(0.5, 3, 3)
        assert geom.degenerate
        with pytest.raises(DegenerateGeometry):
            greedy_confusion_exact(geom)


GEOMS = [(2, 1, 0.7), (5, 1, 0.7), (5, 3, 0.3), (12, 4, 0.55), (40, 1, 0.8), (60, 30, 0.2), (25, 24, 0.95)]


class TestClosedForms:
    @pytest.mark.parametrize("a, z, p_right", GEOMS)
    def test_against_first_step_oracle(self, a, z, p_right):
        sigma = abs(2 * p_right - 1)
        geom = WalkGeometry(sigma, a, z)
        cm = greedy_confusion_exact(geom)
        orc = markov_absorption_oracle(a, z, p_right)
        if p_right > 0.5:
            up, down, dur = cm.tpr, cm.fnr, expected_tests_skilled(geom)
        else:
            up, down, dur = cm.fpr, cm.tnr, expected_tests_unskilled(geom)
        assert up == pytest.approx(orc.absorb_up, rel=1e-10)
        assert down == pytest.approx(orc.absorb_down, rel=1e-10)
        assert dur == pytest.approx(orc.expected_duration, rel=1e-10)

    def test_tiny_probabilities_keep_relative_precision(self):
        geom = WalkGeometry(0.8, 60, 1)
        orc = markov_absorption_oracle(60, 1, 0.1)
        assert greedy_confusion_exact(geom).fpr == pytest.approx(orc.absorb_up, rel=1e-12)
        assert greedy_confusion_exact(geom).fpr < 1e-50

    @given(a=st.integers(2, 40), data=st.data(), sigma=sigmas)
    def test_probabilities_complement(self, a, data, sigma):
        z = data.draw(st.integers(1, a - 1))
        cm = greedy_confusion_exact(WalkGeometry(sigma, a, z))
        assert cm.tpr + cm.fnr == pytest.approx(1, abs=1e-12)
        assert cm.fpr + cm.tnr == pytest.approx(1, abs=1e-12)
        assert cm.tpr > cm.fpr

    def test_docstring_expressions(self):
        s, a, z = 0.35, 9, 3
        lam, lb = (1 - s) / (1 + s), (1 + s) / (1 - s)
        geom = WalkGeometry(s, a, z)
        assert expected_tests_skilled(geom) == pytest.approx((a * (1 - lam**z) / (1 - lam**a) - z) / s)
        assert expected_tests_unskilled(geom) == pytest.approx((z - a * (1 - lb**z) / (1 - lb**a)) / s)
        cm = greedy_confusion_exact(geom)
        assert cm.fnr == pytest.approx((lam**a - lam**z) / (lam**a - 1))
        assert cm.tnr == pytest.approx((lb**a - lb**z) / (lb**a - 1))

    def test_approximations_are_asymptotic(self):
        geom = WalkGeometry(0.4, 60, 1)
        assert expected_tests_unskilled(geom) / approx_tests_unskilled(geom) == pytest.approx(1, abs=1e-9)
        assert expected_tests_skilled(geom) / approx_tests_skilled(geom) == pytest.approx(1, abs=1e-9)
        # the rough overall count a*p/sigma misses the drift factor 2 sigma / (1 + sigma)
        ratio = expected_tests_overall(0.3, WalkGeometry(0.4, 2000, 1)).ratio
        assert ratio == pytest.approx(2 * 0.4 / 1.4, rel=2e-3)

    def test_table_ratios_at_default_cutoff(self):
        # with epsilon_prime = p the TPR tends to 1 - lam = 2 sigma / (1 + sigma)
        p, sigma = 0.3, 0.4
        gp = GreedyPolicyParams(1e-8, p)
        ratios = order_of_magnitude_ratios(p, gp, walk_geometry(p, sigma, gp))
        assert ratios["tpr_ratio"] == pytest.approx(2 / (1 + sigma), rel=1e-6)
        assert ratios["tnr_ratio"] == pytest.approx(1, abs=1e-6)
        assert 0.5 < ratios["fpr_ratio"] < 2

    def test_lower_cutoff_raises_tpr(self):
        p, sigma = 0.3, 0.4
        tprs = []
        for eps_p in (0.3, 0.2, 0.1, 0.05, 0.02):
            tprs.append(greedy_confusion_exact(walk_geometry(p, sigma, GreedyPolicyParams(0.05, eps_p))).tpr)
        assert tprs == sorted(tprs)

    def test_closed_forms_require_bias(self):
        with pytest.raises(ValueError):
            markov_absorption_oracle(3, 3, 0.5)


class TestSimulation:
    def test_single_walk_stays_within_cap(self, rng):
        params = PopulationParams(0.3, 0.4)
        gp = GreedyPolicyParams(0.05, 0.3)
        trace = simulate_greedy(params, gp, rng)
        assert trace.decision in (Decision.ACCEPT, Decision.REJECT)
        assert trace.tests_used >= 1
        assert trace.to_dict()["decision"] == trace.decision.value

    def test_step_cap(self, rng):
        params = PopulationParams(0.3, 0.4)
        with pytest.raises(StepCapExceeded):
            simulate_greedy(params, GreedyPolicyParams(0.05, 0.3), rng, max_steps=0)
        with pytest.raises(StepCapExceeded):
            simulate_greedy_batch(params, GreedyPolicyParams(0.05, 0.3), rng, 10, max_steps=0)

    @pytest.mark.parametrize("p, sigma, eps, eps_p", [(0.3, 0.4, 0.05, 0.3), (0.5, 0.2, 0.01, 0.2), (0.3, 0.4, 0.05, 0.2)])
    def test_batch_matches_exact_lattice(self, rng, p, sigma, eps, eps_p):
        gp = GreedyPolicyParams(eps, eps_p)
        geom = exact_lattice_geometry(p, sigma, gp)
        cm = greedy_confusion_exact(geom)
        skills, accepted, tests = simulate_greedy_batch(PopulationParams(p, sigma), gp, rng, 200_000)
        for cls, rate in ((1, cm.tpr), (0, cm.fpr)):
            sel = accepted[skills == cls]
            assert within_3se(sel.mean(), rate, math.sqrt(rate * (1 - rate) / sel.size))
        expected = expected_tests_overall(p, geom).exact
        assert within_3se(tests.mean(), expected, tests.std() / math.sqrt(tests.size))

    def test_lattice_walks_match_closed_forms(self, rng):
        geom = WalkGeometry(0.3, 7, 2)
        skills = np.ones(100_000, dtype=np.int8)
        up, steps = simulate_lattice_walks(geom, skills, rng)
        tpr = greedy_confusion_exact(geom).tpr
        assert within_3se(up.mean(), tpr, math.sqrt(tpr * (1 - tpr) / up.size))
        assert within_3se(steps.mean(), expected_tests_skilled(geom), steps.std() / math.sqrt(steps.size))

    def test_batch_is_reproducible(self):
        from screenlab.rng import substream

        params, gp = PopulationParams(0.3, 0.4), GreedyPolicyParams(0.05, 0.3)
        first = simulate_greedy_batch(params, gp, substream(7, 3), 1000)
        second = simulate_greedy_batch(params, gp, substream(7, 3), 1000)
        for x, y in zip(first, second):
            np.testing.assert_array_equal(x, y)
