import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from screenlab.bernoulli_core import (
    AlphaLoss,
    ConfusionMatrix,
    PopulationParams,
    ThresholdPolicy,
    alpha_loss,
    alpha_loss_exact,
    binomial_pmf,
    binomial_tail,
    sample_candidate,
    sample_candidates,
    sample_test,
    sample_tests,
    threshold_confusion,
)
from screenlab.rng import substream
from screenlab.verification import enumerate_threshold_oracle

from conftest import within_3se

unit = st.fractions(min_value=Fraction(1, 100), max_value=Fraction(99, 100))
etas = st.fractions(min_value=Fraction(1, 100), max_value=Fraction(49, 100))


class TestTypes:
    @pytest.mark.parametrize("p, sigma", [(0, 0.5), (1, 0.5), (0.5, 0), (0.5, 1), (-0.1, 0.5)])
    def test_population_rejects_closed_endpoints(self, p, sigma):
        with pytest.raises(ValueError):
            PopulationParams(p, sigma)

    def test_eta_from_sigma(self):
        params = PopulationParams(Fraction(1, 2), Fraction(1, 3))
        assert params.eta == Fraction(1, 3)
        assert PopulationParams.from_eta(Fraction(1, 2), Fraction(1, 3)) == params

    def test_population_dict_round_trip(self):
        params = PopulationParams(0.3, 0.6)
        assert PopulationParams.from_dict(params.to_dict()) == params
        assert PopulationParams.from_dict({"p": 0.3, "eta": 0.2}).sigma == pytest.approx(0.6)

    @pytest.mark.parametrize("tau, theta, r", [(0, 0, 1), (3, 5, 1), (3, -1, 1), (3, 2, 1.5)])
    def test_policy_validation(self, tau, theta, r):
        with pytest.raises(ValueError):
            ThresholdPolicy(tau, theta, r)

    def test_policy_dict_round_trip(self):
        pol = ThresholdPolicy(5, 3, 0.25)
        assert ThresholdPolicy.from_dict(pol.to_dict()) == pol

    def test_alpha_loss_range(self):
        with pytest.raises(ValueError):
            AlphaLoss(1.2)

    def test_confusion_rows_must_sum_to_one(self):
        with pytest.raises(ValueError):
            ConfusionMatrix(tpr=0.5, fpr=0.1, fnr=0.4, tnr=0.9)
        ConfusionMatrix(tpr=0.5, fpr=0.1, fnr=0.5 + 1e-13, tnr=0.9)


class TestSampling:
    def test_same_seed_same_sequence(self):
        params = PopulationParams(0.5, 0.5)
        a = [sample_candidate(params, substream(9, 0)) for _ in range(3)]
        b = [sample_candidate(params, substream(9, 0)) for _ in range(3)]
        assert a == b
        assert np.array_equal(sample_candidates(params, substream(9, 1), 1000), sample_candidates(params, substream(9, 1), 1000))

    def test_candidate_frequency(self, rng):
        draws = sample_candidates(PopulationParams(0.3, 0.5), rng, 10**6)
        assert abs(draws.mean() - 0.3) <= 0.0014

    def test_candidate_near_one(self, rng):
        p = 1 - 1e-4
        draws = sample_candidates(PopulationParams(p, 0.5), rng, 10**5)
        assert within_3se(draws.mean(), p, math.sqrt(p * (1 - p) / 10**5))

    def test_skilled_pass_rate_at_third_noise(self, rng):
        params = PopulationParams.from_eta(0.5, 1 / 3)
        outcomes = sample_tests(np.ones(10**6, dtype=np.int8), params, rng, 1)
        assert within_3se(outcomes.mean(), 2 / 3, math.sqrt(2 / 9 / 10**6))

    def test_unskilled_pass_rate(self, rng):
        params = PopulationParams.from_eta(0.5, 0.25)
        outcomes = sample_tests(np.zeros(10**6, dtype=np.int8), params, rng, 1)
        assert abs(outcomes.mean() - 0.25) <= 0.0013

    def test_scalar_sampler_agrees_with_vector_sampler(self, rng):
        params = PopulationParams(0.5, 0.98)
        draws = [sample_test(1, params, rng) for _ in range(20_000)]
        assert within_3se(np.mean(draws), 0.99, math.sqrt(0.99 * 0.01 / 20_000))

    def test_sample_test_rejects_non_bits(self, rng):
        with pytest.raises(ValueError):
            sample_test(2, PopulationParams(0.5, 0.5), rng)


class TestBinomial:
    def test_single_trial_tail_is_eta(self):
        assert binomial_tail(1, Fraction(2, 7), 1) == Fraction(2, 7)

    @given(tau=st.integers(0, 30), eta=etas)
    def test_tail_edges(self, tau, eta):
        assert binomial_tail(tau, eta, 0) == 1
        assert binomial_tail(tau, eta, tau + 1) == 0

    def test_tail_matches_direct_sum(self):
        eta = Fraction(1, 3)
        direct = sum(math.comb(5, k) * eta**k * (1 - eta) ** (5 - k) for k in range(3, 6))
        assert binomial_tail(5, eta, 3) == direct == Fraction(51, 243)

    @given(tau=st.integers(1, 40), eta=etas)
    def test_pmf_sums_to_one_exactly(self, tau, eta):
        assert sum(binomial_pmf(tau, eta)) == 1

    @pytest.mark.parametrize("tau", [10, 64, 65, 200, 1000])
    @pytest.mark.parametrize("eta", [0.05, 0.3, 0.49])
    def test_float_path_matches_scipy(self, tau, eta):
        ours = np.array(binomial_pmf(tau, eta))
        ref = stats.binom.pmf(np.arange(tau + 1), tau, eta)
        big = ref > 1e-280
        np.testing.assert_allclose(ours[big], ref[big], rtol=1e-10)
        theta = int(tau * eta) + 1
        assert binomial_tail(tau, eta, theta) == pytest.approx(stats.binom.sf(theta - 1, tau, eta), rel=1e-10)

    @given(tau=st.integers(1, 25), eta=etas, theta=st.integers(0, 25))
    def test_tail_nonincreasing_in_theta(self, tau, eta, theta):
        theta = min(theta, tau)
        assert binomial_tail(tau, eta, theta + 1) <= binomial_tail(tau, eta, theta)

    @given(tau=st.integers(1, 25), e1=etas, e2=etas, theta=st.integers(1, 25))
    def test_tail_nondecreasing_in_eta(self, tau, e1, e2, theta):
        lo, hi = sorted((e1, e2))
        theta = min(theta, tau + 1)
        assert binomial_tail(tau, lo, theta) <= binomial_tail(tau, hi, theta)


class TestThresholdConfusion:
    def test_three_test_unanimous_policy(self):
        cm = threshold_confusion(ThresholdPolicy(3, 3), PopulationParams.from_eta(Fraction(1, 2), Fraction(1, 3)))
        assert cm.fpr == Fraction(1, 27)
        assert cm.fnr == Fraction(19, 27)

    def test_accept_everyone(self):
        cm = threshold_confusion(ThresholdPolicy(1, 0), PopulationParams(0.5, 0.5))
        assert cm.fpr == cm.tpr == 1

    def test_randomized_boundary_matches_enumeration(self):
        params = PopulationParams.from_eta(Fraction(1, 2), Fraction(1, 4))
        policy = ThresholdPolicy(4, 2, Fraction(1, 2))
        oracle = enumerate_threshold_oracle(4, params, policy, Fraction(1, 2))
        assert threshold_confusion(policy, params) == oracle.confusion

    @pytest.mark.parametrize("tau", range(1, 13))
    def test_matches_enumeration_for_every_threshold(self, tau):
        params = PopulationParams(Fraction(2, 5), Fraction(3, 10))
        for theta in range(tau + 2):
            policy = ThresholdPolicy(tau, theta, Fraction(2, 3))
            assert threshold_confusion(policy, params) == enumerate_threshold_oracle(tau, params, policy, 0).confusion

    @given(tau=st.integers(1, 20), theta=st.integers(0, 20), p=unit, sigma=unit, r=st.fractions(0, 1))
    def test_raising_theta_trades_fpr_for_fnr(self, tau, theta, p, sigma, r):
        theta = min(theta, tau)
        params = PopulationParams(p, sigma)
        lo = threshold_confusion(ThresholdPolicy(tau, theta, r), params)
        hi = threshold_confusion(ThresholdPolicy(tau, theta + 1, r), params)
        assert hi.fpr <= lo.fpr
        assert hi.fnr >= lo.fnr

    @given(tau=st.integers(1, 20), theta=st.integers(0, 21), p=unit, sigma=unit, r=st.fractions(0, 1))
    def test_linear_in_boundary_probability(self, tau, theta, p, sigma, r):
        theta = min(theta, tau + 1)
        params = PopulationParams(p, sigma)
        at = lambda q: threshold_confusion(ThresholdPolicy(tau, theta, q), params).fpr  # noqa: E731
        assert at(r) == (1 - r) * at(Fraction(0)) + r * at(Fraction(1))

    @given(tau=st.integers(1, 40), theta=st.integers(0, 41), sigma=st.floats(0.01, 0.99))
    def test_float_rows_sum_to_one(self, tau, theta, sigma):
        cm = threshold_confusion(ThresholdPolicy(tau, min(theta, tau + 1), 0.3), PopulationParams(0.5, sigma))
        assert abs(cm.tpr + cm.fnr - 1) <= 1e-12
        assert abs(cm.fpr + cm.tnr - 1) <= 1e-12

    def test_large_tau_uses_log_space(self):
        params = PopulationParams(0.5, 0.2)
        cm = threshold_confusion(ThresholdPolicy(301, 151), params)
        assert cm.fpr == pytest.approx(stats.binom.sf(150, 301, 0.4), rel=1e-10)
        assert cm.fnr == pytest.approx(stats.binom.cdf(150, 301, 0.6), rel=1e-10)


class TestAlphaLoss:
    params = PopulationParams(Fraction(3, 10), Fraction(1, 2))
    policy = ThresholdPolicy(5, 3)

    def test_alpha_zero_weighs_only_misses(self):
        cm = threshold_confusion(self.policy, self.params)
        assert alpha_loss(self.policy, self.params, AlphaLoss(0)) == self.params.p * cm.fnr

    def test_alpha_one_weighs_only_false_accepts(self):
        cm = threshold_confusion(self.policy, self.params)
        assert alpha_loss(self.policy, self.params, 1) == (1 - self.params.p) * cm.fpr

    def test_balanced_loss_is_quarter_error_sum(self):
        params = PopulationParams(Fraction(1, 2), Fraction(1, 3))
        cm = threshold_confusion(self.policy, params)
        loss = alpha_loss(self.policy, params, Fraction(1, 2))
        assert loss == (cm.fpr + cm.fnr) / 4
        assert loss == enumerate_threshold_oracle(5, params, self.policy, Fraction(1, 2)).loss

    def test_float_inputs_round_once(self):
        params = PopulationParams(0.3, 0.5)
        exact = alpha_loss_exact(self.policy, params, 0.4)
        assert alpha_loss(self.policy, params, 0.4) == float(exact)

    def test_rejects_bad_alpha(self):
        with pytest.raises(ValueError):
            alpha_loss(self.policy, self.params, 2)
