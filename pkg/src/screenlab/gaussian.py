"""Gaussian screening: quality ``Q ~ N(mu_Q, sigma_Q2)``, tests ``Y_j = Q + N(0, sigma_eta2)``.

The tests are exchangeable, so the posterior of ``Q`` depends on the data only
through their sum, with a common per-test weight
``w = 1 / (sigma_eta2/sigma_Q2 + n)``.  :func:`schur_oracle` recomputes the same
quantities by explicit Gaussian conditioning on the full covariance matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from ._numeric import ceil_snap

ORACLE_N_MAX = 200
CONDITION_LIMIT = 1e12


class IllConditioned(ArithmeticError):
    """The oracle's test-block covariance is too ill-conditioned to invert reliably."""


@dataclass(frozen=True)
class GaussianModel:
    mu_Q: float
    sigma_Q2: float
    sigma_eta2: float

    def __post_init__(self) -> None:
        if not self.sigma_Q2 > 0 or not self.sigma_eta2 > 0:
            raise ValueError("variances must be strictly positive")

    def to_dict(self) -> dict:
        return {"mu_Q": self.mu_Q, "sigma_Q2": self.sigma_Q2, "sigma_eta2": self.sigma_eta2}


@dataclass(frozen=True)
class PosteriorSummary:
    weight: float
    mean: float | None
    variance: float

    def to_dict(self) -> dict:
        return {"weight": self.weight, "mean": self.mean, "variance": self.variance}


def per_test_weight(model: GaussianModel, n: int) -> float:
    """Regression weight of each test result on the posterior mean."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    return 1.0 / (model.sigma_eta2 / model.sigma_Q2 + n)


def conditional_variance(model: GaussianModel, n: int) -> float:
    """``Var[Q | Y_1..Y_n] = 1 / (1/sigma_Q2 + n/sigma_eta2)``."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    return 1.0 / (1.0 / model.sigma_Q2 + n / model.sigma_eta2)


def conditional_mean(model: GaussianModel, observations: Sequence[float]) -> float:
    """``E[Q | Y_1..Y_n] = mu_Q + w * sum(y_i - mu_Q)``."""
    y = np.asarray(observations, dtype=float)
    return model.mu_Q + per_test_weight(model, y.size) * math.fsum(y - model.mu_Q)


def posterior(model: GaussianModel, observations: Sequence[float]) -> PosteriorSummary:
    n = len(observations)
    return PosteriorSummary(per_test_weight(model, n), conditional_mean(model, observations), conditional_variance(model, n))


def covariance_matrix(model: GaussianModel, n: int) -> np.ndarray:
    """Joint covariance of ``(Q, Y_1, ..., Y_n)``."""
    sigma = np.full((n + 1, n + 1), model.sigma_Q2)
    sigma[np.arange(1, n + 1), np.arange(1, n + 1)] += model.sigma_eta2
    return sigma


@dataclass(frozen=True)
class OracleResult:
    weights: np.ndarray
    variance: float
    condition: float

    def summary(self, mean: float | None = None) -> PosteriorSummary:
        return PosteriorSummary(float(self.weights[0]), mean, self.variance)

    def mean(self, model: GaussianModel, observations: Sequence[float]) -> float:
        y = np.asarray(observations, dtype=float)
        return model.mu_Q + float(self.weights @ (y - model.mu_Q))


def schur_oracle(model: GaussianModel, n: int, n_max: int = ORACLE_N_MAX) -> OracleResult:
    """Condition ``Q`` on ``n`` tests through the full covariance matrix.

    Computes ``Sigma_12 Sigma_22^{-1}`` with a Cholesky solve and the Schur
    complement ``Sigma_11 - Sigma_12 Sigma_22^{-1} Sigma_21``.  Raises
    :class:`IllConditioned` when the 2-norm condition number of ``Sigma_22``
    exceeds ``CONDITION_LIMIT``.
    """
    if not 1 <= n <= n_max:
        raise ValueError(f"n must lie in [1, {n_max}]")
    sigma = covariance_matrix(model, n)
    s12, s22 = sigma[0, 1:], sigma[1:, 1:]
    cond = float(np.linalg.cond(s22))
    if cond > CONDITION_LIMIT:
        raise IllConditioned(f"condition number {cond:.3g} exceeds {CONDITION_LIMIT:.0e}")
    weights = scipy.linalg.cho_solve(scipy.linalg.cho_factor(s22), s12)
    if not np.allclose(weights, weights[0], rtol=1e-10, atol=0):
        raise AssertionError("oracle weights are not exchangeable")
    return OracleResult(weights, float(sigma[0, 0] - s12 @ weights), cond)


@dataclass(frozen=True)
class Rank1Inverse:
    on_diagonal: float
    off_diagonal: float

    def matrix(self, n: int) -> np.ndarray:
        m = np.full((n, n), self.off_diagonal)
        np.fill_diagonal(m, self.on_diagonal)
        return m


def rank1_inverse(diag_value: float, rank1_value: float, n: int) -> Rank1Inverse:
    """Entries of ``(d*I + b*J)^{-1}`` where ``J`` is the all-ones ``n x n`` matrix.

    The inverse is ``I/d - b/(d*(d + n*b)) * J``.  With ``d = sigma_eta2`` and
    ``b = sigma_Q2`` the off-diagonal entry is
    ``-1/(sigma_eta2**2/sigma_Q2 + n*sigma_eta2)``.
    """
    if diag_value == 0:
        raise ValueError("diag_value must be nonzero")
    if 1 + n * rank1_value / diag_value == 0:
        raise ValueError("matrix is singular: 1 + n*b/d == 0")
    off = -rank1_value / (diag_value * (diag_value + n * rank1_value))
    return Rank1Inverse(on_diagonal=1.0 / diag_value + off, off_diagonal=off)


@dataclass(frozen=True)
class EqualizationReport:
    n2: float
    n2_ceil: int
    integral: bool
    variance1: float
    variance2_at_ceil: float

    @property
    def residual_gap(self) -> float:
        """``Var_1(n1) - Var_2(ceil(n2))``: nonnegative, zero when ``n2`` is integral."""
        return self.variance1 - self.variance2_at_ceil

    def to_dict(self) -> dict:
        return {
            "n2": self.n2,
            "n2_ceil": self.n2_ceil,
            "integral": self.integral,
            "variance1": self.variance1,
            "variance2_at_ceil": self.variance2_at_ceil,
            "residual_gap": self.residual_gap,
        }


def _check_pair(model1: GaussianModel, model2: GaussianModel) -> None:
    if model1.mu_Q != model2.mu_Q or model1.sigma_Q2 != model2.sigma_Q2:
        raise ValueError("models must share mu_Q and sigma_Q2")
    if model1.sigma_eta2 > model2.sigma_eta2:
        raise ValueError("model2 must be the noisier model")


def equalize_variance_tests(model1: GaussianModel, model2: GaussianModel, n1: int) -> EqualizationReport:
    """Test count ``n2 = (sigma_eta2_2 / sigma_eta2_1) * n1`` giving equal posterior variance."""
    _check_pair(model1, model2)
    n2 = model2.sigma_eta2 / model1.sigma_eta2 * n1
    n2_ceil = ceil_snap(n2)
    return EqualizationReport(
        n2=n2,
        n2_ceil=n2_ceil,
        integral=abs(n2 - n2_ceil) <= 1e-9 * max(1.0, n2),
        variance1=conditional_variance(model1, n1),
        variance2_at_ceil=conditional_variance(model2, n2_ceil),
    )


@dataclass(frozen=True)
class ExpectationGap:
    gap: float
    coefficient: float
    mean_difference: float


def expectations_match_check(
    model1: GaussianModel,
    model2: GaussianModel,
    n1: int,
    data1: Sequence[float],
    data2: Sequence[float],
) -> ExpectationGap:
    """Difference of posterior means under variance-equalizing test counts.

    With ``n2 = (sigma_eta2_2/sigma_eta2_1) * n1`` both per-sample weights
    ``n*w`` coincide, so the gap is ``c * (ybar1 - ybar2)`` with
    ``c = sigma_Q2*n1 / (sigma_eta2_1 + n1*sigma_Q2)``.  The posterior means
    agree only when the sample means do.
    """
    _check_pair(model1, model2)
    n2 = model2.sigma_eta2 / model1.sigma_eta2 * n1
    if abs(n2 - round(n2)) > 1e-9 * max(1.0, n2):
        raise ValueError(f"n2 = {n2} is not integral")
    if len(data1) != n1 or len(data2) != round(n2):
        raise ValueError("data lengths must equal n1 and n2")
    gap = conditional_mean(model1, data1) - conditional_mean(model2, data2)
    coefficient = model1.sigma_Q2 * n1 / (model1.sigma_eta2 + n1 * model1.sigma_Q2)
    return ExpectationGap(gap, coefficient, float(np.mean(data1) - np.mean(data2)))
