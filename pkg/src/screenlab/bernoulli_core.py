"""Bernoulli screening model: populations, threshold policies, exact binomial analytics.

Conventions
-----------
``S`` is the number of passed tests out of ``tau`` (so ``S`` lies in ``0..tau``).
Proof-style arguments sometimes use the signed sum ``S' = 2*S - tau`` instead;
everything in this package works with the pass count.

A threshold policy ``(tau, theta, r)`` accepts when ``S > theta``, rejects when
``S < theta`` and accepts with probability ``r`` when ``S == theta``.  With
``r = 1`` this is "accept iff ``S >= theta``", which is the form the tail
expressions ``Pr[Z >= theta]`` describe.

Numeric policy: for ``tau <= EXACT_TAU_MAX`` all binomial masses are evaluated
with exact rationals (a float argument is converted to the exact rational it
represents) and rounded once at the end.  Rational inputs (``Fraction``/``int``)
give rational outputs.  Larger ``tau`` uses log-space floating point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from numbers import Real

import numpy as np

from ._numeric import as_fraction, is_exact

EXACT_TAU_MAX = 64
ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class PopulationParams:
    """Prior probability ``p`` of a skilled candidate and test signal strength ``sigma``.

    A test disagrees with the true skill with probability ``eta = (1 - sigma) / 2``.
    """

    p: Real
    sigma: Real

    def __post_init__(self) -> None:
        if not 0 < self.p < 1:
            raise ValueError(f"p must lie in (0, 1), got {self.p}")
        if not 0 < self.sigma < 1:
            raise ValueError(f"sigma must lie in (0, 1), got {self.sigma}")

    @property
    def eta(self) -> Real:
        return (1 - self.sigma) / 2

    @classmethod
    def from_eta(cls, p: Real, eta: Real) -> PopulationParams:
        if not 0 < eta < Fraction(1, 2):
            raise ValueError(f"eta must lie in (0, 1/2), got {eta}")
        return cls(p=p, sigma=1 - 2 * eta)

    def to_dict(self) -> dict:
        return {"p": float(self.p), "sigma": float(self.sigma)}

    @classmethod
    def from_dict(cls, data: dict) -> PopulationParams:
        if "sigma" in data:
            return cls(p=data["p"], sigma=data["sigma"])
        return cls.from_eta(data["p"], data["eta"])


@dataclass(frozen=True)
class ThresholdPolicy:
    tau: int
    theta: int
    r: Real = 1

    def __post_init__(self) -> None:
        if self.tau < 1:
            raise ValueError(f"tau must be a positive integer, got {self.tau}")
        if not 0 <= self.theta <= self.tau + 1:
            raise ValueError(f"theta must lie in [0, tau + 1], got {self.theta}")
        if not 0 <= self.r <= 1:
            raise ValueError(f"r must lie in [0, 1], got {self.r}")

    def to_dict(self) -> dict:
        return {"tau": self.tau, "theta": self.theta, "r": float(self.r)}

    @classmethod
    def from_dict(cls, data: dict) -> ThresholdPolicy:
        return cls(tau=int(data["tau"]), theta=int(data["theta"]), r=data.get("r", 1))


@dataclass(frozen=True)
class AlphaLoss:
    """Misclassification cost: ``alpha`` per false positive, ``1 - alpha`` per false negative."""

    alpha: Real

    def __post_init__(self) -> None:
        if not 0 <= self.alpha <= 1:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Class-conditional decision rates: rows are true skill, columns are decisions."""

    tpr: Real
    fpr: Real
    fnr: Real
    tnr: Real

    def __post_init__(self) -> None:
        for name in ("tpr", "fpr", "fnr", "tnr"):
            value = getattr(self, name)
            if not -ROW_SUM_TOL <= value <= 1 + ROW_SUM_TOL:
                raise ValueError(f"{name}={value} is not a probability")
        if abs(self.tpr + self.fnr - 1) > ROW_SUM_TOL or abs(self.fpr + self.tnr - 1) > ROW_SUM_TOL:
            raise ValueError("confusion rows must sum to one")

    @classmethod
    def from_accept_rates(cls, tpr: Real, fpr: Real) -> ConfusionMatrix:
        return cls(tpr=tpr, fpr=fpr, fnr=1 - tpr, tnr=1 - fpr)

    def as_float(self) -> ConfusionMatrix:
        return ConfusionMatrix(float(self.tpr), float(self.fpr), float(self.fnr), float(self.tnr))

    def to_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in ("tpr", "fpr", "fnr", "tnr")}


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def sample_candidate(params: PopulationParams, rng: np.random.Generator) -> int:
    """Draw a skill bit: 1 with probability ``p``."""
    return int(rng.random() < float(params.p))


def sample_test(skill: int, params: PopulationParams, rng: np.random.Generator) -> int:
    """Draw one test outcome: the skill bit, flipped with probability ``eta``."""
    if skill not in (0, 1):
        raise ValueError(f"skill must be 0 or 1, got {skill}")
    return skill ^ int(rng.random() < float(params.eta))


def sample_candidates(params: PopulationParams, rng: np.random.Generator, size: int) -> np.ndarray:
    return (rng.random(size) < float(params.p)).astype(np.int8)


def sample_tests(
    skills: np.ndarray, params: PopulationParams, rng: np.random.Generator, n_tests: int
) -> np.ndarray:
    """Outcome matrix of shape ``(len(skills), n_tests)``."""
    flips = rng.random((len(skills), n_tests)) < float(params.eta)
    return (np.asarray(skills, dtype=np.int8)[:, None] ^ flips).astype(np.int8)


# ---------------------------------------------------------------------------
# Binomial analytics
# ---------------------------------------------------------------------------


@lru_cache(maxsize=4096)
def _pmf_exact(tau: int, eta: Fraction) -> tuple[Fraction, ...]:
    one_minus = 1 - eta
    return tuple(math.comb(tau, k) * eta**k * one_minus ** (tau - k) for k in range(tau + 1))


def _pmf_logspace(tau: int, eta: float) -> list[float]:
    log_eta, log_1m = math.log(eta), math.log1p(-eta)
    lg_tau = math.lgamma(tau + 1)
    return [
        math.exp(lg_tau - math.lgamma(k + 1) - math.lgamma(tau - k + 1) + k * log_eta + (tau - k) * log_1m)
        for k in range(tau + 1)
    ]


def binomial_pmf(tau: int, eta: Real) -> tuple:
    """Masses ``Pr[Z = k]`` for ``Z ~ Binomial(tau, eta)``, ``k = 0..tau``.

    Rational ``eta`` returns Fractions; float ``eta`` returns floats, computed
    exactly for ``tau <= EXACT_TAU_MAX``.
    """
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if not 0 <= eta <= 1:
        raise ValueError(f"eta must lie in [0, 1], got {eta}")
    if is_exact(eta):
        return _pmf_exact(tau, Fraction(eta))
    if tau <= EXACT_TAU_MAX:
        return tuple(float(m) for m in _pmf_exact(tau, Fraction(eta)))
    if eta in (0.0, 1.0):
        return tuple(float(k == (tau if eta == 1.0 else 0)) for k in range(tau + 1))
    return tuple(_pmf_logspace(tau, float(eta)))


def _tail_from_exact(pmf: tuple[Fraction, ...], theta: int) -> Fraction:
    return sum(pmf[theta:], Fraction(0))


def binomial_tail(tau: int, eta: Real, theta: int) -> Real:
    """``Pr[Z >= theta]`` for ``Z ~ Binomial(tau, eta)``.

    ``theta = 0`` gives 1 and ``theta = tau + 1`` gives 0.
    """
    if not 0 <= theta <= tau + 1:
        raise ValueError(f"theta must lie in [0, tau + 1], got {theta}")
    if is_exact(eta):
        return _tail_from_exact(_pmf_exact(tau, Fraction(eta)), theta)
    if tau <= EXACT_TAU_MAX:
        return float(_tail_from_exact(_pmf_exact(tau, Fraction(eta)), theta))
    return math.fsum(binomial_pmf(tau, eta)[theta:])


def _accept_rate(pmf: tuple, theta: int, r: Real):
    """Acceptance probability given the pass-count distribution ``pmf``."""
    strict = sum(pmf[theta + 1 :], 0 * pmf[0])
    boundary = pmf[theta] if theta < len(pmf) else 0 * pmf[0]
    return strict + r * boundary


def threshold_confusion(policy: ThresholdPolicy, params: PopulationParams) -> ConfusionMatrix:
    """Exact class-conditional rates of a randomized threshold policy.

    Unskilled candidates pass each test with probability ``eta``; skilled ones
    with ``1 - eta``.  The result is rational when all inputs are rational.
    """
    exact_inputs = is_exact(params.sigma, policy.r)
    if exact_inputs or policy.tau <= EXACT_TAU_MAX:
        eta = as_fraction(params.eta)
        pmf_u = _pmf_exact(policy.tau, eta)
        r = as_fraction(policy.r)
        fpr = _accept_rate(pmf_u, policy.theta, r)
        tpr = _accept_rate(pmf_u[::-1], policy.theta, r)
        cm = ConfusionMatrix.from_accept_rates(tpr, fpr)
        return cm if exact_inputs else cm.as_float()
    pmf_u = binomial_pmf(policy.tau, float(params.eta))
    r = float(policy.r)
    fpr = math.fsum(pmf_u[policy.theta + 1 :]) + (r * pmf_u[policy.theta] if policy.theta <= policy.tau else 0.0)
    pmf_s = pmf_u[::-1]
    fnr = math.fsum(pmf_s[: policy.theta]) + ((1 - r) * pmf_s[policy.theta] if policy.theta <= policy.tau else 0.0)
    return ConfusionMatrix(tpr=1.0 - fnr, fpr=fpr, fnr=fnr, tnr=1.0 - fpr)


def alpha_loss(policy: ThresholdPolicy, params: PopulationParams, loss: AlphaLoss | Real) -> Real:
    """Expected weighted misclassification cost ``alpha*(1-p)*FPR + (1-alpha)*p*FNR``.

    Evaluated exactly for ``tau <= EXACT_TAU_MAX`` so that thresholds with equal
    loss compare equal.
    """
    alpha = loss.alpha if isinstance(loss, AlphaLoss) else loss
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if is_exact(params.p, params.sigma, policy.r, alpha):
        cm = threshold_confusion(policy, params)
        return alpha * (1 - params.p) * cm.fpr + (1 - alpha) * params.p * cm.fnr
    if policy.tau <= EXACT_TAU_MAX:
        return float(alpha_loss_exact(policy, params, alpha))
    cm = threshold_confusion(policy, params)
    a, p = float(alpha), float(params.p)
    return a * (1 - p) * cm.fpr + (1 - a) * p * cm.fnr


def alpha_loss_exact(policy: ThresholdPolicy, params: PopulationParams, alpha: Real) -> Fraction:
    """``alpha_loss`` as an exact rational of the (float or rational) inputs."""
    exact_params = PopulationParams(as_fraction(params.p), as_fraction(params.sigma))
    exact_policy = ThresholdPolicy(policy.tau, policy.theta, as_fraction(policy.r))
    return alpha_loss(exact_policy, exact_params, as_fraction(alpha))
