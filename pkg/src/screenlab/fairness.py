"""Two-group audits: shared threshold policies and the rejection-cutoff intervention.

Both groups share the skill prior ``p`` and differ only in test noise.  A
shared fixed-test threshold policy necessarily treats the noisier group worse
on both error rates; the dynamic policy can close the false negative gap by
lowering the noisier group's rejection cutoff, at the price of extra tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Real

from ._numeric import as_fraction
from .bernoulli_core import ConfusionMatrix, PopulationParams, ThresholdPolicy, _pmf_exact, threshold_confusion
from .dynamic_policy import (
    GreedyPolicyParams,
    WalkGeometry,
    exact_lattice_geometry,
    expected_tests_overall,
    greedy_confusion_exact,
    walk_geometry,
)


@dataclass(frozen=True)
class GroupPair:
    """Two populations with equal ``p``; ``group2`` is the noisier one.

    Use :meth:`from_etas` to build a pair from unordered noise levels.
    """

    group1: PopulationParams
    group2: PopulationParams

    def __post_init__(self) -> None:
        if self.group1.p != self.group2.p:
            raise ValueError("groups must share the same prior p")
        if self.group1.eta > self.group2.eta:
            raise ValueError("group2 must be the noisier group (eta1 <= eta2); use GroupPair.from_etas")

    @classmethod
    def from_etas(cls, p: Real, eta_a: Real, eta_b: Real) -> GroupPair:
        lo, hi = sorted((eta_a, eta_b))
        return cls(PopulationParams.from_eta(p, lo), PopulationParams.from_eta(p, hi))

    @property
    def p(self) -> Real:
        return self.group1.p

    @property
    def eta1(self) -> Real:
        return self.group1.eta

    @property
    def eta2(self) -> Real:
        return self.group2.eta


def mle_eta(k: int, n: int) -> Fraction:
    """Maximum-likelihood flip rate from ``k`` flips in ``n`` tests."""
    if n < 1 or not 0 <= k <= n:
        raise ValueError("need n >= 1 and 0 <= k <= n")
    return Fraction(k, n)


def likelihood_ratio_is_monotone(tau: int, eta1: Real, eta2: Real) -> bool:
    """``Pr[Z=k; eta2] / Pr[Z=k; eta1]`` nondecreasing in ``k`` (exact)."""
    f1 = _pmf_exact(tau, as_fraction(eta1))
    f2 = _pmf_exact(tau, as_fraction(eta2))
    ratios = [b / a for a, b in zip(f1, f2)]
    return all(x <= y for x, y in zip(ratios, ratios[1:]))


@dataclass(frozen=True)
class SharedPolicyAudit:
    policy: ThresholdPolicy
    confusion1: ConfusionMatrix
    confusion2: ConfusionMatrix
    degenerate: bool

    @property
    def fpr_strict(self) -> bool:
        return self.confusion1.fpr < self.confusion2.fpr

    @property
    def fnr_strict(self) -> bool:
        return self.confusion1.fnr < self.confusion2.fnr

    @property
    def ordering_holds(self) -> bool:
        """Both strict orderings; trivially ``False`` for degenerate policies."""
        return self.fpr_strict and self.fnr_strict

    def to_dict(self) -> dict:
        return {
            "policy": self.policy.to_dict(),
            "group1": self.confusion1.to_dict(),
            "group2": self.confusion2.to_dict(),
            "degenerate": self.degenerate,
            "fpr_strict": self.fpr_strict,
            "fnr_strict": self.fnr_strict,
            "ordering_holds": self.ordering_holds,
        }


def shared_policy_audit(policy: ThresholdPolicy, groups: GroupPair) -> SharedPolicyAudit:
    """Exact per-group rates when both groups face the same threshold policy.

    Rates are rational (compared without rounding).  The policy is degenerate
    when it accepts everyone or no one: ``theta`` outside ``1..tau``, or a
    boundary ``r`` that collapses it to such a policy (``theta = tau`` with
    ``r = 0``).  Degenerate policies give equal trivial rates and are
    reported as such rather than as a violation of the ordering.
    """
    exact = [PopulationParams(as_fraction(g.p), as_fraction(g.sigma)) for g in (groups.group1, groups.group2)]
    exact_policy = ThresholdPolicy(policy.tau, policy.theta, as_fraction(policy.r))
    cm1, cm2 = (threshold_confusion(exact_policy, g) for g in exact)
    degenerate = not 1 <= policy.theta <= policy.tau or (policy.theta == policy.tau and policy.r == 0)
    return SharedPolicyAudit(policy, cm1, cm2, degenerate)


def equalizing_epsilon_prime(p: Real, eta1: Real, eta2: Real) -> Real:
    """Rejection cutoff ``(eta1 / eta2) * p`` for the noisier group."""
    if not 0 < eta1 <= eta2:
        raise ValueError("need 0 < eta1 <= eta2")
    return eta1 / eta2 * p


@dataclass(frozen=True)
class GroupDynamics:
    """Closed-form behaviour of one group's greedy walk."""

    epsilon_prime: float
    geometry: WalkGeometry
    confusion: ConfusionMatrix
    expected_tests: float

    def to_dict(self) -> dict:
        return {
            "epsilon_prime": self.epsilon_prime,
            "geometry": self.geometry.to_dict(),
            "confusion": self.confusion.to_dict(),
            "expected_tests": self.expected_tests,
        }


def _dynamics(p: float, sigma: float, gp: GreedyPolicyParams, geometry_fn) -> GroupDynamics:
    geom = geometry_fn(p, sigma, gp)
    return GroupDynamics(gp.epsilon_prime, geom, greedy_confusion_exact(geom), expected_tests_overall(p, geom).exact)


@dataclass(frozen=True)
class InterventionReport:
    group1: GroupDynamics
    group2_before: GroupDynamics
    group2_after: GroupDynamics

    @property
    def fnr_gap_before(self) -> float:
        return abs(self.group1.confusion.fnr - self.group2_before.confusion.fnr)

    @property
    def fnr_gap_after(self) -> float:
        return abs(self.group1.confusion.fnr - self.group2_after.confusion.fnr)

    @property
    def extra_tests_group2(self) -> float:
        return self.group2_after.expected_tests - self.group2_before.expected_tests

    @property
    def gap_shrinks(self) -> bool:
        return self.fnr_gap_after < self.fnr_gap_before

    def to_dict(self) -> dict:
        return {
            "group1": self.group1.to_dict(),
            "group2_before": self.group2_before.to_dict(),
            "group2_after": self.group2_after.to_dict(),
            "fnr_gap_before": self.fnr_gap_before,
            "fnr_gap_after": self.fnr_gap_after,
            "gap_shrinks": self.gap_shrinks,
            "extra_tests_group1": 0.0,
            "extra_tests_group2": self.extra_tests_group2,
        }


def intervention_cost(groups: GroupPair, epsilon: float, p: float | None = None, barriers: str = "quantized") -> InterventionReport:
    """FNR gap and expected tests before and after the equalizing cutoff.

    Group 1 always uses ``epsilon_prime = p``.  ``barriers="quantized"`` uses
    the rounded-up geometry of the closed forms; ``"exact"`` uses the lattice
    the real-valued policy walks, on which small noise ratios can leave the
    geometry (and so the FNR) unchanged.  The residual gap is reported, never
    assumed to be zero.
    """
    p = float(groups.p if p is None else p)
    if p != float(groups.p):
        raise ValueError("p must match the groups' shared prior")
    geometry_fn = {"quantized": walk_geometry, "exact": exact_lattice_geometry}[barriers]
    s1, s2 = float(groups.group1.sigma), float(groups.group2.sigma)
    eps_after = float(equalizing_epsilon_prime(p, float(groups.eta1), float(groups.eta2)))
    return InterventionReport(
        group1=_dynamics(p, s1, GreedyPolicyParams(epsilon, p), geometry_fn),
        group2_before=_dynamics(p, s2, GreedyPolicyParams(epsilon, p), geometry_fn),
        group2_after=_dynamics(p, s2, GreedyPolicyParams(epsilon, eps_after), geometry_fn),
    )


def tpr_vs_epsilon_prime(p: float, sigma: float, epsilon: float, eps_primes: list[float]) -> list[float]:
    """TPR of the rounded-up walk along a sweep of rejection cutoffs."""
    return [greedy_confusion_exact(walk_geometry(p, sigma, GreedyPolicyParams(epsilon, e))).tpr for e in eps_primes]

