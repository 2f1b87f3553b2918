"""Optimal fixed-test thresholds, majority sample sizes and the budgeted FDR optimizer."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Real

from ._numeric import as_fraction, ceil_snap, is_exact
from .bernoulli_core import (
    EXACT_TAU_MAX,
    PopulationParams,
    ThresholdPolicy,
    _pmf_exact,
    alpha_loss_exact,
    binomial_tail,
)

DEFAULT_TAU_MAX = 64


@dataclass(frozen=True)
class BudgetConstraint:
    """At most ``B`` tests per hired candidate: ``tau / Pr[accept] <= B``."""

    B: Real

    def __post_init__(self) -> None:
        if not self.B > 1:
            raise ValueError(f"budget B must exceed 1, got {self.B}")


@dataclass(frozen=True)
class OptimizationResult:
    policy: ThresholdPolicy | None
    fdr: Real | None
    accept_prob: Real | None
    feasible: bool

    def to_dict(self) -> dict:
        return {
            "policy": self.policy.to_dict() if self.policy else None,
            "fdr": None if self.fdr is None else float(self.fdr),
            "accept_prob": None if self.accept_prob is None else float(self.accept_prob),
            "feasible": self.feasible,
        }


def _check_open_unit(**values: Real) -> None:
    for name, v in values.items():
        if not 0 < v < 1:
            raise ValueError(f"{name} must lie in (0, 1), got {v}")


def theta_crossover(tau: int, p: Real, alpha: Real, sigma: Real) -> float:
    """Real point ``c`` where the loss switches from decreasing to increasing in theta.

    Moving the threshold from ``theta`` to ``theta + 1`` stops accepting the
    ``S = theta`` candidates; this raises the loss exactly when
    ``p*(1-alpha)*rho**(2*theta - tau) > alpha*(1-p)`` with
    ``rho = (1+sigma)/(1-sigma)``, i.e. when ``theta > c``.
    """
    _check_open_unit(p=p, alpha=alpha, sigma=sigma)
    log_rho = math.log1p(2 * float(sigma) / (1 - float(sigma)))
    prior_term = math.log(1 / float(p) - 1)
    cost_term = math.log(1 / float(alpha) - 1)
    return (tau + (prior_term - cost_term) / log_rho) / 2


def optimal_theta(tau: int, p: Real, alpha: Real, sigma: Real) -> int:
    """Threshold minimizing the alpha-loss of a plain (``r = 1``) threshold policy.

    Returns ``ceil(c)`` for the crossover ``c`` of :func:`theta_crossover`,
    clamped to ``[0, tau + 1]``.  Clamping at 0 means accept-everyone is
    optimal; at ``tau + 1`` reject-everyone.
    """
    if tau < 1:
        raise ValueError("tau must be a positive integer")
    raw = math.ceil(theta_crossover(tau, p, alpha, sigma))
    return min(max(raw, 0), tau + 1)


def loss_curve(tau: int, p: Real, alpha: Real, sigma: Real) -> list[Fraction]:
    """Exact alpha-loss for every threshold ``theta = 0..tau+1``."""
    params = PopulationParams(p, sigma)
    return [alpha_loss_exact(ThresholdPolicy(tau, theta), params, alpha) for theta in range(tau + 2)]


@dataclass(frozen=True)
class QuasiconvexityWitness:
    quasiconvex: bool
    losses: tuple
    valley: int
    violation: int | None = None


def loss_is_quasiconvex_check(tau: int, p: Real, alpha: Real, sigma: Real) -> QuasiconvexityWitness:
    """Check that loss(theta) is nonincreasing then nondecreasing (ties allowed).

    ``violation`` is the first index after the valley at which the loss drops
    again, or ``None``.
    """
    losses = loss_curve(tau, p, alpha, sigma)
    i = 0
    while i + 1 < len(losses) and losses[i + 1] <= losses[i]:
        i += 1
    valley = i
    while i + 1 < len(losses) and losses[i + 1] >= losses[i]:
        i += 1
    violation = None if i + 1 == len(losses) else i + 1
    # the valley is the first minimizer, not the end of a flat stretch
    first_min = losses.index(min(losses))
    return QuasiconvexityWitness(violation is None, tuple(losses), min(valley, first_min), violation)


def majority_sample_bound(delta: float, sigma: float) -> int:
    """Tests per candidate for majority voting: ``ceil(ln(1/delta) / sigma**2)``, made odd."""
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    _check_open_unit(sigma=sigma)
    tau = max(1, ceil_snap(math.log(1 / delta) / sigma**2))
    return tau if tau % 2 else tau + 1


def hoeffding_majority_bound(delta: float, sigma: float) -> int:
    """Odd ``tau`` for which Hoeffding alone guarantees per-class majority error <= delta.

    For ``S ~ Binomial(tau, (1+sigma)/2)``, ``Pr[S <= tau/2] <= exp(-tau*sigma**2/2)``,
    so ``tau >= 2*ln(1/delta)/sigma**2`` suffices.
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    _check_open_unit(sigma=sigma)
    tau = max(1, ceil_snap(2 * math.log(1 / delta) / sigma**2))
    return tau if tau % 2 else tau + 1


def majority_class_errors(tau: int, sigma: Real) -> tuple[Real, Real]:
    """Exact (false negative, false positive) rates of majority voting, ``theta = ceil(tau/2)``."""
    eta = (1 - sigma) / 2
    theta = -(-tau // 2)
    fpr = binomial_tail(tau, eta, theta)
    # a skilled candidate fails the majority iff at least tau - theta + 1 tests flip
    fnr = binomial_tail(tau, eta, tau - theta + 1)
    return fnr, fpr


# ---------------------------------------------------------------------------
# FDR minimization under a tests-per-hire budget
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Candidate:
    fdr: Fraction
    tau: int
    theta: int
    r: Fraction
    accept: Fraction

    def key(self) -> tuple:
        # smaller FDR, then fewer tests, then lower threshold, then more acceptance
        return (self.fdr, self.tau, self.theta, -self.r)


def _mass_tables(tau: int, p: Fraction, eta: Fraction) -> tuple[list[Fraction], list[Fraction]]:
    """Joint masses Pr[y=0, S=k] and Pr[S=k] for k = 0..tau."""
    pmf_u = _pmf_exact(tau, eta)
    unskilled = [(1 - p) * m for m in pmf_u]
    total = [u + p * s for u, s in zip(unskilled, pmf_u[::-1])]
    return unskilled, total


def _best_for_tau(tau: int, p: Fraction, eta: Fraction, B: Fraction) -> _Candidate | None:
    need = Fraction(tau) / B
    if need > 1:
        return None
    unskilled, total = _mass_tables(tau, p, eta)
    best = None
    strict_u = Fraction(0)
    strict_a = Fraction(0)
    # theta = tau + 1 never accepts anyone; scan theta from tau downwards
    for theta in range(tau, -1, -1):
        bound_u, bound_a = unskilled[theta], total[theta]
        if strict_a + bound_a >= need:
            r_min = max(Fraction(0), (need - strict_a) / bound_a)
            # (theta, r=0) is the same policy as (theta+1, r=1); keep r in (0, 1]
            for r in {r_min, Fraction(1)} - {Fraction(0)}:
                accept = strict_a + r * bound_a
                cand = _Candidate((strict_u + r * bound_u) / accept, tau, theta, r, accept)
                if best is None or cand.key() < best.key():
                    best = cand
        strict_u += bound_u
        strict_a += bound_a
    return best


def optimize_fdr_budget(
    params: PopulationParams,
    budget: BudgetConstraint,
    tau_max: int = DEFAULT_TAU_MAX,
) -> OptimizationResult:
    """Randomized threshold policy with minimum FDR subject to ``tau / Pr[accept] <= B``.

    For fixed ``(tau, theta)`` the FDR grows with the boundary acceptance ``r``
    (boundary candidates are the least convincing accepted ones), so the best
    ``r`` is the smallest that meets the budget.  When nothing is accepted
    strictly above the boundary the FDR does not depend on ``r`` and the
    tie-break picks ``r = 1``.  Computation is exact; the result carries
    Fractions when the inputs are rational and floats otherwise.
    """
    if tau_max < 1:
        raise ValueError("tau_max must be at least 1")
    if tau_max > EXACT_TAU_MAX:
        raise ValueError(f"tau_max above {EXACT_TAU_MAX} is not supported")
    if params.p != Fraction(1, 2):
        warnings.warn("FDR budget analysis assumes balanced groups (p = 1/2)", stacklevel=2)
    exact = is_exact(params.p, params.sigma, budget.B)
    p, eta, B = as_fraction(params.p), as_fraction(params.eta), as_fraction(budget.B)
    best = None
    for tau in range(1, tau_max + 1):
        cand = _best_for_tau(tau, p, eta, B)
        if cand is not None and (best is None or cand.key() < best.key()):
            best = cand
    if best is None:
        return OptimizationResult(None, None, None, feasible=False)
    conv = (lambda x: x) if exact else float
    return OptimizationResult(
        policy=ThresholdPolicy(best.tau, best.theta, conv(best.r)),
        fdr=conv(best.fdr),
        accept_prob=conv(best.accept),
        feasible=True,
    )


@dataclass(frozen=True)
class PolicyEvaluation:
    policy: ThresholdPolicy
    fdr: Fraction | None
    accept_prob: Fraction
    tests_per_hire: Fraction | None
    feasible: bool = field(default=False)


def evaluate_policy(policy: ThresholdPolicy, params: PopulationParams, B: Real) -> PolicyEvaluation:
    """Exact FDR, acceptance probability and budget feasibility of one policy."""
    p, eta, r = as_fraction(params.p), as_fraction(params.eta), as_fraction(policy.r)
    unskilled, total = _mass_tables(policy.tau, p, eta)
    th = policy.theta
    acc_u = sum(unskilled[th + 1 :], Fraction(0)) + (r * unskilled[th] if th <= policy.tau else 0)
    acc = sum(total[th + 1 :], Fraction(0)) + (r * total[th] if th <= policy.tau else 0)
    if acc == 0:
        return PolicyEvaluation(policy, None, Fraction(0), None, False)
    per_hire = policy.tau / acc
    return PolicyEvaluation(policy, acc_u / acc, acc, per_hire, per_hire <= as_fraction(B))


def best_pure_policy(params: PopulationParams, budget: BudgetConstraint, tau_max: int = DEFAULT_TAU_MAX) -> PolicyEvaluation | None:
    """Minimum-FDR feasible plain threshold policy (``r = 1``), same tie-break order."""
    best = None
    for tau in range(1, tau_max + 1):
        for theta in range(tau + 1):
            ev = evaluate_policy(ThresholdPolicy(tau, theta), params, budget.B)
            if not ev.feasible:
                continue
            if best is None or (ev.fdr, tau, theta) < (best.fdr, best.policy.tau, best.policy.theta):
                best = ev
    return best
