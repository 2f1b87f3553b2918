"""Greedy dynamic screening as a log-odds random walk with absorbing barriers.

After each test the posterior log-odds of "skilled" moves by ``+step`` (pass)
or ``-step`` (fail), ``step = log((1+sigma)/(1-sigma))``.  The greedy policy
accepts once the posterior reaches ``1 - epsilon`` and rejects once it drops
below ``epsilon_prime``.  In units of ``step``, with the lower absorbing point
shifted to 0, this is a gambler's-ruin walk on ``0..a`` started at ``z``.

Two lattice versions of the barriers exist:

* :func:`walk_geometry` rounds the shifted barrier and start *up* to whole
  steps (the ``a`` and ``z`` used by the closed forms);
* :func:`exact_lattice_geometry` gives the lattice walk that the real-valued
  policy actually performs.

They coincide whenever the shifted start is integral, in particular for the
default ``epsilon_prime = p`` (start one step above the lower barrier).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from numbers import Real
from typing import Sequence

import numpy as np

from ._numeric import ceil_snap, expit, floor_snap, logit
from .bernoulli_core import ConfusionMatrix, PopulationParams

DEFAULT_STEP_CAP = 10**6


class Decision(str, enum.Enum):
    ACCEPT = "accept"
    REJECT = "reject"
    RETEST = "retest"


class StepCapExceeded(RuntimeError):
    """A simulated walk ran past the step cap without being absorbed."""


class DegenerateGeometry(ValueError):
    """The start lies on or outside a barrier: decided before any test."""


@dataclass(frozen=True)
class GreedyPolicyParams:
    """Posterior cutoffs: accept at ``>= 1 - epsilon``, reject below ``epsilon_prime``."""

    epsilon: float
    epsilon_prime: float

    def __post_init__(self) -> None:
        if not 0 < self.epsilon < 1 or not 0 < self.epsilon_prime < 1:
            raise ValueError("epsilon and epsilon_prime must lie in (0, 1)")
        if not self.epsilon_prime < 1 - self.epsilon:
            raise ValueError("need epsilon_prime < 1 - epsilon for a nonempty retest band")

    @property
    def beta(self) -> float:
        return (1 - self.epsilon) / self.epsilon

    @property
    def beta_prime(self) -> float:
        return self.epsilon_prime / (1 - self.epsilon_prime)

    @property
    def accept_barrier(self) -> float:
        return math.log(self.beta)

    @property
    def reject_barrier(self) -> float:
        return logit(self.epsilon_prime)

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "epsilon_prime": self.epsilon_prime}


@dataclass(frozen=True)
class WalkGeometry:
    sigma: float
    a: int
    z: int

    @property
    def step(self) -> float:
        return math.log((1 + self.sigma) / (1 - self.sigma))

    @property
    def p_right_skilled(self) -> float:
        return (1 + self.sigma) / 2

    @property
    def p_right_unskilled(self) -> float:
        return (1 - self.sigma) / 2

    @property
    def degenerate(self) -> bool:
        return not 0 < self.z < self.a

    def require_nondegenerate(self) -> None:
        if self.degenerate:
            raise DegenerateGeometry(f"start z={self.z} not strictly inside (0, a={self.a})")

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "step": self.step, "a": self.a, "z": self.z, "degenerate": self.degenerate}


# ---------------------------------------------------------------------------
# Posterior and walk position
# ---------------------------------------------------------------------------


def posterior_given_counts(p: float, sigma: float, tau: int, theta_passed: int) -> float:
    """``Pr[skilled | theta_passed of tau tests passed]``.

    Equals ``p*rho**k / (p*rho**k + 1 - p)`` with ``rho = (1+sigma)/(1-sigma)``
    and ``k = 2*theta_passed - tau``; evaluated through log-odds.
    """
    if not 0 <= theta_passed <= tau:
        raise ValueError("need 0 <= theta_passed <= tau")
    k = 2 * theta_passed - tau
    if k == 0:
        return float(p)
    return expit(logit(p) + k * math.log((1 + sigma) / (1 - sigma)))


def log_odds_position(p: float, sigma: float, outcomes: Sequence[int]) -> float:
    """Posterior log-odds after the given test outcomes (1 = pass)."""
    passed = sum(outcomes)
    return _position(p, sigma, 2 * passed - len(outcomes))


def _position(p: float, sigma: float, net: int) -> float:
    # single expression shared by every simulator, so decisions agree bit for bit
    return logit(p) + net * math.log((1 + sigma) / (1 - sigma))


def greedy_decide(position: float, params: GreedyPolicyParams) -> Decision:
    if position >= params.accept_barrier:
        return Decision.ACCEPT
    if position < params.reject_barrier:
        return Decision.REJECT
    return Decision.RETEST


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


def _shifted_barriers(p: float, sigma: float, params: GreedyPolicyParams) -> tuple[float, float]:
    """Real-valued (start, upper barrier) in step units above the lower absorbing point."""
    step = math.log((1 + sigma) / (1 - sigma))
    eps, eps_p = params.epsilon, params.epsilon_prime
    z_real = 1 + math.log(p * (1 - eps_p) / (eps_p * (1 - p))) / step
    a_real = 1 + math.log((1 - eps) * (1 - eps_p) / (eps * eps_p)) / step
    return z_real, a_real


def walk_geometry(p: float, sigma: float, params: GreedyPolicyParams) -> WalkGeometry:
    """Barrier ``a`` and start ``z`` rounded up to whole steps.

    ``a = ceil(log((1-e)(1-e')(1+s) / (e e' (1-s))) / step)`` and
    ``z = ceil(log(p(1-e')(1+s) / (e'(1-p)(1-s))) / step)``; quotients within
    1e-9 of an integer are treated as that integer.  Check ``.degenerate``
    before using the closed forms.
    """
    z_real, a_real = _shifted_barriers(p, sigma, params)
    return WalkGeometry(sigma=sigma, a=ceil_snap(a_real), z=ceil_snap(z_real))


def exact_lattice_geometry(p: float, sigma: float, params: GreedyPolicyParams) -> WalkGeometry:
    """Lattice walk equivalent to the real-valued greedy policy.

    The policy rejects at the first position below ``log(beta')`` and accepts at
    the first position at or above ``log(beta)``.  Counting steps from the start,
    that is ``floor(z_real)`` steps down and ``ceil(a_real - z_real)`` steps up.
    """
    z_real, a_real = _shifted_barriers(p, sigma, params)
    z = floor_snap(z_real)
    return WalkGeometry(sigma=sigma, a=z + ceil_snap(a_real - z_real), z=z)


def quantization_gap(p: float, sigma: float, params: GreedyPolicyParams) -> dict:
    """Compare rounded-up geometry with the real policy's lattice."""
    rounded = walk_geometry(p, sigma, params)
    actual = exact_lattice_geometry(p, sigma, params)
    report = {"rounded": rounded.to_dict(), "actual": actual.to_dict(), "identical": rounded == actual}
    if not rounded.degenerate and not actual.degenerate:
        cm_r, cm_a = greedy_confusion_exact(rounded), greedy_confusion_exact(actual)
        report["fnr_gap"] = cm_r.fnr - cm_a.fnr
        report["fpr_gap"] = cm_r.fpr - cm_a.fpr
        report["tests_gap"] = expected_tests_overall(p, rounded).exact - expected_tests_overall(p, actual).exact
    return report


# ---------------------------------------------------------------------------
# Gambler's-ruin closed forms
# ---------------------------------------------------------------------------


def _ruin(a: int, z: int, p_right: float) -> tuple[float, float, float]:
    """(absorb at a, absorb at 0, expected steps) for a biased walk on 0..a from z.

    Written in terms of the ratio ``lam = q/p < 1`` (reflecting the walk when the
    drift is downward) with ``expm1`` so that tiny probabilities keep full
    relative precision.
    """
    q_left = 1 - p_right
    if p_right == 0.5:
        raise ValueError("closed forms need a biased walk (sigma > 0)")
    if p_right > 0.5:
        log_lam = math.log(q_left / p_right)
        up = math.expm1(z * log_lam) / math.expm1(a * log_lam)
        down = math.exp(z * log_lam) * math.expm1((a - z) * log_lam) / math.expm1(a * log_lam)
        duration = (a * up - z) / (p_right - q_left)
        return up, down, duration
    down_r, up_r, dur_r = _ruin(a, a - z, q_left)
    return up_r, down_r, dur_r


def expected_tests_skilled(geom: WalkGeometry) -> float:
    """``(1/sigma) * (a*(1-lam**z)/(1-lam**a) - z)`` with ``lam = (1-sigma)/(1+sigma)``."""
    geom.require_nondegenerate()
    return _ruin(geom.a, geom.z, geom.p_right_skilled)[2]


def expected_tests_unskilled(geom: WalkGeometry) -> float:
    """``(1/sigma) * (z - a*(1-lb**z)/(1-lb**a))`` with ``lb = (1+sigma)/(1-sigma)``."""
    geom.require_nondegenerate()
    return _ruin(geom.a, geom.z, geom.p_right_unskilled)[2]


def approx_tests_skilled(geom: WalkGeometry) -> float:
    return 2 * geom.a / (1 + geom.sigma) - geom.z / geom.sigma


def approx_tests_unskilled(geom: WalkGeometry) -> float:
    return geom.z / geom.sigma


def greedy_confusion_exact(geom: WalkGeometry) -> ConfusionMatrix:
    """Absorption probabilities of the skilled/unskilled walks as a confusion matrix.

    ``FNR = (lam**a - lam**z)/(lam**a - 1)`` and ``TNR = (lb**a - lb**z)/(lb**a - 1)``;
    each entry is computed directly rather than as a complement.
    """
    geom.require_nondegenerate()
    tpr, fnr, _ = _ruin(geom.a, geom.z, geom.p_right_skilled)
    fpr, tnr, _ = _ruin(geom.a, geom.z, geom.p_right_unskilled)
    return ConfusionMatrix(tpr=tpr, fpr=fpr, fnr=fnr, tnr=tnr)


@dataclass(frozen=True)
class OverallDuration:
    exact: float
    approx: float

    @property
    def ratio(self) -> float:
        return self.exact / self.approx


def expected_tests_overall(p: float, geom: WalkGeometry) -> OverallDuration:
    """Mixture ``p*E[tau_s] + (1-p)*E[tau_u]`` next to the rough ``a*p/sigma``."""
    exact = p * expected_tests_skilled(geom) + (1 - p) * expected_tests_unskilled(geom)
    return OverallDuration(exact=exact, approx=geom.a * p / geom.sigma)


def order_of_magnitude_ratios(p: float, params: GreedyPolicyParams, geom: WalkGeometry) -> dict:
    """Ratios of exact rates to the order-of-magnitude expressions of the confusion table.

    ``tpr_ratio = TPR / (1 - (e'/p)(1-sigma))`` and
    ``fpr_ratio = FPR / (e (p - e' + e' sigma))``; for ``e' = p`` these reduce to
    ``TPR / sigma`` and ``FPR / (e p sigma)``.
    """
    cm = greedy_confusion_exact(geom)
    s, e, ep = geom.sigma, params.epsilon, params.epsilon_prime
    return {
        "tpr_ratio": cm.tpr / (1 - (ep / p) * (1 - s)),
        "fnr_ratio": cm.fnr / ((ep / p) * (1 - s)),
        "fpr_ratio": cm.fpr / (e * (p - ep + ep * s)),
        "tnr_ratio": cm.tnr / (1 - e * (p - ep + ep * s)),
    }


# ---------------------------------------------------------------------------
# Independent oracle: first-step equations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AbsorptionResult:
    absorb_up: float
    absorb_down: float
    expected_duration: float


def _thomas(a: int, p_right: float, rhs: float, left: float, right: float) -> list[float]:
    """Solve ``x_i = p*x_{i+1} + q*x_{i-1} + rhs`` on 1..a-1 with fixed ends.

    Forward elimination writes ``x_i = c_i*x_{i+1} + d_i``; with nonnegative
    data every operation adds or multiplies nonnegative numbers (the pivots
    ``1 - q*c`` stay in (0, 1]), so small solutions keep relative accuracy.
    """
    q = 1 - p_right
    c = [0.0] * a
    d = [0.0] * a
    d[0] = left
    for i in range(1, a):
        pivot = 1 - q * c[i - 1]
        c[i] = p_right / pivot
        d[i] = (rhs + q * d[i - 1]) / pivot
    x = [0.0] * (a + 1)
    x[0], x[a] = left, right
    for i in range(a - 1, 0, -1):
        x[i] = c[i] * x[i + 1] + d[i]
    return x


def markov_absorption_oracle(a: int, z: int, p_right: float) -> AbsorptionResult:
    """Absorption probabilities and mean duration from the linear first-step equations."""
    if not 0 < z < a:
        raise ValueError("need 0 < z < a")
    if not 0 < p_right < 1:
        raise ValueError("p_right must lie in (0, 1)")
    up = _thomas(a, p_right, 0.0, 0.0, 1.0)[z]
    down = _thomas(a, p_right, 0.0, 1.0, 0.0)[z]
    duration = _thomas(a, p_right, 1.0, 0.0, 0.0)[z]
    return AbsorptionResult(up, down, duration)


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GreedyTrace:
    decision: Decision
    tests_used: int
    true_skill: int

    def to_dict(self) -> dict:
        return {"decision": self.decision.value, "tests_used": self.tests_used, "true_skill": self.true_skill}


def simulate_greedy(
    params: PopulationParams,
    gp: GreedyPolicyParams,
    rng: np.random.Generator,
    max_steps: int = DEFAULT_STEP_CAP,
) -> GreedyTrace:
    """Sample one candidate and test until the policy leaves the retest band."""
    p, sigma = float(params.p), float(params.sigma)
    skill = int(rng.random() < p)
    pass_prob = (1 + sigma) / 2 if skill else (1 - sigma) / 2
    net = 0
    for tests in range(max_steps + 1):
        decision = greedy_decide(_position(p, sigma, net), gp)
        if decision is not Decision.RETEST:
            return GreedyTrace(decision, tests, skill)
        net += 1 if rng.random() < pass_prob else -1
    raise StepCapExceeded(f"no decision after {max_steps} tests")


def simulate_greedy_batch(
    params: PopulationParams,
    gp: GreedyPolicyParams,
    rng: np.random.Generator,
    n: int,
    max_steps: int = DEFAULT_STEP_CAP,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized :func:`simulate_greedy`: (skills, accepted, tests_used) arrays."""
    p, sigma = float(params.p), float(params.sigma)
    skills = (rng.random(n) < p).astype(np.int8)
    pass_prob = np.where(skills == 1, (1 + sigma) / 2, (1 - sigma) / 2)
    step = math.log((1 + sigma) / (1 - sigma))
    start, hi, lo = logit(p), gp.accept_barrier, gp.reject_barrier
    net = np.zeros(n, dtype=np.int64)
    tests = np.zeros(n, dtype=np.int64)
    accepted = np.zeros(n, dtype=bool)
    active = np.arange(n)
    for t in range(max_steps + 1):
        pos = start + net[active] * step
        acc = pos >= hi
        rej = pos < lo
        done = acc | rej
        accepted[active[acc]] = True
        tests[active[done]] = t
        active = active[~done]
        if active.size == 0:
            return skills, accepted, tests
        moves = rng.random(active.size) < pass_prob[active]
        net[active] += np.where(moves, 1, -1)
    raise StepCapExceeded(f"no decision after {max_steps} tests")


def simulate_lattice_walks(
    geom: WalkGeometry,
    skills: np.ndarray,
    rng: np.random.Generator,
    max_steps: int = DEFAULT_STEP_CAP,
) -> tuple[np.ndarray, np.ndarray]:
    """Run the ``(a, z)`` walk for each skill bit: (absorbed_up, steps) arrays."""
    geom.require_nondegenerate()
    skills = np.asarray(skills)
    n = skills.size
    p_right = np.where(skills == 1, geom.p_right_skilled, geom.p_right_unskilled)
    pos = np.full(n, geom.z, dtype=np.int64)
    steps = np.zeros(n, dtype=np.int64)
    up = np.zeros(n, dtype=bool)
    active = np.arange(n)
    for t in range(1, max_steps + 1):
        moves = rng.random(active.size) < p_right[active]
        pos[active] += np.where(moves, 1, -1)
        hit_up = pos[active] >= geom.a
        hit_down = pos[active] <= 0
        done = hit_up | hit_down
        up[active[hit_up]] = True
        steps[active[done]] = t
        active = active[~done]
        if active.size == 0:
            return up, steps
    raise StepCapExceeded(f"walk not absorbed after {max_steps} steps")
