"""Independent oracles and the seeded, shard-parallel Monte Carlo harness.

Determinism
-----------
A simulation of ``num_candidates`` draws is cut into fixed-size blocks; block
``i`` always uses Philox substream ``i`` of the master seed and contributes
only integer sums (counts, tests, squared tests).  Shards process contiguous
runs of blocks and the block results are added in block order, so the
summary is bit-identical for any shard count.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Real
from typing import Callable

import numpy as np
import scipy.special

from ._numeric import as_fraction, round_sig
from .bernoulli_core import (
    AlphaLoss,
    ConfusionMatrix,
    PopulationParams,
    ThresholdPolicy,
    alpha_loss,
    threshold_confusion,
)
from .dynamic_policy import (
    Decision,
    GreedyPolicyParams,
    WalkGeometry,
    exact_lattice_geometry,
    expected_tests_skilled,
    expected_tests_unskilled,
    greedy_confusion_exact,
    greedy_decide,
    markov_absorption_oracle,
    simulate_greedy_batch,
    simulate_lattice_walks,
    walk_geometry,
    _position,
)
from .rng import substream

ENUMERATION_TAU_MAX = 20
GREEDY_ENUMERATION_MAX_LEN = 25
DEFAULT_BLOCK_SIZE = 1 << 14
CI_MULTIPLIER = 3.0


# ---------------------------------------------------------------------------
# Brute-force enumeration oracles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThresholdOracleResult:
    loss: Fraction
    confusion: ConfusionMatrix


def enumerate_threshold_oracle(
    tau: int, params: PopulationParams, policy: ThresholdPolicy, alpha: Real
) -> ThresholdOracleResult:
    """Exact rates by visiting every one of the ``2**tau`` outcome sequences.

    Each sequence is decided by its own pass count; its probability under each
    skill value is the product of per-test pass/fail probabilities.  The
    boundary randomization enters as the expected acceptance ``r``.
    """
    if tau > ENUMERATION_TAU_MAX:
        raise ValueError(f"enumeration limited to tau <= {ENUMERATION_TAU_MAX}")
    if policy.tau != tau:
        raise ValueError("policy.tau must equal tau")
    p, eta, r, a = (as_fraction(v) for v in (params.p, params.eta, policy.r, alpha))
    # sequences sharing a pass count have equal probability; tally them by brute force
    sequences_with = [0] * (tau + 1)
    for bits in range(1 << tau):
        sequences_with[bin(bits).count("1")] += 1
    accept_skilled = accept_unskilled = Fraction(0)
    for passes, count in enumerate(sequences_with):
        fails = tau - passes
        acceptance = Fraction(1) if passes > policy.theta else (r if passes == policy.theta else Fraction(0))
        accept_skilled += count * acceptance * (1 - eta) ** passes * eta**fails
        accept_unskilled += count * acceptance * eta**passes * (1 - eta) ** fails
    cm = ConfusionMatrix.from_accept_rates(accept_skilled, accept_unskilled)
    loss = a * (1 - p) * cm.fpr + (1 - a) * p * cm.fnr
    return ThresholdOracleResult(loss, cm)


@dataclass(frozen=True)
class Bracket:
    lower: float
    upper: float

    def contains(self, value: float, slack: float = 1e-12) -> bool:
        return self.lower - slack <= value <= self.upper + slack

    @property
    def width(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True)
class GreedyEnumeration:
    """Rate brackets from decision-tree enumeration truncated at ``max_len`` tests.

    ``tests_lower`` bounds each class's expected test count from below: every
    unresolved walk is charged ``max_len`` tests.
    """

    tpr: Bracket
    fnr: Bracket
    fpr: Bracket
    tnr: Bracket
    unresolved_skilled: float
    unresolved_unskilled: float
    tests_lower_skilled: float
    tests_lower_unskilled: float


def _enumerate_class(p: float, sigma: float, gp: GreedyPolicyParams, pass_prob: float, max_len: int):
    # mass of unresolved prefixes, keyed by net passes; prefixes with equal net
    # passes and length reach the same posterior and so share a subtree
    frontier = {0: 1.0}
    accepted = rejected = tests = 0.0
    for length in range(max_len + 1):
        nxt: dict[int, float] = {}
        for net, mass in frontier.items():
            decision = greedy_decide(_position(p, sigma, net), gp)
            if decision is Decision.ACCEPT:
                accepted += mass
                tests += mass * length
            elif decision is Decision.REJECT:
                rejected += mass
                tests += mass * length
            elif length < max_len:
                nxt[net + 1] = nxt.get(net + 1, 0.0) + mass * pass_prob
                nxt[net - 1] = nxt.get(net - 1, 0.0) + mass * (1 - pass_prob)
            else:
                nxt[net] = mass
        frontier = nxt
    unresolved = math.fsum(frontier.values())
    return accepted, rejected, unresolved, tests + unresolved * max_len


def enumerate_greedy_oracle(params: PopulationParams, gp: GreedyPolicyParams, max_len: int) -> GreedyEnumeration:
    """Follow the real-valued greedy policy down every outcome prefix up to ``max_len`` tests."""
    if not 0 <= max_len <= GREEDY_ENUMERATION_MAX_LEN:
        raise ValueError(f"max_len must lie in [0, {GREEDY_ENUMERATION_MAX_LEN}]")
    p, sigma = float(params.p), float(params.sigma)
    acc_s, rej_s, open_s, tests_s = _enumerate_class(p, sigma, gp, (1 + sigma) / 2, max_len)
    acc_u, rej_u, open_u, tests_u = _enumerate_class(p, sigma, gp, (1 - sigma) / 2, max_len)
    return GreedyEnumeration(
        tpr=Bracket(acc_s, acc_s + open_s),
        fnr=Bracket(rej_s, rej_s + open_s),
        fpr=Bracket(acc_u, acc_u + open_u),
        tnr=Bracket(rej_u, rej_u + open_u),
        unresolved_skilled=open_s,
        unresolved_unskilled=open_u,
        tests_lower_skilled=tests_s,
        tests_lower_unskilled=tests_u,
    )


# ---------------------------------------------------------------------------
# Monte Carlo harness
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimulationConfig:
    seed: int
    num_candidates: int
    shards: int = 1
    block_size: int = DEFAULT_BLOCK_SIZE

    def __post_init__(self) -> None:
        if self.num_candidates < 1:
            raise ValueError("num_candidates must be positive")
        if self.shards < 1:
            raise ValueError("shards must be positive")
        if self.block_size < 1:
            raise ValueError("block_size must be positive")

    def blocks(self) -> list[tuple[int, int]]:
        """(substream index, size) for every block."""
        full, rest = divmod(self.num_candidates, self.block_size)
        sizes = [self.block_size] * full + ([rest] if rest else [])
        return list(enumerate(sizes))


@dataclass(frozen=True)
class ThresholdExperiment:
    params: PopulationParams
    policy: ThresholdPolicy
    kind: str = field(default="threshold", init=False)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params.to_dict(), "policy": self.policy.to_dict()}


@dataclass(frozen=True)
class GreedyExperiment:
    """Greedy screening; ``barriers="exact"`` runs the real-valued policy,
    ``"quantized"`` the rounded-up ``(a, z)`` lattice walk of the closed forms."""

    params: PopulationParams
    gp: GreedyPolicyParams
    barriers: str = "exact"
    kind: str = field(default="greedy", init=False)

    def __post_init__(self) -> None:
        if self.barriers not in ("exact", "quantized"):
            raise ValueError("barriers must be 'exact' or 'quantized'")

    def geometry(self) -> WalkGeometry:
        fn = exact_lattice_geometry if self.barriers == "exact" else walk_geometry
        return fn(float(self.params.p), float(self.params.sigma), self.gp)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": self.params.to_dict(), "gp": self.gp.to_dict(), "barriers": self.barriers}


ExperimentSpec = ThresholdExperiment | GreedyExperiment


def experiment_from_dict(data: dict) -> ExperimentSpec:
    params = PopulationParams.from_dict(data["params"])
    if data["kind"] == "threshold":
        return ThresholdExperiment(params, ThresholdPolicy.from_dict(data["policy"]))
    if data["kind"] == "greedy":
        gp = GreedyPolicyParams(**data["gp"])
        return GreedyExperiment(params, gp, data.get("barriers", "exact"))
    raise ValueError(f"unknown experiment kind {data['kind']!r}")


# (skill, accepted) counts, then per-skill test sums and squared sums; all ints
_BlockSums = tuple[int, ...]
_N_FIELDS = 8


def _sums(skills: np.ndarray, accepted: np.ndarray, tests: np.ndarray) -> _BlockSums:
    out = []
    for s in (1, 0):
        mask = skills == s
        out.append(int(np.count_nonzero(mask & accepted)))
        out.append(int(np.count_nonzero(mask & ~accepted)))
    for s in (1, 0):
        t = tests[skills == s].astype(np.int64)
        out.append(int(t.sum()))
        out.append(int((t * t).sum()))
    return tuple(out)


def _run_block(seed: int, index: int, size: int, spec: ExperimentSpec) -> _BlockSums:
    rng = substream(seed, index)
    if isinstance(spec, ThresholdExperiment):
        p, eta = float(spec.params.p), float(spec.params.eta)
        pol = spec.policy
        skills = (rng.random(size) < p).astype(np.int8)
        flips = rng.random((size, pol.tau)) < eta
        passes = (skills[:, None] ^ flips).sum(axis=1)
        coin = rng.random(size) < float(pol.r)
        accepted = (passes > pol.theta) | ((passes == pol.theta) & coin)
        return _sums(skills, accepted, np.full(size, pol.tau))
    if spec.barriers == "exact":
        skills, accepted, tests = simulate_greedy_batch(spec.params, spec.gp, rng, size)
        return _sums(skills, accepted, tests)
    skills = (rng.random(size) < float(spec.params.p)).astype(np.int8)
    up, steps = simulate_lattice_walks(spec.geometry(), skills, rng)
    return _sums(skills, up, steps)


def _run_blocks(seed: int, blocks: list[tuple[int, int]], spec: ExperimentSpec) -> list[_BlockSums]:
    return [_run_block(seed, index, size, spec) for index, size in blocks]


@dataclass(frozen=True)
class EmpiricalSummary:
    """Merged simulation tallies.

    ``counts[(skill, decision)]`` for skill in ``{1, 0}`` and decision in
    ``{"accept", "reject"}``; test sums are split by true skill.
    """

    num_candidates: int
    counts: dict
    tests_sum: dict
    tests_sumsq: dict

    @classmethod
    def from_sums(cls, sums: _BlockSums) -> EmpiricalSummary:
        a1, r1, a0, r0, t1, q1, t0, q0 = sums
        return cls(
            num_candidates=a1 + r1 + a0 + r0,
            counts={(1, "accept"): a1, (1, "reject"): r1, (0, "accept"): a0, (0, "reject"): r0},
            tests_sum={1: t1, 0: t0},
            tests_sumsq={1: q1, 0: q0},
        )

    def class_size(self, skill: int) -> int:
        return self.counts[(skill, "accept")] + self.counts[(skill, "reject")]

    def rate(self, skill: int, decision: str) -> float:
        return self.counts[(skill, decision)] / self.class_size(skill)

    def rate_se(self, skill: int, decision: str) -> float:
        q = self.rate(skill, decision)
        return math.sqrt(q * (1 - q) / self.class_size(skill))

    def confusion(self) -> ConfusionMatrix:
        return ConfusionMatrix(
            tpr=self.rate(1, "accept"), fpr=self.rate(0, "accept"), fnr=self.rate(1, "reject"), tnr=self.rate(0, "reject")
        )

    def _moments(self, total: int, s: int, q: int) -> tuple[float, float]:
        mean = s / total
        var = max(q / total - mean * mean, 0.0) * total / (total - 1) if total > 1 else 0.0
        return mean, var

    def mean_tests(self, skill: int | None = None) -> float:
        if skill is None:
            return (self.tests_sum[1] + self.tests_sum[0]) / self.num_candidates
        return self.tests_sum[skill] / self.class_size(skill)

    def var_tests(self, skill: int | None = None) -> float:
        if skill is None:
            return self._moments(self.num_candidates, self.tests_sum[1] + self.tests_sum[0], self.tests_sumsq[1] + self.tests_sumsq[0])[1]
        return self._moments(self.class_size(skill), self.tests_sum[skill], self.tests_sumsq[skill])[1]

    def mean_tests_se(self, skill: int | None = None) -> float:
        n = self.num_candidates if skill is None else self.class_size(skill)
        return math.sqrt(self.var_tests(skill) / n)

    def agrees(self, estimate: float, se: float, exact: float, k: float = CI_MULTIPLIER) -> bool:
        return abs(estimate - exact) <= k * se

    def to_dict(self) -> dict:
        def r(x: float) -> float:
            return round_sig(x)

        derived = {}
        for skill, tag in ((1, "skilled"), (0, "unskilled")):
            if self.class_size(skill):
                derived[f"mean_tests_{tag}"] = r(self.mean_tests(skill))
                derived[f"mean_tests_{tag}_se"] = r(self.mean_tests_se(skill))
        if self.class_size(1) and self.class_size(0):
            for name, (skill, dec) in {"tpr": (1, "accept"), "fnr": (1, "reject"), "fpr": (0, "accept"), "tnr": (0, "reject")}.items():
                derived[name] = r(self.rate(skill, dec))
                derived[f"{name}_se"] = r(self.rate_se(skill, dec))
        return {
            "num_candidates": self.num_candidates,
            "counts": {f"{'skilled' if s else 'unskilled'}_{d}": v for (s, d), v in self.counts.items()},
            "tests_sum": {"skilled": self.tests_sum[1], "unskilled": self.tests_sum[0]},
            "tests_sumsq": {"skilled": self.tests_sumsq[1], "unskilled": self.tests_sumsq[0]},
            "mean_tests": r(self.mean_tests()),
            "mean_tests_se": r(self.mean_tests_se()),
            **derived,
        }


def run_experiment(config: SimulationConfig, spec: ExperimentSpec) -> EmpiricalSummary:
    """Simulate ``config.num_candidates`` candidates under ``spec``.

    With ``shards > 1`` the blocks are split into contiguous runs and executed
    in worker processes; the merged result does not depend on ``shards``.
    A step-cap breach in any walk propagates as
    :class:`~screenlab.dynamic_policy.StepCapExceeded`.
    """
    blocks = config.blocks()
    if config.shards == 1 or len(blocks) == 1:
        results = _run_blocks(config.seed, blocks, spec)
    else:
        n = min(config.shards, len(blocks))
        bounds = [len(blocks) * i // n for i in range(n + 1)]
        chunks = [blocks[bounds[i] : bounds[i + 1]] for i in range(n)]
        with ProcessPoolExecutor(max_workers=n) as pool:
            parts = pool.map(_run_blocks, itertools.repeat(config.seed), chunks, itertools.repeat(spec))
            results = [res for part in parts for res in part]
    totals = [0] * _N_FIELDS
    for block in results:
        totals = [t + b for t, b in zip(totals, block)]
    return EmpiricalSummary.from_sums(tuple(totals))


# ---------------------------------------------------------------------------
# Oracle registry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleCheck:
    """A closed-form quantity, the independent oracle it is compared with, and the tolerance."""

    quantity: str
    module: str
    oracle: str
    run: Callable[[], float]
    tolerance: float

    def passes(self) -> bool:
        return self.run() <= self.tolerance


def _rel(x: float, y: float) -> float:
    return abs(x - y) / max(abs(y), 1e-300)


def _threshold_confusion_vs_enumeration() -> float:
    worst = 0.0
    for tau in range(1, 9):
        for theta in range(tau + 2):
            params = PopulationParams(Fraction(3, 10), Fraction(2, 5))
            policy = ThresholdPolicy(tau, theta, Fraction(1, 3))
            oracle = enumerate_threshold_oracle(tau, params, policy, Fraction(1, 4))
            cm = threshold_confusion(policy, params)
            worst = max(worst, float(abs(cm.fpr - oracle.confusion.fpr)), float(abs(cm.fnr - oracle.confusion.fnr)))
            worst = max(worst, float(abs(alpha_loss(policy, params, AlphaLoss(Fraction(1, 4))) - oracle.loss)))
    return worst


def _walk_vs_markov(quantity: str) -> Callable[[], float]:
    def run() -> float:
        worst = 0.0
        for sigma in (0.2, 0.5, 0.8):
            for a in range(2, 31):
                for z in range(1, a):
                    geom = WalkGeometry(sigma, a, z)
                    if quantity == "confusion":
                        cm = greedy_confusion_exact(geom)
                        s = markov_absorption_oracle(a, z, geom.p_right_skilled)
                        u = markov_absorption_oracle(a, z, geom.p_right_unskilled)
                        pairs = [(cm.tpr, s.absorb_up), (cm.fnr, s.absorb_down), (cm.fpr, u.absorb_up), (cm.tnr, u.absorb_down)]
                    else:
                        pairs = [
                            (expected_tests_skilled(geom), markov_absorption_oracle(a, z, geom.p_right_skilled).expected_duration),
                            (expected_tests_unskilled(geom), markov_absorption_oracle(a, z, geom.p_right_unskilled).expected_duration),
                        ]
                    worst = max(worst, *(_rel(x, y) for x, y in pairs))
        return worst

    return run


def _greedy_vs_enumeration() -> float:
    # 0 when every bracket contains the closed form of the policy's own lattice
    misses = 0
    for p in (0.2, 0.5):
        for sigma in (0.45, 0.85):
            gp = GreedyPolicyParams(0.05, p)
            geom = exact_lattice_geometry(p, sigma, gp)
            if geom.degenerate:
                continue
            cm = greedy_confusion_exact(geom)
            enum = enumerate_greedy_oracle(PopulationParams(p, sigma), gp, GREEDY_ENUMERATION_MAX_LEN)
            for name in ("tpr", "fnr", "fpr", "tnr"):
                misses += not getattr(enum, name).contains(getattr(cm, name))
    return float(misses)


def _gaussian_vs_schur(quantity: str) -> Callable[[], float]:
    from .gaussian import GaussianModel, conditional_mean, conditional_variance, schur_oracle

    def run() -> float:
        rng = substream(7, 0)
        worst = 0.0
        for sq in (0.5, 1.0, 4.0):
            for se in (0.25, 1.0, 3.0):
                model = GaussianModel(1.5, sq, se)
                for n in (1, 2, 5, 10, 50):
                    oracle = schur_oracle(model, n)
                    if quantity == "variance":
                        worst = max(worst, _rel(conditional_variance(model, n), oracle.variance))
                    else:
                        y = rng.normal(1.5, 2.0, n)
                        worst = max(worst, _rel(conditional_mean(model, y), oracle.mean(model, y)))
        return worst

    return run


def _optimal_theta_vs_exhaustive() -> float:
    from .threshold_optimizer import loss_curve, optimal_theta

    misses = 0
    for tau in (1, 4, 7, 12):
        for p, alpha, sigma in itertools.product((0.1, 0.5, 0.9), (0.3, 0.5), (0.2, 0.7)):
            losses = loss_curve(tau, p, alpha, sigma)
            misses += losses[optimal_theta(tau, p, alpha, sigma)] != min(losses)
    return float(misses)


def _budget_vs_pure_search() -> float:
    from .threshold_optimizer import BudgetConstraint, best_pure_policy, optimize_fdr_budget

    excess = 0.0
    for B in (Fraction(3, 2), Fraction(5), Fraction(18)):
        params = PopulationParams.from_eta(Fraction(1, 2), Fraction(1, 3))
        opt = optimize_fdr_budget(params, BudgetConstraint(B), tau_max=8)
        pure = best_pure_policy(params, BudgetConstraint(B), tau_max=8)
        excess = max(excess, float(opt.fdr - pure.fdr))
    return excess


def _mle_vs_grid() -> float:
    from .fairness import mle_eta

    grid = np.linspace(0.0, 1.0, 10_001)
    worst = 0.0
    for n in range(1, 16):
        for k in range(n + 1):
            loglik = scipy.special.xlogy(k, grid) + scipy.special.xlog1py(n - k, -grid)
            worst = max(worst, abs(float(mle_eta(k, n)) - float(grid[np.argmax(loglik)])))
    return worst


def _audit_vs_enumeration() -> float:
    from .fairness import GroupPair, shared_policy_audit

    worst = 0.0
    groups = GroupPair.from_etas(Fraction(1, 2), Fraction(1, 10), Fraction(3, 10))
    for tau in range(1, 9):
        for theta in range(1, tau + 1):
            policy = ThresholdPolicy(tau, theta)
            audit = shared_policy_audit(policy, groups)
            for g, cm in ((groups.group1, audit.confusion1), (groups.group2, audit.confusion2)):
                oracle = enumerate_threshold_oracle(tau, g, policy, 0).confusion
                worst = max(worst, float(abs(cm.fpr - oracle.fpr)), float(abs(cm.fnr - oracle.fnr)))
    return worst


def _rank1_vs_numeric() -> float:
    from .gaussian import GaussianModel, covariance_matrix, rank1_inverse

    worst = 0.0
    for n in (1, 2, 5, 10, 50):
        model = GaussianModel(0.0, 2.0, 0.5)
        block = covariance_matrix(model, n)[1:, 1:]
        inv = rank1_inverse(model.sigma_eta2, model.sigma_Q2, n).matrix(n)
        worst = max(worst, float(np.abs(block @ inv - np.eye(n)).max()))
    return worst


ORACLE_REGISTRY: tuple[OracleCheck, ...] = (
    OracleCheck("threshold_confusion, alpha_loss", "bernoulli_core", "enumerate_threshold_oracle", _threshold_confusion_vs_enumeration, 0.0),
    OracleCheck("optimal_theta", "threshold_optimizer", "exhaustive argmin of loss_curve", _optimal_theta_vs_exhaustive, 0.0),
    OracleCheck("optimize_fdr_budget", "threshold_optimizer", "best_pure_policy exhaustive search", _budget_vs_pure_search, 0.0),
    OracleCheck("greedy_confusion_exact", "dynamic_policy", "markov_absorption_oracle", _walk_vs_markov("confusion"), 1e-9),
    OracleCheck("expected_tests_skilled, expected_tests_unskilled", "dynamic_policy", "markov_absorption_oracle", _walk_vs_markov("duration"), 1e-9),
    OracleCheck("greedy policy path semantics", "dynamic_policy", "enumerate_greedy_oracle", _greedy_vs_enumeration, 0.0),
    OracleCheck("mle_eta", "fairness", "likelihood grid argmax", _mle_vs_grid, 5e-5),
    OracleCheck("shared_policy_audit", "fairness", "enumerate_threshold_oracle", _audit_vs_enumeration, 0.0),
    OracleCheck("conditional_variance", "gaussian", "schur_oracle", _gaussian_vs_schur("variance"), 1e-9),
    OracleCheck("conditional_mean", "gaussian", "schur_oracle", _gaussian_vs_schur("mean"), 1e-9),
    OracleCheck("rank1_inverse", "gaussian", "numpy matrix product", _rank1_vs_numeric, 1e-10),
)
