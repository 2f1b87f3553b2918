"""Unsupervised parameter recovery from test logs, with Hoeffding sample planners.

Bernoulli logs identify ``sigma`` from the first two tests of each candidate
and then ``p`` from the first test alone.  Gaussian logs identify the quality
mean, the quality variance and the test-noise variance from per-candidate
means and spreads.

Input formats
-------------
CSV with header ``candidate_id,test_index,outcome``; JSON lines with keys
``candidate_id`` and ``tests`` (a list of outcomes in order).
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._numeric import ceil_snap
from .gaussian import GaussianModel


class InputFormatError(ValueError):
    """A test log could not be parsed."""


class InsufficientSamples(ValueError):
    """Fewer usable candidates than the planner requires for the requested accuracy."""


class DegenerateEstimate(ValueError):
    """The requested quantity is not identifiable from the data."""


def plan_samples(epsilon: float, delta: float) -> int:
    """Candidates needed for a two-sided Hoeffding deviation ``epsilon`` at confidence ``1 - delta``.

    Returns ``ceil(ln(2/delta) / (2*epsilon**2))``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return max(1, ceil_snap(math.log(2 / delta) / (2 * epsilon**2)))


def hoeffding_radius(m: int, delta: float) -> float:
    """Deviation ``epsilon`` guaranteed by ``m`` samples: inverse of :func:`plan_samples`."""
    return math.sqrt(math.log(2 / delta) / (2 * m))


# ---------------------------------------------------------------------------
# Logs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BernoulliTestLog:
    """First two test outcomes of every candidate tested at least twice.

    ``first_two`` has shape ``(m, 2)``; ``skipped`` counts candidates with a
    single test, which carry no information about ``sigma``.
    """

    first_two: np.ndarray
    skipped: int = 0

    def __post_init__(self) -> None:
        arr = np.asarray(self.first_two)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise InputFormatError("first_two must have shape (m, 2)")
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise InputFormatError("test outcomes must be 0 or 1")

    @property
    def m(self) -> int:
        return int(self.first_two.shape[0])

    @classmethod
    def from_sequences(cls, sequences: Iterable[Sequence[int]]) -> BernoulliTestLog:
        rows, skipped = [], 0
        for seq in sequences:
            if len(seq) >= 2:
                rows.append((int(seq[0]), int(seq[1])))
            else:
                skipped += 1
        return cls(np.array(rows, dtype=np.int8).reshape(-1, 2), skipped)

    @classmethod
    def from_path(cls, path: str | Path, fmt: str | None = None) -> BernoulliTestLog:
        return cls.from_sequences(read_test_sequences(path, fmt, cast=_parse_bit).values())


def _parse_bit(value: object) -> int:
    if isinstance(value, bool) or value not in (0, 1, "0", "1"):
        raise InputFormatError(f"outcome must be 0 or 1, got {value!r}")
    return int(value)


def _parse_real(value: object) -> float:
    try:
        x = float(value)
    except (TypeError, ValueError) as exc:
        raise InputFormatError(f"outcome must be a number, got {value!r}") from exc
    if not math.isfinite(x):
        raise InputFormatError(f"outcome must be finite, got {value!r}")
    return x


def _read_csv(path: Path, cast) -> dict[str, list]:
    tests: dict[str, dict[int, object]] = defaultdict(dict)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"candidate_id", "test_index", "outcome"} <= set(reader.fieldnames):
            raise InputFormatError("CSV header must contain candidate_id,test_index,outcome")
        for line, row in enumerate(reader, start=2):
            try:
                index = int(row["test_index"])
            except (TypeError, ValueError) as exc:
                raise InputFormatError(f"line {line}: bad test_index {row['test_index']!r}") from exc
            cid = row["candidate_id"]
            if index in tests[cid]:
                raise InputFormatError(f"line {line}: duplicate test {index} for candidate {cid}")
            tests[cid][index] = cast(row["outcome"])
    return {cid: [by_index[k] for k in sorted(by_index)] for cid, by_index in tests.items()}


def _read_jsonl(path: Path, cast) -> dict[str, list]:
    out: dict[str, list] = {}
    with path.open() as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                cid, tests = str(record["candidate_id"]), record["tests"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise InputFormatError(f"line {line_no}: expected {{candidate_id, tests}}") from exc
            if not isinstance(tests, list):
                raise InputFormatError(f"line {line_no}: tests must be a list")
            if cid in out:
                raise InputFormatError(f"line {line_no}: duplicate candidate {cid}")
            out[cid] = [cast(t) for t in tests]
    return out


def read_test_sequences(path: str | Path, fmt: str | None = None, cast=_parse_real) -> dict[str, list]:
    """Per-candidate test sequences from a CSV or JSON-lines file.

    ``fmt`` is ``"csv"`` or ``"jsonl"``; when omitted it is inferred from the
    file suffix.  Raises :class:`InputFormatError` for malformed or empty input.
    """
    path = Path(path)
    fmt = fmt or ("jsonl" if path.suffix in (".jsonl", ".ndjson") else "csv")
    readers = {"csv": _read_csv, "jsonl": _read_jsonl}
    if fmt not in readers:
        raise InputFormatError(f"unknown format {fmt!r}")
    sequences = readers[fmt](path, cast)
    if not sequences:
        raise InputFormatError(f"{path} contains no test records")
    return sequences


def format_test_sequences(sequences: Mapping[str, Sequence], fmt: str = "csv") -> str:
    """Render per-candidate sequences in one of the accepted input formats."""
    buf = io.StringIO()
    if fmt == "csv":
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["candidate_id", "test_index", "outcome"])
        for cid, tests in sequences.items():
            for j, outcome in enumerate(tests):
                writer.writerow([cid, j, outcome])
    elif fmt == "jsonl":
        for cid, tests in sequences.items():
            buf.write(json.dumps({"candidate_id": cid, "tests": list(tests)}) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return buf.getvalue()


def write_test_sequences(path: str | Path, sequences: Mapping[str, Sequence], fmt: str = "csv") -> None:
    Path(path).write_text(format_test_sequences(sequences, fmt))


# ---------------------------------------------------------------------------
# Bernoulli estimators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimateReport:
    """A point estimate with the accuracy target it was planned for.

    ``statistic`` is the raw frequency the estimate is computed from; the
    Hoeffding guarantee applies to it directly.  ``flagged`` marks a clamped
    (degenerate-sample) estimate.
    """

    name: str
    value: float
    statistic: float
    m_used: int
    epsilon: float | None = None
    delta: float | None = None
    flagged: bool = False
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "statistic": self.statistic,
            "m_used": self.m_used,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "flagged": self.flagged,
            **self.notes,
        }


def _check_target(m: int, epsilon: float | None, delta: float | None) -> None:
    if (epsilon is None) != (delta is None):
        raise ValueError("give both epsilon and delta, or neither")
    if epsilon is not None and m < plan_samples(epsilon, delta):
        raise InsufficientSamples(f"{m} usable candidates, planner requires {plan_samples(epsilon, delta)}")


def inconsistency_count(log: BernoulliTestLog, mode: str = "ordered") -> float:
    """Effective count ``c`` of inconsistent first-two-test pairs.

    ``"ordered"`` counts the pass-then-fail pattern, whose frequency is
    ``(1 - sigma**2)/4``.  ``"either"`` counts both disagreement orders and
    halves the total, giving the same expectation with lower variance.
    """
    first, second = log.first_two[:, 0], log.first_two[:, 1]
    if mode == "ordered":
        return float(np.count_nonzero((first == 1) & (second == 0)))
    if mode == "either":
        return np.count_nonzero(first != second) / 2
    raise ValueError(f"unknown mode {mode!r}")


def estimate_sigma(
    log: BernoulliTestLog,
    epsilon: float | None = None,
    delta: float | None = None,
    mode: str = "ordered",
) -> EstimateReport:
    """``sigma_hat = sqrt(1 - 4c/m)``; the radicand is clamped at 0 and flagged."""
    if log.m == 0:
        raise DegenerateEstimate("no candidate has two tests")
    _check_target(log.m, epsilon, delta)
    freq = inconsistency_count(log, mode) / log.m
    radicand = 1 - 4 * freq
    notes = {"mode": mode, "expected_statistic": "(1 - sigma^2)/4"}
    return EstimateReport("sigma", math.sqrt(max(radicand, 0.0)), freq, log.m, epsilon, delta, radicand < 0, notes)


def estimate_p(
    log: BernoulliTestLog,
    sigma_hat: float,
    epsilon: float | None = None,
    delta: float | None = None,
) -> EstimateReport:
    """Invert ``q = 1/2 + (2p - 1)*sigma/2``: ``p_hat = (2*q_hat - 1 + sigma_hat) / (2*sigma_hat)``.

    ``q_hat`` is the fraction of passed first tests.  The result is clamped to
    ``[0, 1]`` and flagged when clamping was needed.
    """
    if not sigma_hat > 0:
        raise DegenerateEstimate("p is not identifiable when sigma_hat is 0")
    if log.m == 0:
        raise DegenerateEstimate("empty log")
    _check_target(log.m, epsilon, delta)
    q_hat = float(np.count_nonzero(log.first_two[:, 0])) / log.m
    raw = invert_first_test_rate(q_hat, sigma_hat)
    value = min(max(raw, 0.0), 1.0)
    return EstimateReport("p", value, q_hat, log.m, epsilon, delta, value != raw, {"unclamped": raw})


def invert_first_test_rate(q: float, sigma: float) -> float:
    return (2 * q - 1 + sigma) / (2 * sigma)


def synthetic_bernoulli_log(p: float, sigma: float, m: int, rng: np.random.Generator, n_tests: int = 2) -> np.ndarray:
    """Outcome matrix ``(m, n_tests)`` drawn from the Bernoulli screening model."""
    skills = rng.random(m) < p
    flips = rng.random((m, n_tests)) < (1 - sigma) / 2
    return (skills[:, None] ^ flips).astype(np.int8)


# ---------------------------------------------------------------------------
# Gaussian estimators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianEstimates:
    """Plug-in estimates and their bias-corrected counterparts.

    The plug-in noise variance divides by ``n`` and the plug-in quality
    variance absorbs the noise of each candidate mean, so in expectation they
    equal ``(n-1)/n * sigma_eta2`` and ``(m-1)/m * (sigma_Q2 + sigma_eta2/n)``.
    The corrected values remove both effects.  ``error_scale`` is
    ``sqrt(ln(1/delta)/m)``, the order of the deviation bound.
    """

    mu_hat: float
    sigma_eta2_hat: float
    sigma_Q2_hat: float
    sigma_eta2_corrected: float
    sigma_Q2_corrected: float
    m: int
    error_scale: float | None = None

    def model(self, corrected: bool = True) -> GaussianModel:
        if corrected:
            return GaussianModel(self.mu_hat, self.sigma_Q2_corrected, self.sigma_eta2_corrected)
        return GaussianModel(self.mu_hat, self.sigma_Q2_hat, self.sigma_eta2_hat)

    def to_dict(self) -> dict:
        return {
            "mu_hat": self.mu_hat,
            "sigma_eta2_hat": self.sigma_eta2_hat,
            "sigma_Q2_hat": self.sigma_Q2_hat,
            "sigma_eta2_corrected": self.sigma_eta2_corrected,
            "sigma_Q2_corrected": self.sigma_Q2_corrected,
            "m": self.m,
            "error_scale": self.error_scale,
        }


def estimate_gaussian(logs: Iterable[Sequence[float]], delta: float | None = None) -> GaussianEstimates:
    """Method-of-moments estimates of ``(mu_Q, sigma_eta2, sigma_Q2)``.

    Candidates may have different test counts, each at least 2.  The corrected
    quality variance is clamped at 0.
    """
    rows = [np.asarray(seq, dtype=float) for seq in logs]
    if not rows:
        raise DegenerateEstimate("no candidates")
    if any(r.size < 2 for r in rows):
        raise DegenerateEstimate("every candidate needs at least two tests")
    m = len(rows)
    means = np.array([r.mean() for r in rows])
    counts = np.array([r.size for r in rows], dtype=float)
    within = np.array([np.mean((r - r.mean()) ** 2) for r in rows])
    mu_hat = float(means.mean())
    eta_hat = float(within.mean())
    q_hat = float(np.mean((means - mu_hat) ** 2))
    eta_corr = float(np.mean(within * counts / (counts - 1)))
    q_corr = q_hat * m / (m - 1) - eta_corr * float(np.mean(1 / counts)) if m > 1 else float("nan")
    scale = math.sqrt(math.log(1 / delta) / m) if delta is not None else None
    return GaussianEstimates(mu_hat, eta_hat, q_hat, eta_corr, max(q_corr, 0.0), m, scale)


def synthetic_gaussian_logs(model: GaussianModel, m: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Test matrix ``(m, n)``: quality per row plus independent noise per entry."""
    quality = model.mu_Q + math.sqrt(model.sigma_Q2) * rng.standard_normal(m)
    return quality[:, None] + math.sqrt(model.sigma_eta2) * rng.standard_normal((m, n))
