"""Effectiveness, efficiency and significance metrics of generation runs."""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import TYPE_CHECKING, Any, Iterable, Mapping, Optional, Sequence, Union

import numpy as np
from scipy.special import comb
from scipy.stats import norm, rankdata, tiecorrect

from .const import EXACT_MWU_MAX_PRODUCT, SIGNIFICANCE_LEVEL
from .exceptions import InputError, UndefinedRateError
from .toolchain import CoverageCounter

if TYPE_CHECKING:
    from .coordinator import GenerationRun

_LOGGER = logging.getLogger(__name__)

MWU_METHODS = ("auto", "exact", "asymptotic")


def compilation_rate(n_generated: int, n_non_compiling: int) -> float:
    """Share of generated tests that compile.

    Raises:
        UndefinedRateError: If no tests were generated
    """
    if n_generated <= 0:
        raise UndefinedRateError("Compilation rate is undefined without generated tests")
    if not 0 <= n_non_compiling <= n_generated:
        raise ValueError(f"{n_non_compiling} non-compiling of {n_generated} generated tests")
    return (n_generated - n_non_compiling) / n_generated


def passing_rate(n_generated: int, n_non_compiling: int, n_non_passing: int) -> float:
    """Share of generated tests that compile and pass.

    Raises:
        UndefinedRateError: If no tests were generated
    """
    if n_generated <= 0:
        raise UndefinedRateError("Passing rate is undefined without generated tests")
    if n_non_compiling < 0 or n_non_passing < 0 or n_non_compiling + n_non_passing > n_generated:
        raise ValueError(
            f"{n_non_compiling} non-compiling and {n_non_passing} non-passing "
            f"of {n_generated} generated tests"
        )
    return (n_generated - (n_non_compiling + n_non_passing)) / n_generated


def format_percent(value: Optional[float]) -> str:
    """Render a ratio as a percentage with two decimals, ``n/a`` when undefined."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "n/a"
    return f"{value * 100:.2f}%"


@dataclass(frozen=True)
class AggregateResult:
    """Pooled totals over several projects."""

    covered: int
    total: int
    mean_of_ratios: Optional[float]

    @property
    def pooled(self) -> Optional[float]:
        return self.covered / self.total if self.total else None


def aggregate(snapshots: Iterable[Union[CoverageCounter, tuple[int, int]]]) -> AggregateResult:
    """Sum covered and total counts across projects, then divide.

    The mean of the per-project ratios is kept as a secondary figure.

    Raises:
        InputError: If no snapshot is given
    """
    counters = [s if isinstance(s, CoverageCounter) else CoverageCounter(*s) for s in snapshots]
    if not counters:
        raise InputError("aggregate needs at least one snapshot")
    ratios = [c.ratio for c in counters if c.ratio is not None]
    return AggregateResult(
        covered=sum(c.covered for c in counters),
        total=sum(c.total for c in counters),
        mean_of_ratios=sum(ratios) / len(ratios) if ratios else None,
    )


@dataclass(frozen=True)
class SignificanceResult:
    """Outcome of a two-sided Mann-Whitney U test."""

    u_statistic: float
    p_value: float
    method: str = "exact"
    alpha: float = SIGNIFICANCE_LEVEL

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value out of range: {self.p_value}")

    @property
    def significant(self) -> bool:
        return self.p_value < self.alpha

    def as_dict(self) -> dict[str, Any]:
        return {
            "u_statistic": self.u_statistic,
            "p_value": self.p_value,
            "method": self.method,
            "significant": self.significant,
        }


def _exact_p_value(doubled_ranks: Sequence[int], n_a: int, observed: int) -> float:
    """Two-sided p of a doubled rank sum under the permutation null.

    Counts, for every subset of ``n_a`` pooled positions, the sum of their
    doubled midranks, so ties keep their midranks throughout.
    """
    ways: list[dict[int, int]] = [defaultdict(int) for _ in range(n_a + 1)]
    ways[0][0] = 1
    for seen, rank in enumerate(doubled_ranks):
        for k in range(min(seen + 1, n_a), 0, -1):
            for partial, count in list(ways[k - 1].items()):
                ways[k][partial + rank] += count
    n_total = len(doubled_ranks)
    assignments = comb(n_total, n_a, exact=True)
    centre = n_a * (n_total + 1)
    deviation = abs(observed - centre)
    extreme = sum(count for total, count in ways[n_a].items() if abs(total - centre) >= deviation)
    return float(min(Fraction(extreme, assignments), Fraction(1)))


def _asymptotic_p_value(ranked: np.ndarray, n_a: int, n_b: int, u_a: float) -> float:
    """Normal approximation with tie and continuity correction."""
    correction = tiecorrect(ranked)
    if correction == 0:
        return 1.0
    sd = math.sqrt(correction * n_a * n_b * (n_a + n_b + 1) / 12.0)
    big_u = max(u_a, n_a * n_b - u_a)
    z = (big_u - n_a * n_b / 2.0 - 0.5) / sd
    return float(min(1.0, 2 * norm.sf(z)))


def mann_whitney_u(
    sample_a: Sequence[float], sample_b: Sequence[float], method: str = "auto"
) -> SignificanceResult:
    """Two-sided Mann-Whitney U test of ``sample_a`` against ``sample_b``.

    ``auto`` enumerates the exact null distribution when
    ``len(a) * len(b) <= 400`` and uses the normal approximation otherwise.
    The reported statistic is U of ``sample_a``.

    Raises:
        InputError: If a sample is empty or the method is unknown
    """
    if method not in MWU_METHODS:
        raise InputError(f"Unknown Mann-Whitney method: {method}")
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise InputError("Mann-Whitney U needs two non-empty samples")
    if np.isnan(a).any() or np.isnan(b).any():
        raise InputError("Mann-Whitney U samples must not contain NaN")

    n_a, n_b = a.size, b.size
    ranked = rankdata(np.concatenate((a, b)))
    rank_sum_a = float(np.sum(ranked[:n_a]))
    u_a = rank_sum_a - n_a * (n_a + 1) / 2.0

    if method == "exact" or (method == "auto" and n_a * n_b <= EXACT_MWU_MAX_PRODUCT):
        doubled = [int(round(r * 2)) for r in ranked]
        p_value = _exact_p_value(doubled, n_a, int(round(rank_sum_a * 2)))
        used = "exact"
    else:
        p_value = _asymptotic_p_value(ranked, n_a, n_b, u_a)
        used = "asymptotic"
    _LOGGER.debug("Mann-Whitney U %s vs %s samples: U=%s p=%s (%s)", n_a, n_b, u_a, p_value, used)
    return SignificanceResult(u_statistic=u_a, p_value=p_value, method=used)


@dataclass(frozen=True)
class SuiteMetrics:
    """Effectiveness and efficiency figures of one run."""

    project: str
    mode: str
    n_generated: int
    n_non_compiling: int
    n_non_passing: int
    total_requests: int
    lines: CoverageCounter = field(default_factory=CoverageCounter)
    branches: CoverageCounter = field(default_factory=CoverageCounter)
    mutants: CoverageCounter = field(default_factory=CoverageCounter)
    coverage_available: bool = True
    mutation_available: bool = True
    coverage_fallback: bool = False
    transport_failures: int = 0
    aborted_units: tuple[str, ...] = ()
    phase_requests: Mapping[str, int] = field(default_factory=dict)
    extra_content: Mapping[str, int] = field(default_factory=dict)
    per_container: Mapping[str, Mapping[str, int]] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_non_compiling + self.n_non_passing > self.n_generated:
            raise ValueError("More failing tests than generated tests")

    @property
    def compilation_rate(self) -> Optional[float]:
        try:
            return compilation_rate(self.n_generated, self.n_non_compiling)
        except UndefinedRateError:
            return None

    @property
    def passing_rate(self) -> Optional[float]:
        try:
            return passing_rate(self.n_generated, self.n_non_compiling, self.n_non_passing)
        except UndefinedRateError:
            return None

    @property
    def n_passing(self) -> int:
        return self.n_generated - self.n_non_compiling - self.n_non_passing

    @property
    def line_cov(self) -> Optional[float]:
        return self.lines.ratio if self.coverage_available else None

    @property
    def branch_cov(self) -> Optional[float]:
        return self.branches.ratio if self.coverage_available else None

    @property
    def mutation_score(self) -> Optional[float]:
        return self.mutants.ratio if self.mutation_available else None

    def container_values(self, metric: str) -> dict[str, float]:
        """Return per-container line or branch ratios, skipping empty scopes."""
        values = {}
        for container, counts in self.per_container.items():
            total = counts[f"{metric}_total"]
            if total:
                values[container] = counts[f"{metric}_covered"] / total
        return values

    @classmethod
    def from_run(cls, run: Union["GenerationRun", Mapping[str, Any]]) -> "SuiteMetrics":
        """Build metrics from a run or from the ``run`` document of ``run.json``."""
        data = run if isinstance(run, Mapping) else run.as_dict()
        ledger = data["ledger"]
        coverage = data.get("coverage")
        mutation = data.get("mutation")
        return cls(
            project=data["project_name"],
            mode=data["mode"],
            n_generated=ledger["generated_tests"],
            n_non_compiling=ledger["non_compiling_tests"],
            n_non_passing=ledger["non_passing_tests"],
            total_requests=ledger["total_requests"],
            lines=CoverageCounter(coverage["lines_covered"], coverage["lines_total"])
            if coverage
            else CoverageCounter(),
            branches=CoverageCounter(coverage["branches_covered"], coverage["branches_total"])
            if coverage
            else CoverageCounter(),
            mutants=CoverageCounter(mutation["mutants_killed"], mutation["mutants_total"])
            if mutation
            else CoverageCounter(),
            coverage_available=coverage is not None,
            mutation_available=mutation is not None,
            coverage_fallback=data.get("coverage_fallback", False),
            transport_failures=ledger.get("transport_failures", 0),
            aborted_units=tuple(data.get("aborted_units", ())),
            phase_requests=dict(data.get("phase_requests", {})),
            extra_content=dict(data.get("extra_content", {})),
            per_container=dict(coverage.get("per_container", {})) if coverage else {},
        )

    def as_dict(self) -> dict[str, Any]:
        data = asdict(self)
        for key in ("lines", "branches", "mutants"):
            counter = getattr(self, key)
            data[key] = {"covered": counter.covered, "total": counter.total}
        data["aborted_units"] = list(self.aborted_units)
        data.update(
            compilation_rate=self.compilation_rate,
            passing_rate=self.passing_rate,
            n_passing=self.n_passing,
            line_cov=self.line_cov,
            branch_cov=self.branch_cov,
            mutation_score=self.mutation_score,
        )
        return data
