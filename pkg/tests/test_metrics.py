"""Tests for rates, aggregation and the Mann-Whitney U test."""
import itertools
import random
from fractions import Fraction

import numpy as np
import pytest
from scipy.stats import mannwhitneyu, rankdata

from granutest.exceptions import InputError, UndefinedRateError
from granutest.metrics import (
    SuiteMetrics,
    aggregate,
    compilation_rate,
    format_percent,
    mann_whitney_u,
    passing_rate,
)
from granutest.toolchain import CoverageCounter

# Branch and line coverage of six projects, combined suites against hybrid ones.
COMBINED_BRANCH = [36.05, 35.71, 53.39, 31.87, 55.37, 40.22]
HYBRID_BRANCH = [38.56, 33.03, 54.30, 31.87, 62.22, 40.14]
COMBINED_LINE = [49.07, 49.89, 51.06, 44.72, 69.08, 63.67]
HYBRID_LINE = [49.47, 44.30, 47.86, 43.98, 71.47, 63.98]


class TestRates:
    """Compilation and passing rates."""

    @pytest.mark.parametrize(
        ("counts", "expected"),
        [((3232, 367), "88.64%"), ((12158, 1904), "84.34%")],
    )
    def test_compilation_rate(self, counts, expected):
        assert format_percent(compilation_rate(*counts)) == expected

    @pytest.mark.parametrize(
        ("counts", "expected"),
        [((3232, 367, 1232), "50.53%"), ((12158, 1904, 3762), "53.40%")],
    )
    def test_passing_rate(self, counts, expected):
        assert format_percent(passing_rate(*counts)) == expected

    def test_exact_fractions(self):
        assert compilation_rate(3232, 367) == pytest.approx(2865 / 3232)
        assert passing_rate(3232, 367, 1232) == pytest.approx(1633 / 3232)

    def test_undefined_without_tests(self):
        with pytest.raises(UndefinedRateError):
            compilation_rate(0, 0)
        with pytest.raises(UndefinedRateError):
            passing_rate(0, 0, 0)

    @pytest.mark.parametrize("counts", [(10, 11, 0), (10, 6, 5), (10, -1, 0)])
    def test_inconsistent_counts(self, counts):
        with pytest.raises(ValueError):
            passing_rate(*counts)

    def test_format_percent(self):
        assert format_percent(None) == "n/a"
        assert format_percent(float("nan")) == "n/a"
        assert format_percent(1) == "100.00%"


class TestAggregate:
    """Pooled totals across projects."""

    def test_pooled_not_mean(self):
        result = aggregate([(5, 10), (15, 20)])
        assert (result.covered, result.total) == (20, 30)
        assert result.pooled == pytest.approx(2 / 3)
        assert result.mean_of_ratios == pytest.approx(0.625)
        assert result.pooled != pytest.approx(result.mean_of_ratios)

    def test_empty_scopes(self):
        result = aggregate([CoverageCounter(0, 0), CoverageCounter(3, 4)])
        assert result.pooled == 0.75
        assert result.mean_of_ratios == 0.75
        assert aggregate([(0, 0)]).pooled is None

    def test_no_snapshots(self):
        with pytest.raises(InputError):
            aggregate([])


def brute_force_p(sample_a, sample_b):
    """Enumerate every assignment of pooled midranks to the first sample."""
    ranks = [Fraction(r).limit_denominator(2) for r in rankdata(list(sample_a) + list(sample_b))]
    n_a = len(sample_a)
    n_total = len(ranks)
    centre = Fraction(n_a * (n_total + 1), 2)
    observed = abs(sum(ranks[:n_a]) - centre)
    hits = total = 0
    for chosen in itertools.combinations(range(n_total), n_a):
        total += 1
        if abs(sum(ranks[i] for i in chosen) - centre) >= observed:
            hits += 1
    return hits / total


class TestMannWhitneyU:
    """Exact and asymptotic two-sided tests."""

    def test_separated_pairs(self):
        result = mann_whitney_u([1, 2], [10, 20])
        assert result.u_statistic == 0
        assert result.p_value == pytest.approx(1 / 3, abs=1e-12)
        assert result.method == "exact"
        assert not result.significant

    def test_identical_samples(self):
        result = mann_whitney_u([1, 2, 3], [1, 2, 3])
        assert result.u_statistic == 4.5
        assert result.p_value == 1.0

    @pytest.mark.parametrize("n_a", range(1, 7))
    @pytest.mark.parametrize("n_b", range(1, 7))
    def test_matches_enumeration(self, n_a, n_b):
        rng = random.Random(n_a * 10 + n_b)
        for _ in range(3):
            a = [rng.randint(0, 5) for _ in range(n_a)]
            b = [rng.randint(0, 5) for _ in range(n_b)]
            assert mann_whitney_u(a, b, method="exact").p_value == pytest.approx(
                brute_force_p(a, b), abs=1e-12
            )

    def test_matches_scipy_without_ties(self):
        a = [0.11, 0.52, 0.33, 0.94, 0.25, 0.76, 0.47]
        b = [0.68, 0.89, 0.71, 0.99, 0.85, 0.62]
        ours = mann_whitney_u(a, b, method="exact")
        reference = mannwhitneyu(a, b, alternative="two-sided", method="exact")
        assert ours.u_statistic == reference.statistic
        assert ours.p_value == pytest.approx(reference.pvalue, rel=1e-9)

    def test_asymptotic_matches_scipy(self):
        rng = random.Random(7)
        a = [rng.randint(0, 20) for _ in range(25)]
        b = [rng.randint(5, 25) for _ in range(30)]
        ours = mann_whitney_u(a, b)
        assert ours.method == "asymptotic"
        reference = mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
        assert ours.p_value == pytest.approx(reference.pvalue, rel=1e-9)

    @pytest.mark.parametrize("seed", range(20))
    def test_exact_close_to_asymptotic(self, seed):
        rng = np.random.default_rng(seed)
        if seed % 4 == 3:
            a, b = rng.integers(0, 20, size=8), rng.integers(0, 20, size=8)
        else:
            a = np.round(rng.normal(50, 10, size=8), 1)
            b = np.round(rng.normal(50 + seed, 10, size=8), 1)
        exact = mann_whitney_u(a, b, method="exact").p_value
        asymptotic = mann_whitney_u(a, b, method="asymptotic").p_value
        assert abs(exact - asymptotic) <= 0.02

    def test_combined_versus_hybrid_not_significant(self):
        branch = mann_whitney_u(COMBINED_BRANCH, HYBRID_BRANCH)
        line = mann_whitney_u(COMBINED_LINE, HYBRID_LINE)
        assert branch.p_value > 0.05 and not branch.significant
        assert line.p_value > 0.05 and not line.significant

    def test_symmetry(self):
        a, b = [3, 1, 4, 1, 5], [9, 2, 6, 5]
        forward = mann_whitney_u(a, b)
        backward = mann_whitney_u(b, a)
        assert forward.p_value == pytest.approx(backward.p_value, abs=1e-12)
        assert forward.u_statistic + backward.u_statistic == len(a) * len(b)

    def test_clearly_different(self):
        assert mann_whitney_u(range(10), range(100, 110)).significant

    @pytest.mark.parametrize(
        ("a", "b", "method"),
        [([], [1], "auto"), ([1], [], "auto"), ([float("nan")], [1], "auto"), ([1], [2], "bogus")],
    )
    def test_invalid_input(self, a, b, method):
        with pytest.raises(InputError):
            mann_whitney_u(a, b, method=method)


def run_document(**overrides):
    document = {
        "mode": "hybrid",
        "project_name": "calc",
        "ledger": {
            "generated_tests": 20,
            "non_compiling_tests": 2,
            "non_passing_tests": 3,
            "total_requests": 8,
            "transport_failures": 1,
        },
        "coverage": {
            "lines_covered": 9,
            "lines_total": 12,
            "branches_covered": 6,
            "branches_total": 10,
            "per_container": {
                "a.A": {"lines_covered": 4, "lines_total": 4, "branches_covered": 0, "branches_total": 0},
                "a.B": {"lines_covered": 5, "lines_total": 8, "branches_covered": 6, "branches_total": 10},
            },
        },
        "mutation": {"mutants_killed": 3, "mutants_total": 4},
        "phase_requests": {"class_level": 3, "method_level": 5},
        "aborted_units": ["a.C"],
    }
    document.update(overrides)
    return document


class TestSuiteMetrics:
    """Metrics of one run document."""

    def test_from_run_document(self):
        metrics = SuiteMetrics.from_run(run_document())
        assert metrics.compilation_rate == pytest.approx(0.9)
        assert metrics.passing_rate == pytest.approx(0.75)
        assert metrics.n_passing == 15
        assert metrics.line_cov == pytest.approx(0.75)
        assert metrics.branch_cov == pytest.approx(0.6)
        assert metrics.mutation_score == pytest.approx(0.75)
        assert metrics.aborted_units == ("a.C",)
        assert metrics.container_values("branch") == {"a.B": pytest.approx(0.6)}
        assert metrics.container_values("line") == {"a.A": 1.0, "a.B": pytest.approx(0.625)}

    def test_missing_measurements(self):
        metrics = SuiteMetrics.from_run(run_document(coverage=None, mutation=None))
        assert metrics.line_cov is None
        assert metrics.mutation_score is None
        assert metrics.as_dict()["branch_cov"] is None

    def test_no_tests(self):
        ledger = {"generated_tests": 0, "non_compiling_tests": 0, "non_passing_tests": 0, "total_requests": 2}
        metrics = SuiteMetrics.from_run(run_document(ledger=ledger))
        assert metrics.compilation_rate is None
        assert metrics.as_dict()["passing_rate"] is None

    def test_inconsistent_counts(self):
        with pytest.raises(ValueError):
            SuiteMetrics("p", "class_level", 3, 2, 2, 1)
