"""Tests for the cross-mode report."""
import csv
import io
import json

import pytest

from granutest.exceptions import InputError
from granutest.metrics import SuiteMetrics
from granutest.report import (
    TOTAL,
    build_report,
    effectiveness_rows,
    emit_report,
    extra_content_rows,
    rate_rows,
    render_csv,
    request_rows,
    significance_rows,
)
from granutest.toolchain import CoverageCounter


def metrics(project, mode, lines, branches, requests, tests=(10, 1, 2), **kwargs):
    return SuiteMetrics(
        project=project,
        mode=mode,
        n_generated=tests[0],
        n_non_compiling=tests[1],
        n_non_passing=tests[2],
        total_requests=requests,
        lines=CoverageCounter(*lines),
        branches=CoverageCounter(*branches),
        mutants=CoverageCounter(1, 2),
        **kwargs,
    )


@pytest.fixture
def corpus():
    return [
        metrics("alpha", "combined", (5, 10), (2, 4), 40),
        metrics("beta", "combined", (15, 20), (3, 6), 60),
        metrics(
            "alpha",
            "hybrid",
            (6, 10),
            (3, 4),
            30,
            phase_requests={"class_level": 10, "method_level": 20},
            extra_content={"additional_classes": 2, "files_with_extra": 1, "files_total": 4},
        ),
        metrics(
            "beta",
            "hybrid",
            (14, 20),
            (3, 6),
            50,
            aborted_units=("b.X",),
            extra_content={"additional_interfaces": 1, "files_with_extra": 1, "files_total": 6},
        ),
    ]


def test_effectiveness_pools_totals(corpus):
    rows = effectiveness_rows(corpus)
    total = next(r for r in rows if r["project"] == TOTAL and r["mode"] == "combined")
    assert total["line"] == pytest.approx(20 / 30)
    assert total["line_mean"] == pytest.approx(0.625)
    assert [r["mode"] for r in rows if r["project"] == TOTAL] == ["combined", "hybrid"]


def test_rates_pool_counts(corpus):
    total = next(r for r in rate_rows(corpus) if r["project"] == TOTAL and r["mode"] == "hybrid")
    assert (total["generated"], total["non_compiling"], total["non_passing"], total["passing"]) == (20, 2, 4, 14)
    assert total["compilation_rate"] == pytest.approx(0.9)
    assert total["passing_rate"] == pytest.approx(0.7)


def test_requests_and_savings(corpus):
    rows = request_rows(corpus)
    alpha = next(r for r in rows if r["project"] == "alpha" and r["mode"] == "hybrid")
    assert alpha["savings_vs_combined"] == pytest.approx(0.25)
    assert alpha["phases"] == "class_level=10, method_level=20"
    total = next(r for r in rows if r["project"] == TOTAL and r["mode"] == "hybrid")
    assert total["requests"] == 80
    assert total["savings_vs_combined"] == pytest.approx(0.2)
    assert total["aborted_units"] == 1


def test_extra_content(corpus):
    hybrid = next(r for r in extra_content_rows(corpus) if r["mode"] == "hybrid")
    assert hybrid["additional_classes"] == 2
    assert hybrid["additional_interfaces"] == 1
    assert hybrid["share_with_extra"] == pytest.approx(0.2)
    combined = next(r for r in extra_content_rows(corpus) if r["mode"] == "combined")
    assert combined["share_with_extra"] is None


def test_significance_per_project(corpus):
    rows = significance_rows(corpus)
    assert [(r["mode_a"], r["mode_b"], r["metric"]) for r in rows] == [
        ("combined", "hybrid", "line"),
        ("combined", "hybrid", "branch"),
        ("combined", "hybrid", "mutation"),
    ]
    assert rows[0]["n_a"] == rows[0]["n_b"] == 2
    assert rows[0]["significant"] is False


def test_significance_per_class():
    per_container = {
        f"a.C{i}": {"lines_covered": i, "lines_total": 10, "branches_covered": 0, "branches_total": 0}
        for i in range(1, 5)
    }
    runs = [
        metrics("alpha", "class_level", (10, 40), (0, 0), 5, per_container=per_container),
        metrics("alpha", "method_level", (20, 40), (0, 0), 9, per_container=per_container),
    ]
    [line, branch, _] = significance_rows(runs, "class")
    assert (line["n_a"], line["n_b"]) == (4, 4)
    assert line["p_value"] == 1.0
    assert branch["n_a"] == 0 and branch["p_value"] is None


def test_unknown_significance_unit(corpus):
    with pytest.raises(InputError):
        significance_rows(corpus, "file")


def test_empty_report():
    with pytest.raises(InputError):
        build_report([])


def test_csv_rows(corpus):
    rows = list(csv.DictReader(io.StringIO(render_csv(corpus))))
    assert len(rows) == 4 * 7
    assert rows[0] == {"project": "alpha", "mode": "combined", "metric": "line_coverage", "value": "0.5"}


async def test_emit_report(corpus, tmp_path):
    paths = await emit_report(corpus, tmp_path / "report")
    assert sorted(paths) == ["report.csv", "report.json", "report.md"]
    document = json.loads(paths["report.json"].read_text())
    assert document["modes"] == ["combined", "hybrid"]
    markdown = paths["report.md"].read_text()
    assert "## Significance (Mann-Whitney U, two-sided)" in markdown
    assert "66.67%" in markdown
    assert "90.00% (18/20)" in markdown
