"""Cross-mode report tables in JSON, Markdown and CSV."""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
from pathlib import Path
from typing import Any, Iterable, Optional

import aiofiles  # type: ignore
from tabulate import tabulate  # type: ignore

from .const import (
    FILE_REPORT_CSV,
    FILE_REPORT_JSON,
    FILE_REPORT_MD,
    MODES,
    SIGNIFICANCE_UNIT_CLASS,
    SIGNIFICANCE_UNIT_PROJECT,
)
from .exceptions import InputError
from .metrics import SuiteMetrics, aggregate, format_percent, mann_whitney_u

_LOGGER = logging.getLogger(__name__)

TOTAL = "Total"
COVERAGE_METRICS = ("line", "branch", "mutation")
CSV_FIELDS = ("project", "mode", "metric", "value")


def _mode_order(metrics: Iterable[SuiteMetrics]) -> list[str]:
    present = {m.mode for m in metrics}
    return [mode for mode in MODES if mode in present] + sorted(present - set(MODES))


def _counter(metric: SuiteMetrics, name: str):
    return {"line": metric.lines, "branch": metric.branches, "mutation": metric.mutants}[name]


def _available(metric: SuiteMetrics, name: str) -> bool:
    return metric.mutation_available if name == "mutation" else metric.coverage_available


def effectiveness_rows(metrics: list[SuiteMetrics]) -> list[dict[str, Any]]:
    """Line, branch and mutation figures per project and mode, plus pooled totals."""
    rows = []
    for metric in sorted(metrics, key=lambda m: (m.project, m.mode)):
        rows.append(
            {
                "project": metric.project,
                "mode": metric.mode,
                "line": metric.line_cov,
                "branch": metric.branch_cov,
                "mutation": metric.mutation_score,
                "fallback": metric.coverage_fallback,
            }
        )
    for mode in _mode_order(metrics):
        row: dict[str, Any] = {"project": TOTAL, "mode": mode, "fallback": False}
        for name in COVERAGE_METRICS:
            counters = [_counter(m, name) for m in metrics if m.mode == mode and _available(m, name)]
            if counters:
                result = aggregate(counters)
                row[name] = result.pooled
                row[f"{name}_mean"] = result.mean_of_ratios
            else:
                row[name] = None
                row[f"{name}_mean"] = None
        rows.append(row)
    return rows


def rate_rows(metrics: list[SuiteMetrics]) -> list[dict[str, Any]]:
    """Test counts and compilation/passing rates per project and mode."""
    rows = []
    groups = [(m.project, m.mode, [m]) for m in sorted(metrics, key=lambda m: (m.project, m.mode))]
    groups += [(TOTAL, mode, [m for m in metrics if m.mode == mode]) for mode in _mode_order(metrics)]
    for project, mode, members in groups:
        pooled = SuiteMetrics(
            project=project,
            mode=mode,
            n_generated=sum(m.n_generated for m in members),
            n_non_compiling=sum(m.n_non_compiling for m in members),
            n_non_passing=sum(m.n_non_passing for m in members),
            total_requests=sum(m.total_requests for m in members),
        )
        rows.append(
            {
                "project": project,
                "mode": mode,
                "generated": pooled.n_generated,
                "non_compiling": pooled.n_non_compiling,
                "non_passing": pooled.n_non_passing,
                "passing": pooled.n_passing,
                "compilation_rate": pooled.compilation_rate,
                "passing_rate": pooled.passing_rate,
            }
        )
    return rows


def request_rows(metrics: list[SuiteMetrics]) -> list[dict[str, Any]]:
    """Requests per project and mode with the hybrid split and its savings."""
    by_key = {(m.project, m.mode): m for m in metrics}
    rows = []
    for metric in sorted(metrics, key=lambda m: (m.project, m.mode)):
        combined = by_key.get((metric.project, "combined"))
        savings = None
        if metric.mode == "hybrid" and combined is not None and combined.total_requests:
            savings = 1 - metric.total_requests / combined.total_requests
        rows.append(
            {
                "project": metric.project,
                "mode": metric.mode,
                "requests": metric.total_requests,
                "phases": ", ".join(f"{k}={v}" for k, v in sorted(metric.phase_requests.items())),
                "transport_failures": metric.transport_failures,
                "aborted_units": len(metric.aborted_units),
                "savings_vs_combined": savings,
            }
        )
    totals = {mode: sum(m.total_requests for m in metrics if m.mode == mode) for mode in _mode_order(metrics)}
    for mode, total in totals.items():
        savings = None
        if mode == "hybrid" and totals.get("combined"):
            savings = 1 - total / totals["combined"]
        rows.append(
            {
                "project": TOTAL,
                "mode": mode,
                "requests": total,
                "phases": "",
                "transport_failures": sum(m.transport_failures for m in metrics if m.mode == mode),
                "aborted_units": sum(len(m.aborted_units) for m in metrics if m.mode == mode),
                "savings_vs_combined": savings,
            }
        )
    return rows


def extra_content_rows(metrics: list[SuiteMetrics]) -> list[dict[str, Any]]:
    """Helper classes, interfaces and look-alikes per mode."""
    rows = []
    for mode in _mode_order(metrics):
        totals: dict[str, int] = {}
        for metric in metrics:
            if metric.mode != mode:
                continue
            for key, value in metric.extra_content.items():
                totals[key] = totals.get(key, 0) + value
        files_total = totals.get("files_total", 0)
        rows.append(
            {
                "mode": mode,
                "additional_classes": totals.get("additional_classes", 0),
                "additional_interfaces": totals.get("additional_interfaces", 0),
                "overriding_classes": totals.get("overriding_classes", 0),
                "empty_placeholder_classes": totals.get("empty_placeholder_classes", 0),
                "files_with_extra": totals.get("files_with_extra", 0),
                "files_total": files_total,
                "share_with_extra": totals.get("files_with_extra", 0) / files_total if files_total else None,
            }
        )
    return rows


def _samples(metrics: list[SuiteMetrics], mode: str, name: str, unit: str) -> list[float]:
    values: list[float] = []
    for metric in sorted(metrics, key=lambda m: m.project):
        if metric.mode != mode or not _available(metric, name):
            continue
        if unit == SIGNIFICANCE_UNIT_CLASS and name != "mutation":
            per_class = metric.container_values(name)
            values.extend(per_class[k] for k in sorted(per_class))
        else:
            ratio = _counter(metric, name).ratio
            if ratio is not None:
                values.append(ratio)
    return values


def significance_rows(
    metrics: list[SuiteMetrics], unit: str = SIGNIFICANCE_UNIT_PROJECT
) -> list[dict[str, Any]]:
    """Pairwise Mann-Whitney U tests between modes for every coverage metric."""
    if unit not in (SIGNIFICANCE_UNIT_PROJECT, SIGNIFICANCE_UNIT_CLASS):
        raise InputError(f"Unknown significance unit: {unit}")
    rows = []
    for mode_a, mode_b in itertools.combinations(_mode_order(metrics), 2):
        for name in COVERAGE_METRICS:
            sample_a = _samples(metrics, mode_a, name, unit)
            sample_b = _samples(metrics, mode_b, name, unit)
            row: dict[str, Any] = {
                "mode_a": mode_a,
                "mode_b": mode_b,
                "metric": name,
                "unit": unit,
                "n_a": len(sample_a),
                "n_b": len(sample_b),
                "u_statistic": None,
                "p_value": None,
                "significant": None,
            }
            if sample_a and sample_b:
                row.update(mann_whitney_u(sample_a, sample_b).as_dict())
            rows.append(row)
    return rows


def _fmt_number(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.4g}"


def _fmt_significant(value: Optional[bool]) -> str:
    return "n/a" if value is None else ("yes" if value else "no")


def render_markdown(document: dict[str, Any]) -> str:
    """Render the report document as Markdown tables."""
    sections = []
    sections.append(
        (
            "Effectiveness",
            ["Project", "Mode", "Line", "Branch", "Mutation", "Fallback"],
            [
                [
                    r["project"],
                    r["mode"],
                    format_percent(r["line"]),
                    format_percent(r["branch"]),
                    format_percent(r["mutation"]),
                    "yes" if r["fallback"] else "",
                ]
                for r in document["effectiveness"]
            ],
        )
    )
    sections.append(
        (
            "Compilation and passing rates",
            ["Project", "Mode", "Generated", "Non-compiling", "Non-passing", "Compilation", "Passing"],
            [
                [
                    r["project"],
                    r["mode"],
                    r["generated"],
                    r["non_compiling"],
                    r["non_passing"],
                    f"{format_percent(r['compilation_rate'])} ({r['generated'] - r['non_compiling']}/{r['generated']})",
                    f"{format_percent(r['passing_rate'])} ({r['passing']}/{r['generated']})",
                ]
                for r in document["rates"]
            ],
        )
    )
    sections.append(
        (
            "Requests",
            ["Project", "Mode", "Requests", "Phases", "Transport failures", "Aborted units", "Savings vs combined"],
            [
                [
                    r["project"],
                    r["mode"],
                    r["requests"],
                    r["phases"],
                    r["transport_failures"],
                    r["aborted_units"],
                    format_percent(r["savings_vs_combined"]),
                ]
                for r in document["requests"]
            ],
        )
    )
    sections.append(
        (
            "Extra content",
            ["Mode", "Additional", "Interfaces", "Overriding", "Empty placeholders", "Files with extra"],
            [
                [
                    r["mode"],
                    r["additional_classes"],
                    r["additional_interfaces"],
                    r["overriding_classes"],
                    r["empty_placeholder_classes"],
                    f"{format_percent(r['share_with_extra'])} ({r['files_with_extra']}/{r['files_total']})",
                ]
                for r in document["extra_content"]
            ],
        )
    )
    sections.append(
        (
            "Significance (Mann-Whitney U, two-sided)",
            ["Mode A", "Mode B", "Metric", "Unit", "n", "U", "p", "Significant"],
            [
                [
                    r["mode_a"],
                    r["mode_b"],
                    r["metric"],
                    r["unit"],
                    f"{r['n_a']}/{r['n_b']}",
                    _fmt_number(r["u_statistic"]),
                    _fmt_number(r["p_value"]),
                    _fmt_significant(r["significant"]),
                ]
                for r in document["significance"]
            ],
        )
    )
    parts = ["# granutest report", ""]
    for title, headers, rows in sections:
        parts += [f"## {title}", "", tabulate(rows, headers=headers, tablefmt="github"), ""]
    return "\n".join(parts)


def render_csv(metrics: list[SuiteMetrics]) -> str:
    """One row per project, mode and metric."""
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for metric in sorted(metrics, key=lambda m: (m.project, m.mode)):
        values = {
            "line_coverage": metric.line_cov,
            "branch_coverage": metric.branch_cov,
            "mutation_score": metric.mutation_score,
            "compilation_rate": metric.compilation_rate,
            "passing_rate": metric.passing_rate,
            "generated_tests": metric.n_generated,
            "total_requests": metric.total_requests,
        }
        for name, value in values.items():
            writer.writerow(
                {
                    "project": metric.project,
                    "mode": metric.mode,
                    "metric": name,
                    "value": "n/a" if value is None else value,
                }
            )
    return buffer.getvalue()


def build_report(
    metrics: list[SuiteMetrics], significance_unit: str = SIGNIFICANCE_UNIT_PROJECT
) -> dict[str, Any]:
    """Assemble the machine-readable report document."""
    if not metrics:
        raise InputError("A report needs at least one completed run")
    return {
        "runs": [m.as_dict() for m in sorted(metrics, key=lambda m: (m.project, m.mode))],
        "modes": _mode_order(metrics),
        "effectiveness": effectiveness_rows(metrics),
        "rates": rate_rows(metrics),
        "requests": request_rows(metrics),
        "extra_content": extra_content_rows(metrics),
        "significance": significance_rows(metrics, significance_unit),
    }


async def emit_report(
    metrics: list[SuiteMetrics],
    out_dir: Path,
    significance_unit: str = SIGNIFICANCE_UNIT_PROJECT,
) -> dict[str, Path]:
    """Write ``report.json``, ``report.md`` and ``report.csv`` into ``out_dir``."""
    document = build_report(metrics, significance_unit)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    contents = {
        FILE_REPORT_JSON: json.dumps(document, indent=2, sort_keys=True) + "\n",
        FILE_REPORT_MD: render_markdown(document),
        FILE_REPORT_CSV: render_csv(metrics),
    }
    paths = {}
    for name, content in contents.items():
        path = out_dir / name
        async with aiofiles.open(path, mode="w", encoding="utf-8") as f:
            await f.write(content)
        paths[name] = path
    _LOGGER.info("Wrote report over %s runs to %s", len(metrics), out_dir)
    return paths
