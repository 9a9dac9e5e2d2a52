"""Adapter contract over the target build ecosystem.

A toolchain compiles generated test files, runs them with per-test
verdicts, and measures line/branch coverage and mutation score of a
passing suite. Every operation on a workspace holds that workspace's lock,
so one operation is in flight per workspace while distinct workspaces run
in parallel.
"""
from __future__ import annotations

import asyncio
import logging
from abc import ABC, abstractmethod
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from pathlib import PurePosixPath
from typing import Any, AsyncIterator, Optional

from .const import (
    COMBINE_SUFFIX_CLASS,
    COMBINE_SUFFIX_METHOD,
    DIAG_COMPILE_ERROR,
    DIAG_IMPORT_ERROR,
    DIAG_NAME_MISMATCH,
    DIAG_OTHER,
    STATUS_FAILED,
    STATUS_NOT_COMPILED,
    STATUS_PASSED,
)
from .languages import JavaAdapter
from .source_model import ProjectModel

_LOGGER = logging.getLogger(__name__)

DIAGNOSTIC_KINDS = frozenset({DIAG_COMPILE_ERROR, DIAG_NAME_MISMATCH, DIAG_IMPORT_ERROR, DIAG_OTHER})
VERDICT_STATUSES = frozenset({STATUS_PASSED, STATUS_FAILED, STATUS_NOT_COMPILED})


@dataclass(frozen=True)
class SuiteFile:
    """A generated test file, path relative to the test source root."""

    relative_path: str
    source: str

    @property
    def class_name(self) -> str:
        """Return the class name the file name requires."""
        return PurePosixPath(self.relative_path).stem

    @property
    def base_class_name(self) -> str:
        """Return the class name without a combine suffix."""
        return strip_combine_suffix(self.class_name)

    def replace(self, source: str) -> "SuiteFile":
        """Return the same file with new content."""
        return SuiteFile(self.relative_path, source)


def strip_combine_suffix(name: str) -> str:
    """Drop the ``_c``/``_m`` suffix combine adds on collisions."""
    for suffix in (COMBINE_SUFFIX_CLASS, COMBINE_SUFFIX_METHOD):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return name


@dataclass(frozen=True)
class Diagnostic:
    """One compiler complaint, attributed to a member when possible."""

    file: str
    kind: str
    message: str
    span: Optional[tuple[int, int]] = None
    attributed_test: Optional[str] = None

    def __post_init__(self):
        if self.kind not in DIAGNOSTIC_KINDS:
            raise ValueError(f"Unknown diagnostic kind: {self.kind}")
        if self.kind == DIAG_COMPILE_ERROR and not self.file:
            raise ValueError("Compile errors must name a file")

    def render(self) -> str:
        """Return the diagnostic the way compilers print it."""
        location = self.file or "<unknown>"
        if self.span is not None:
            location = f"{location}:[{self.span[0]},{self.span[1]}]"
        return f"{location} {self.kind}: {self.message}"

    def as_dict(self) -> dict[str, Any]:
        return {
            "file": self.file,
            "kind": self.kind,
            "message": self.message,
            "span": list(self.span) if self.span else None,
            "attributed_test": self.attributed_test,
        }


@dataclass(frozen=True)
class TestVerdict:
    """Outcome of one test method."""

    __test__ = False

    file: str
    test_class: str
    test_name: str
    status: str
    failure_message: Optional[str] = None

    def __post_init__(self):
        if self.status not in VERDICT_STATUSES:
            raise ValueError(f"Unknown verdict status: {self.status}")
        if self.status == STATUS_NOT_COMPILED and not self.failure_message:
            raise ValueError("not_compiled verdicts must reference a diagnostic")

    @property
    def test_id(self) -> str:
        """Return ``Class.method``."""
        return f"{self.test_class}.{self.test_name}"

    @property
    def passed(self) -> bool:
        return self.status == STATUS_PASSED

    def as_dict(self) -> dict[str, Any]:
        return {
            "file": self.file,
            "test_id": self.test_id,
            "status": self.status,
            "failure_message": self.failure_message,
        }


@dataclass(frozen=True)
class CoverageCounter:
    """Covered and total counts of one scope."""

    covered: int = 0
    total: int = 0

    def __post_init__(self):
        if self.covered < 0 or self.total < 0 or self.covered > self.total:
            raise ValueError(f"Invalid coverage counter {self.covered}/{self.total}")

    def __add__(self, other: "CoverageCounter") -> "CoverageCounter":
        return CoverageCounter(self.covered + other.covered, self.total + other.total)

    @property
    def complete(self) -> bool:
        return self.covered == self.total

    @property
    def ratio(self) -> Optional[float]:
        return self.covered / self.total if self.total else None


@dataclass(frozen=True)
class ContainerCoverage:
    """Line and branch counters of one container."""

    lines: CoverageCounter = field(default_factory=CoverageCounter)
    branches: CoverageCounter = field(default_factory=CoverageCounter)

    def as_dict(self) -> dict[str, int]:
        return {
            "lines_covered": self.lines.covered,
            "lines_total": self.lines.total,
            "branches_covered": self.branches.covered,
            "branches_total": self.branches.total,
        }

    @classmethod
    def from_dict(cls, data: dict[str, int]) -> "ContainerCoverage":
        return cls(
            CoverageCounter(data["lines_covered"], data["lines_total"]),
            CoverageCounter(data["branches_covered"], data["branches_total"]),
        )


@dataclass(frozen=True)
class CoverageSnapshot:
    """Production-code coverage of a suite.

    Per-method maps are keyed by method unit id and hold ``(covered, total)``.
    """

    lines_total: int = 0
    lines_covered: int = 0
    branches_total: int = 0
    branches_covered: int = 0
    per_method_branches: dict[str, tuple[int, int]] = field(default_factory=dict)
    per_method_lines: dict[str, tuple[int, int]] = field(default_factory=dict)
    per_container: dict[str, ContainerCoverage] = field(default_factory=dict)

    def __post_init__(self):
        CoverageCounter(self.lines_covered, self.lines_total)
        CoverageCounter(self.branches_covered, self.branches_total)
        for covered, total in list(self.per_method_branches.values()) + list(
            self.per_method_lines.values()
        ):
            CoverageCounter(covered, total)
        if sum(total for _, total in self.per_method_branches.values()) > self.branches_total:
            raise ValueError("Per-method branch totals exceed the project total")

    @property
    def lines(self) -> CoverageCounter:
        return CoverageCounter(self.lines_covered, self.lines_total)

    @property
    def branches(self) -> CoverageCounter:
        return CoverageCounter(self.branches_covered, self.branches_total)

    def as_dict(self) -> dict[str, Any]:
        return {
            "lines_total": self.lines_total,
            "lines_covered": self.lines_covered,
            "branches_total": self.branches_total,
            "branches_covered": self.branches_covered,
            "per_method_branches": {k: list(v) for k, v in sorted(self.per_method_branches.items())},
            "per_method_lines": {k: list(v) for k, v in sorted(self.per_method_lines.items())},
            "per_container": {k: v.as_dict() for k, v in sorted(self.per_container.items())},
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "CoverageSnapshot":
        return cls(
            lines_total=data["lines_total"],
            lines_covered=data["lines_covered"],
            branches_total=data["branches_total"],
            branches_covered=data["branches_covered"],
            per_method_branches={k: tuple(v) for k, v in data.get("per_method_branches", {}).items()},
            per_method_lines={k: tuple(v) for k, v in data.get("per_method_lines", {}).items()},
            per_container={
                k: ContainerCoverage.from_dict(v) for k, v in data.get("per_container", {}).items()
            },
        )


@dataclass(frozen=True)
class MutationSnapshot:
    """Killed and total mutants, overall and per container."""

    mutants_total: int = 0
    mutants_killed: int = 0
    per_container: dict[str, tuple[int, int]] = field(default_factory=dict)

    def __post_init__(self):
        CoverageCounter(self.mutants_killed, self.mutants_total)

    @property
    def score(self) -> Optional[float]:
        return self.mutants_killed / self.mutants_total if self.mutants_total else None

    def as_dict(self) -> dict[str, Any]:
        return {
            "mutants_total": self.mutants_total,
            "mutants_killed": self.mutants_killed,
            "per_container": {k: list(v) for k, v in sorted(self.per_container.items())},
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "MutationSnapshot":
        return cls(
            mutants_total=data["mutants_total"],
            mutants_killed=data["mutants_killed"],
            per_container={k: tuple(v) for k, v in data.get("per_container", {}).items()},
        )


@dataclass
class Workspace:
    """An isolated place to build one project plus generated tests."""

    project: ProjectModel
    root: Any
    lock: asyncio.Lock = field(default_factory=asyncio.Lock)


def render_diagnostics(diagnostics: list[Diagnostic]) -> str:
    """Return the text quoted in repair prompts."""
    return "\n".join(diagnostic.render() for diagnostic in diagnostics)


def render_failures(verdicts: list[TestVerdict]) -> str:
    """Return failing tests and their messages for a repair prompt."""
    lines = []
    for verdict in verdicts:
        if verdict.passed:
            continue
        lines.append(f"{verdict.test_id} {verdict.status}: {verdict.failure_message or ''}".rstrip())
    return "\n".join(lines)


class Toolchain(ABC):
    """Compile, run, cover and mutate generated tests of one ecosystem."""

    name = "abstract"

    def __init__(self, adapter: JavaAdapter) -> None:
        self.adapter = adapter

    @asynccontextmanager
    async def workspace(self, project: ProjectModel) -> AsyncIterator[Workspace]:
        """Provide an isolated workspace for the duration of a block."""
        workspace = await self._open_workspace(project)
        try:
            yield workspace
        finally:
            await self._close_workspace(workspace)

    async def _open_workspace(self, project: ProjectModel) -> Workspace:
        return Workspace(project=project, root=project.root_path)

    async def _close_workspace(self, workspace: Workspace) -> None:
        return None

    async def compile(self, workspace: Workspace, test_files: list[SuiteFile]) -> list[Diagnostic]:
        """Compile test files; an empty list means everything compiled."""
        async with workspace.lock:
            diagnostics = await self._compile(workspace, test_files)
        _LOGGER.debug("Compiled %s files: %s diagnostics", len(test_files), len(diagnostics))
        return diagnostics

    async def run_tests(self, workspace: Workspace, test_files: list[SuiteFile]) -> list[TestVerdict]:
        """Run the tests of compiled files, one verdict per test method."""
        if not test_files:
            return []
        async with workspace.lock:
            verdicts = await self._run_tests(workspace, test_files)
        return sorted(verdicts, key=lambda v: (v.file, v.test_class, v.test_name))

    async def coverage(self, workspace: Workspace, passing_suite: list[SuiteFile]) -> CoverageSnapshot:
        """Measure production-code coverage of a passing suite."""
        async with workspace.lock:
            return await self._coverage(workspace, passing_suite)

    async def mutation_score(
        self, workspace: Workspace, passing_suite: list[SuiteFile]
    ) -> MutationSnapshot:
        """Count the mutants a passing suite kills."""
        async with workspace.lock:
            return await self._mutation_score(workspace, passing_suite)

    @abstractmethod
    async def _compile(self, workspace: Workspace, test_files: list[SuiteFile]) -> list[Diagnostic]:
        """Adapter-specific compilation."""

    @abstractmethod
    async def _run_tests(self, workspace: Workspace, test_files: list[SuiteFile]) -> list[TestVerdict]:
        """Adapter-specific test execution."""

    @abstractmethod
    async def _coverage(self, workspace: Workspace, passing_suite: list[SuiteFile]) -> CoverageSnapshot:
        """Adapter-specific coverage measurement."""

    @abstractmethod
    async def _mutation_score(
        self, workspace: Workspace, passing_suite: list[SuiteFile]
    ) -> MutationSnapshot:
        """Adapter-specific mutation analysis."""
