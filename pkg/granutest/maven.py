"""Live toolchain for Maven projects: JUnit 5, JaCoCo and PIT."""
from __future__ import annotations

import asyncio
import logging
import re
import shutil
import tempfile
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import Mapping, Optional

import aiofiles  # type: ignore

from .const import (
    COMPILE_TIMEOUT,
    DIAG_COMPILE_ERROR,
    DIAG_IMPORT_ERROR,
    DIAG_NAME_MISMATCH,
    DIAG_OTHER,
    STATUS_FAILED,
    STATUS_PASSED,
    TEST_TIMEOUT,
    TOOLCHAIN_MAVEN,
)
from .exceptions import (
    CoverageUnavailableError,
    RunnerCrashError,
    ToolchainEnvironmentError,
    ToolchainTimeoutError,
)
from .languages import JavaAdapter
from .sanitizer import MEMBER_TEST, list_members, locate_member
from .source_model import ProjectModel
from .toolchain import (
    ContainerCoverage,
    CoverageCounter,
    CoverageSnapshot,
    Diagnostic,
    MutationSnapshot,
    SuiteFile,
    TestVerdict,
    Toolchain,
    Workspace,
)

_LOGGER = logging.getLogger(__name__)

JACOCO_PLUGIN = "org.jacoco:jacoco-maven-plugin:0.8.12"
PITEST_PLUGIN = "org.pitest:pitest-maven:1.15.8"

_ERROR_LINE = re.compile(r"^\[ERROR\]\s+(?P<path>\S+?\.java):\[(?P<line>\d+),(?P<col>\d+)\]\s*(?P<msg>.*)$")
_PRIMITIVES = {
    "Z": "boolean",
    "B": "byte",
    "C": "char",
    "S": "short",
    "I": "int",
    "J": "long",
    "F": "float",
    "D": "double",
}
_GENERICS = re.compile(r"<[^<>]*>")


def descriptor_parameters(descriptor: str) -> list[str]:
    """Return the simple parameter type names of a JVM method descriptor."""
    params = descriptor[1 : descriptor.index(")")]
    types: list[str] = []
    i = 0
    while i < len(params):
        dims = 0
        while params[i] == "[":
            dims += 1
            i += 1
        if params[i] == "L":
            end = params.index(";", i)
            name = params[i + 1 : end].rsplit("/", 1)[-1].rsplit("$", 1)[-1]
            i = end + 1
        else:
            name = _PRIMITIVES[params[i]]
            i += 1
        types.append(name + "[]" * dims)
    return types


def erase_type(source_type: str, type_variables: Optional[Mapping[str, str]] = None) -> str:
    """Erase generics and qualification from a source parameter type.

    A type variable erases to its first bound, or ``Object`` when unbounded.
    """
    text = source_type
    while _GENERICS.search(text):
        text = _GENERICS.sub("", text)
    text = text.replace("...", "[]").replace(" ", "")
    base, _, dims = text.partition("[")
    base = base.rsplit(".", 1)[-1]
    if type_variables and base in type_variables:
        bound = type_variables[base]
        rest = {k: v for k, v in type_variables.items() if k != base}
        base = erase_type(bound, rest) if bound else "Object"
    return base + ("[" + dims if dims else "")


def _erased_signature(
    signature: str, type_variables: Optional[Mapping[str, str]] = None
) -> tuple[str, tuple[str, ...]]:
    name, _, rest = signature.partition("(")
    params = rest.rstrip(")")
    depth = 0
    parts, current = [], ""
    for char in params:
        if char == "<":
            depth += 1
        elif char == ">":
            depth -= 1
        if char == "," and depth == 0:
            parts.append(current)
            current = ""
        else:
            current += char
    if current.strip():
        parts.append(current)
    return name, tuple(erase_type(p.strip(), type_variables) for p in parts)


class MavenToolchain(Toolchain):
    """Runs ``mvn`` in a temporary copy of the project."""

    name = TOOLCHAIN_MAVEN

    def __init__(
        self,
        adapter: JavaAdapter,
        executable: str = "mvn",
        compile_timeout: float = COMPILE_TIMEOUT,
        test_timeout: float = TEST_TIMEOUT,
        extra_args: Optional[list[str]] = None,
    ) -> None:
        super().__init__(adapter)
        self.executable = executable
        self.compile_timeout = compile_timeout
        self.test_timeout = test_timeout
        self.extra_args = extra_args or []

    async def _open_workspace(self, project: ProjectModel) -> Workspace:
        if shutil.which(self.executable) is None:
            raise ToolchainEnvironmentError(f"Maven executable not found: {self.executable}")
        scratch = Path(tempfile.mkdtemp(prefix="granutest-"))
        root = scratch / project.name
        await asyncio.to_thread(
            shutil.copytree,
            project.root_path,
            root,
            ignore=shutil.ignore_patterns("target", ".git"),
        )
        _LOGGER.debug("Prepared workspace %s", root)
        return Workspace(project=project, root=root)

    async def _close_workspace(self, workspace: Workspace) -> None:
        await asyncio.to_thread(shutil.rmtree, Path(workspace.root).parent, True)

    def _test_root(self, workspace: Workspace) -> Path:
        return Path(workspace.root) / self.adapter.test_source_root

    async def _write_suite(self, workspace: Workspace, test_files: list[SuiteFile]) -> None:
        """Make the test source root hold exactly these files."""
        test_root = self._test_root(workspace)
        if test_root.exists():
            await asyncio.to_thread(shutil.rmtree, test_root)
        for suite_file in test_files:
            target = test_root / suite_file.relative_path
            target.parent.mkdir(parents=True, exist_ok=True)
            async with aiofiles.open(target, mode="w", encoding="utf-8") as f:
                await f.write(suite_file.source)

    async def _mvn(self, workspace: Workspace, args: list[str], timeout: float) -> tuple[int, str]:
        command = [self.executable, "-B", *self.extra_args, *args]
        _LOGGER.debug("Running %s", " ".join(command))
        try:
            process = await asyncio.create_subprocess_exec(
                *command,
                cwd=str(workspace.root),
                stdout=asyncio.subprocess.PIPE,
                stderr=asyncio.subprocess.STDOUT,
            )
        except FileNotFoundError as err:
            raise ToolchainEnvironmentError(f"Cannot run {self.executable}: {err}") from err
        try:
            output, _ = await asyncio.wait_for(process.communicate(), timeout=timeout)
        except asyncio.TimeoutError as err:
            process.kill()
            await process.wait()
            raise ToolchainTimeoutError(f"{' '.join(args)} exceeded {timeout} seconds") from err
        return process.returncode, output.decode("utf-8", errors="replace")

    async def _compile(self, workspace: Workspace, test_files: list[SuiteFile]) -> list[Diagnostic]:
        await self._write_suite(workspace, test_files)
        code, output = await self._mvn(workspace, ["-q", "test-compile"], self.compile_timeout)
        if code == 0:
            return []
        diagnostics = self.parse_compile_output(output, workspace, test_files)
        if not diagnostics:
            diagnostics = [Diagnostic("", DIAG_OTHER, output[-2000:].strip() or "build failed")]
        return diagnostics

    def parse_compile_output(
        self, output: str, workspace: Workspace, test_files: list[SuiteFile]
    ) -> list[Diagnostic]:
        """Turn ``[ERROR] path:[line,col] message`` lines into diagnostics."""
        test_root = self._test_root(workspace).resolve()
        by_path = {f.relative_path: f for f in test_files}
        diagnostics: list[Diagnostic] = []
        seen: set[tuple[str, int, int, str]] = set()
        for raw in output.splitlines():
            match = _ERROR_LINE.match(raw.strip())
            if match is None:
                continue
            path = Path(match["path"])
            try:
                relative = path.resolve().relative_to(test_root).as_posix()
            except ValueError:
                relative = path.as_posix()
            line, col, message = int(match["line"]), int(match["col"]), match["msg"]
            key = (relative, line, col, message)
            if key in seen:
                continue
            seen.add(key)
            suite_file = by_path.get(relative)
            kind = DIAG_COMPILE_ERROR
            attributed = None
            if "should be declared in a file named" in message:
                kind = DIAG_NAME_MISMATCH
            elif suite_file is not None:
                lines = suite_file.source.splitlines()
                source_line = lines[line - 1] if 0 < line <= len(lines) else ""
                if source_line.lstrip().startswith("import "):
                    kind = DIAG_IMPORT_ERROR
                else:
                    member = locate_member(suite_file.source, line, list_members(suite_file.source, self.adapter))
                    if member is not None and member.kind == MEMBER_TEST:
                        attributed = member.name
            diagnostics.append(Diagnostic(relative, kind, message, span=(line, col), attributed_test=attributed))
        return diagnostics

    async def _run_tests(self, workspace: Workspace, test_files: list[SuiteFile]) -> list[TestVerdict]:
        await self._write_suite(workspace, test_files)
        reports = Path(workspace.root) / "target" / "surefire-reports"
        if reports.exists():
            await asyncio.to_thread(shutil.rmtree, reports)
        timeout = self.compile_timeout + self.test_timeout * max(1, len(test_files))
        code, output = await self._mvn(
            workspace,
            [
                "test",
                "-DfailIfNoTests=false",
                "-Dsurefire.failIfNoSpecifiedTests=false",
                f"-Djunit.jupiter.execution.timeout.default={int(self.test_timeout)}s",
            ],
            timeout,
        )
        verdicts = self.parse_surefire_reports(reports, test_files)
        if not verdicts and code != 0:
            raise RunnerCrashError(f"Test run produced no reports: {output[-2000:]}")
        return verdicts

    def parse_surefire_reports(self, reports: Path, test_files: list[SuiteFile]) -> list[TestVerdict]:
        """Collapse Surefire ``TEST-*.xml`` testcases into one verdict per method."""
        by_class: dict[str, SuiteFile] = {}
        for suite_file in test_files:
            package = ".".join(Path(suite_file.relative_path).parent.parts)
            qualified = f"{package}.{suite_file.class_name}" if package else suite_file.class_name
            by_class[qualified] = suite_file
        outcomes: dict[tuple[str, str], list[Optional[str]]] = {}
        for report in sorted(reports.glob("TEST-*.xml")) if reports.exists() else []:
            try:
                root = ET.parse(report).getroot()
            except ET.ParseError as err:
                raise RunnerCrashError(f"Corrupt Surefire report {report.name}: {err}") from err
            for case in root.iter("testcase"):
                classname = (case.get("classname") or "").split("$", 1)[0]
                suite_file = by_class.get(classname)
                if suite_file is None:
                    continue
                name = re.split(r"[(\[{]", case.get("name") or "", maxsplit=1)[0].strip()
                problem = next(
                    (child for child in case if child.tag in ("failure", "error", "skipped")), None
                )
                message = None
                if problem is not None:
                    message = problem.get("message") or problem.tag
                outcomes.setdefault((suite_file.relative_path, name), []).append(message)

        verdicts = []
        for suite_file in test_files:
            for member in list_members(suite_file.source, self.adapter):
                if member.kind != MEMBER_TEST:
                    continue
                results = outcomes.get((suite_file.relative_path, member.name))
                if not results:
                    continue
                failures = [m for m in results if m is not None]
                status = STATUS_FAILED if failures else STATUS_PASSED
                verdicts.append(
                    TestVerdict(
                        suite_file.relative_path,
                        suite_file.base_class_name,
                        member.name,
                        status,
                        failures[0] if failures else None,
                    )
                )
        return verdicts

    async def _coverage(self, workspace: Workspace, passing_suite: list[SuiteFile]) -> CoverageSnapshot:
        await self._write_suite(workspace, passing_suite)
        target = Path(workspace.root) / "target"
        exec_file = target / "jacoco.exec"
        report = target / "site" / "jacoco" / "jacoco.xml"
        exec_file.unlink(missing_ok=True)
        report.unlink(missing_ok=True)
        code, output = 0, ""
        if passing_suite:
            code, output = await self._mvn(
                workspace,
                [f"{JACOCO_PLUGIN}:prepare-agent", "test", f"{JACOCO_PLUGIN}:report", "-Dmaven.test.failure.ignore=true"],
                self.compile_timeout + self.test_timeout * max(1, len(passing_suite)),
            )
        if not passing_suite or (code == 0 and not exec_file.exists()):
            # jacoco:report skips without execution data; an empty file reports everything missed.
            _LOGGER.debug("No execution data, reporting %s with zero coverage", workspace.project.name)
            exec_file.parent.mkdir(parents=True, exist_ok=True)
            async with aiofiles.open(exec_file, mode="wb") as f:
                await f.write(b"")
            code, output = await self._mvn(workspace, ["compile", f"{JACOCO_PLUGIN}:report"], self.compile_timeout)
        if code != 0 or not report.exists():
            raise CoverageUnavailableError(f"JaCoCo report missing: {output[-2000:]}")
        return self.parse_jacoco(report, workspace.project)

    def parse_jacoco(self, report: Path, project: ProjectModel) -> CoverageSnapshot:
        """Read JaCoCo XML, mapping JVM methods onto the project's units."""
        try:
            root = ET.parse(report).getroot()
        except ET.ParseError as err:
            raise CoverageUnavailableError(f"Corrupt JaCoCo report: {err}") from err

        units: dict[tuple[str, str, tuple[str, ...]], str] = {}
        for container in project.containers:
            for unit in container.methods + container.constructors:
                name, params = _erased_signature(unit.signature, dict(unit.type_variables))
                if unit in container.constructors:
                    name = "<init>"
                units[(container.id, name, params)] = unit.unit_id

        per_method_lines: dict[str, tuple[int, int]] = {}
        per_method_branches: dict[str, tuple[int, int]] = {}
        per_container: dict[str, ContainerCoverage] = {}
        totals = {"LINE": CoverageCounter(), "BRANCH": CoverageCounter()}
        known = {c.id for c in project.containers}
        for cls in root.iter("class"):
            jvm_name = (cls.get("name") or "").replace("/", ".")
            container_id = _owning_container(jvm_name, known)
            if container_id is None:
                continue
            counters = _counters(cls)
            current = per_container.get(container_id, ContainerCoverage())
            per_container[container_id] = ContainerCoverage(
                current.lines + counters["LINE"], current.branches + counters["BRANCH"]
            )
            totals["LINE"] += counters["LINE"]
            totals["BRANCH"] += counters["BRANCH"]
            if container_id != jvm_name.replace("$", "."):
                continue
            for method in cls.findall("method"):
                params = tuple(descriptor_parameters(method.get("desc") or "()V"))
                unit_id = units.get((container_id, method.get("name") or "", params))
                if unit_id is None:
                    continue
                counters = _counters(method)
                per_method_lines[unit_id] = (counters["LINE"].covered, counters["LINE"].total)
                per_method_branches[unit_id] = (counters["BRANCH"].covered, counters["BRANCH"].total)
        return CoverageSnapshot(
            lines_total=totals["LINE"].total,
            lines_covered=totals["LINE"].covered,
            branches_total=totals["BRANCH"].total,
            branches_covered=totals["BRANCH"].covered,
            per_method_branches=per_method_branches,
            per_method_lines=per_method_lines,
            per_container=per_container,
        )

    async def _mutation_score(
        self, workspace: Workspace, passing_suite: list[SuiteFile]
    ) -> MutationSnapshot:
        await self._write_suite(workspace, passing_suite)
        targets = ",".join(sorted(c.qualified_name for c in workspace.project.containers))
        code, output = await self._mvn(
            workspace,
            [
                "test-compile",
                f"{PITEST_PLUGIN}:mutationCoverage",
                "-DoutputFormats=XML",
                "-DtimestampedReports=false",
                f"-DtargetClasses={targets}",
            ],
            self.compile_timeout * 4,
        )
        report = Path(workspace.root) / "target" / "pit-reports" / "mutations.xml"
        if not report.exists():
            raise CoverageUnavailableError(f"PIT report missing (exit {code}): {output[-2000:]}")
        return self.parse_pit(report)

    @staticmethod
    def parse_pit(report: Path) -> MutationSnapshot:
        """Count ``detected="true"`` mutations per mutated class."""
        try:
            root = ET.parse(report).getroot()
        except ET.ParseError as err:
            raise CoverageUnavailableError(f"Corrupt PIT report: {err}") from err
        per_container: dict[str, tuple[int, int]] = {}
        for mutation in root.iter("mutation"):
            mutated = mutation.findtext("mutatedClass", default="").replace("$", ".")
            killed, total = per_container.get(mutated, (0, 0))
            detected = mutation.get("detected") == "true"
            per_container[mutated] = (killed + detected, total + 1)
        return MutationSnapshot(
            mutants_total=sum(t for _, t in per_container.values()),
            mutants_killed=sum(k for k, _ in per_container.values()),
            per_container=per_container,
        )


def _counters(element) -> dict[str, CoverageCounter]:
    counters = {"LINE": CoverageCounter(), "BRANCH": CoverageCounter()}
    for counter in element.findall("counter"):
        kind = counter.get("type")
        if kind in counters:
            covered = int(counter.get("covered", 0))
            missed = int(counter.get("missed", 0))
            counters[kind] = CoverageCounter(covered, covered + missed)
    return counters


def _owning_container(jvm_name: str, known: set[str]) -> Optional[str]:
    """Map a JVM class name onto a discovered container.

    Anonymous and local classes (``Outer$1``, ``Outer$1Local``) fold into the
    nearest enclosing container.
    """
    parts = jvm_name.split("$")
    while parts:
        candidate = ".".join(parts)
        if candidate in known:
            return candidate
        parts.pop()
    return None
