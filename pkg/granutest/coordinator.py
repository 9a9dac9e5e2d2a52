"""Coordinator running the four generation strategies."""
from __future__ import annotations

import asyncio
import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Optional

import aiofiles  # type: ignore

from .api import ChatGateway, ChatSession, extract_code_blocks
from .const import (
    COMBINE_SUFFIX_CLASS,
    COMBINE_SUFFIX_METHOD,
    CONSTRUCTOR_SENTINEL,
    DEFAULT_PRUNE_ROUNDS,
    DEFAULT_REPAIR_LIMIT,
    DEFAULT_TEMPERATURE,
    DEFAULT_WORKERS,
    DIR_TESTS,
    DIR_UNITS,
    FILE_SANITIZER_REPORT,
    FILE_UNITS,
    MODE_CLASS_LEVEL,
    MODE_COMBINED,
    MODE_HYBRID,
    MODE_METHOD_LEVEL,
    SESSION_CLASS,
    SESSION_CONSTRUCTOR,
    SESSION_METHOD,
)
from .exceptions import (
    BackendError,
    BackendUnavailableError,
    CoverageUnavailableError,
    InputError,
    ReplayDesyncError,
    RunnerCrashError,
    ToolchainTimeoutError,
    UnfixableSourceError,
)
from .languages import declared_name
from .prompts import (
    DEFAULT_TEMPLATES,
    PromptTemplateSet,
    build_class_prompt,
    build_method_prompt,
    build_repair_prompt,
    required_test_class_name,
)
from .sanitizer import (
    ExtraContentStats,
    TestSuiteArtifact,
    align_identity,
    classify_failures,
    count_tests,
    declared_test_names,
    finalize,
    primary_type,
    prune_non_compiling,
    rename_type,
)
from .source_model import ContainerUnit, MethodUnit, ProjectModel
from .toolchain import (
    CoverageSnapshot,
    MutationSnapshot,
    SuiteFile,
    Toolchain,
    Workspace,
    render_diagnostics,
    render_failures,
)

_LOGGER = logging.getLogger(__name__)

TRUNCATED_REPLY = "The response was cut off before the code was complete."
NO_TEST_CLASS = "The response did not contain a test class."


class GranularityMode(str, Enum):
    """How much code one prompt asks tests for."""

    CLASS_LEVEL = MODE_CLASS_LEVEL
    METHOD_LEVEL = MODE_METHOD_LEVEL
    COMBINED = MODE_COMBINED
    HYBRID = MODE_HYBRID


@dataclass(frozen=True)
class GenerationUnit:
    """One prompt target: a class, a method or a constructor pass."""

    unit_id: str
    session_id: str
    container: ContainerUnit
    test_class_name: str
    method: Optional[MethodUnit] = None
    constructor_pass: bool = False

    def prompt(self, templates: PromptTemplateSet) -> str:
        if self.constructor_pass:
            return build_method_prompt(self.container, CONSTRUCTOR_SENTINEL, self.test_class_name, templates)
        if self.method is not None:
            return build_method_prompt(self.container, self.method.name, self.test_class_name, templates)
        return build_class_prompt(self.container, templates)


@dataclass
class RunLedger:
    """Requests and test counts of a run."""

    requests_per_unit: dict[str, int] = field(default_factory=dict)
    generated_tests: int = 0
    passing_tests: int = 0
    non_compiling_tests: int = 0
    non_passing_tests: int = 0
    transport_failures: int = 0
    truncated_units: int = 0

    @property
    def total_requests(self) -> int:
        return sum(self.requests_per_unit.values())

    def record(self, artifact: TestSuiteArtifact) -> None:
        """Account for one finished unit."""
        self.requests_per_unit[artifact.unit_id] = (
            self.requests_per_unit.get(artifact.unit_id, 0) + artifact.requests
        )
        self.transport_failures += artifact.transport_failures
        self.truncated_units += int(artifact.truncated and not artifact.aborted)
        if artifact.aborted:
            return
        n_generated, n_non_compiling, n_non_passing = classify_failures(artifact.per_test_verdicts)
        self.generated_tests += n_generated
        self.non_compiling_tests += n_non_compiling
        self.non_passing_tests += n_non_passing
        self.passing_tests += n_generated - n_non_compiling - n_non_passing

    def merge(self, other: "RunLedger") -> "RunLedger":
        requests = dict(self.requests_per_unit)
        for unit_id, count in other.requests_per_unit.items():
            requests[unit_id] = requests.get(unit_id, 0) + count
        return RunLedger(
            requests_per_unit=requests,
            generated_tests=self.generated_tests + other.generated_tests,
            passing_tests=self.passing_tests + other.passing_tests,
            non_compiling_tests=self.non_compiling_tests + other.non_compiling_tests,
            non_passing_tests=self.non_passing_tests + other.non_passing_tests,
            transport_failures=self.transport_failures + other.transport_failures,
            truncated_units=self.truncated_units + other.truncated_units,
        )

    def as_dict(self) -> dict[str, Any]:
        return {
            "requests_per_unit": dict(sorted(self.requests_per_unit.items())),
            "total_requests": self.total_requests,
            "generated_tests": self.generated_tests,
            "passing_tests": self.passing_tests,
            "non_compiling_tests": self.non_compiling_tests,
            "non_passing_tests": self.non_passing_tests,
            "transport_failures": self.transport_failures,
            "truncated_units": self.truncated_units,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunLedger":
        return cls(
            requests_per_unit=dict(data["requests_per_unit"]),
            generated_tests=data["generated_tests"],
            passing_tests=data["passing_tests"],
            non_compiling_tests=data["non_compiling_tests"],
            non_passing_tests=data["non_passing_tests"],
            transport_failures=data.get("transport_failures", 0),
            truncated_units=data.get("truncated_units", 0),
        )


@dataclass
class GenerationRun:
    """Everything one strategy produced for one project."""

    mode: GranularityMode
    project_name: str
    project_fingerprint: str
    per_unit_artifacts: dict[str, TestSuiteArtifact] = field(default_factory=dict)
    ledger: RunLedger = field(default_factory=RunLedger)
    suite: list[SuiteFile] = field(default_factory=list)
    coverage: Optional[CoverageSnapshot] = None
    mutation: Optional[MutationSnapshot] = None
    coverage_fallback: bool = False
    phase_requests: dict[str, int] = field(default_factory=dict)

    @property
    def aborted_units(self) -> list[str]:
        return sorted(u for u, a in self.per_unit_artifacts.items() if a.aborted)

    def add(self, artifact: TestSuiteArtifact) -> None:
        self.per_unit_artifacts[artifact.unit_id] = artifact
        self.ledger.record(artifact)

    def extra_content(self) -> ExtraContentStats:
        """Return the extra-content counts summed over units."""
        total = ExtraContentStats()
        for artifact in self.per_unit_artifacts.values():
            total = total + artifact.extra_content
        return total

    def as_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode.value,
            "project_name": self.project_name,
            "project_fingerprint": self.project_fingerprint,
            "ledger": self.ledger.as_dict(),
            "coverage": self.coverage.as_dict() if self.coverage else None,
            "mutation": self.mutation.as_dict() if self.mutation else None,
            "coverage_fallback": self.coverage_fallback,
            "phase_requests": dict(sorted(self.phase_requests.items())),
            "aborted_units": self.aborted_units,
            "extra_content": self.extra_content().as_dict(),
            "suite": sorted(f.relative_path for f in self.suite),
        }


def safe_unit_id(unit_id: str) -> str:
    """Return a file-system safe directory name for a unit."""
    return re.sub(r"[^A-Za-z0-9._-]", "_", unit_id)


def _package_path(package: str, class_name: str, suffix: str) -> str:
    parts = package.split(".") if package else []
    return "/".join(parts + [f"{class_name}{suffix}"])


def merge_suites(groups: Iterable[tuple[str, list[SuiteFile]]]) -> list[SuiteFile]:
    """Union test files, renaming colliding classes with their group's suffix.

    Files with the same path and content are kept once. When contents
    differ, the later group's class is renamed in every file of that group.
    """
    merged: dict[str, SuiteFile] = {}
    for suffix, files in groups:
        files = list(files)
        renamed = True
        while renamed:
            renamed = False
            for suite_file in files:
                existing = merged.get(suite_file.relative_path)
                if existing is None or existing.source == suite_file.source:
                    continue
                old = suite_file.class_name
                new = f"{old}{suffix}"
                while any(f.class_name == new for f in list(merged.values()) + files):
                    new = f"{new}{suffix}"
                _LOGGER.debug("Renaming colliding %s to %s", old, new)
                stem_path = suite_file.relative_path[: -len(old) - len(Path(suite_file.relative_path).suffix)]
                files = [
                    SuiteFile(
                        f"{stem_path}{new}{Path(f.relative_path).suffix}" if f is suite_file else f.relative_path,
                        rename_type(f.source, old, new),
                    )
                    for f in files
                ]
                renamed = True
                break
        for suite_file in files:
            merged.setdefault(suite_file.relative_path, suite_file)
    return [merged[path] for path in sorted(merged)]


def select_hybrid_targets(
    project: ProjectModel, coverage: Optional[CoverageSnapshot]
) -> tuple[list[MethodUnit], list[ContainerUnit]]:
    """Return the methods and constructor passes phase two must target.

    A method is done when all its branches are covered; a method without
    branches is done when all its lines are. Methods the snapshot does not
    know are targeted. Without a snapshot everything is targeted.
    """
    if coverage is None:
        methods = [m for c in project.containers for m in c.methods]
        return methods, [c for c in project.containers if c.has_constructor]

    def uncovered(unit: MethodUnit) -> bool:
        branches = coverage.per_method_branches.get(unit.unit_id)
        if branches is None:
            return True
        covered, total = branches
        if total > 0:
            return covered < total
        lines = coverage.per_method_lines.get(unit.unit_id)
        return lines is None or lines[0] < lines[1]

    methods = [m for c in project.containers for m in c.methods if uncovered(m)]
    constructors = [
        c for c in project.containers if c.has_constructor and any(uncovered(k) for k in c.constructors)
    ]
    return methods, constructors


class GenerationCoordinator:
    """Drives generation units through the gateway and the toolchain."""

    def __init__(
        self,
        project: ProjectModel,
        toolchain: Toolchain,
        gateway: ChatGateway,
        templates: PromptTemplateSet = DEFAULT_TEMPLATES,
        repair_limit: int = DEFAULT_REPAIR_LIMIT,
        workers: int = DEFAULT_WORKERS,
        temperature: float = DEFAULT_TEMPERATURE,
        prune_rounds: int = DEFAULT_PRUNE_ROUNDS,
        skip_abstract: bool = False,
        measure_mutation: bool = True,
        system_message: Optional[str] = None,
    ) -> None:
        """Initialize the coordinator.

        Args:
            project: Discovered units of the project under test
            toolchain: Adapter that compiles, runs and measures tests
            gateway: Chat gateway holding the backend and transcript
            templates: Prompt templates
            repair_limit: Maximum repair rounds per unit
            workers: Units generated concurrently
            temperature: Sampling temperature of every session
            prune_rounds: Prune and recompile rounds when finalizing
            skip_abstract: Leave interfaces and abstract classes out
            measure_mutation: Compute mutation scores of final suites
            system_message: Optional system turn opening every session
        """
        if repair_limit < 0:
            raise InputError("repair_limit must be >= 0")
        if workers < 1:
            raise InputError("workers must be >= 1")
        self.project = project
        self.toolchain = toolchain
        self.gateway = gateway
        self.templates = templates
        self.repair_limit = repair_limit
        self.temperature = temperature
        self.prune_rounds = prune_rounds
        self.skip_abstract = skip_abstract
        self.measure_mutation = measure_mutation
        self.system_message = system_message
        self._semaphore = asyncio.Semaphore(workers)

    @property
    def containers(self) -> list[ContainerUnit]:
        return [
            c for c in self.project.containers if not (self.skip_abstract and c.is_abstract)
        ]

    # Units

    def class_unit(self, container: ContainerUnit) -> GenerationUnit:
        return GenerationUnit(
            unit_id=container.id,
            session_id=f"{SESSION_CLASS}:{container.id}",
            container=container,
            test_class_name=required_test_class_name(container, None, self.templates),
        )

    def method_unit(self, container: ContainerUnit, method: MethodUnit) -> GenerationUnit:
        return GenerationUnit(
            unit_id=method.unit_id,
            session_id=f"{SESSION_METHOD}:{method.unit_id}",
            container=container,
            test_class_name=required_test_class_name(container, method, self.templates),
            method=method,
        )

    def constructor_unit(self, container: ContainerUnit) -> GenerationUnit:
        return GenerationUnit(
            unit_id=container.constructor_unit_id,
            session_id=f"{SESSION_CONSTRUCTOR}:{container.id}",
            container=container,
            test_class_name=required_test_class_name(container, CONSTRUCTOR_SENTINEL, self.templates),
            constructor_pass=True,
        )

    def method_level_units(
        self,
        methods: Optional[Iterable[MethodUnit]] = None,
        constructors: Optional[Iterable[ContainerUnit]] = None,
    ) -> list[GenerationUnit]:
        """Return method units plus constructor passes, in container order."""
        wanted_methods = None if methods is None else {m.unit_id for m in methods}
        wanted_ctors = None if constructors is None else {c.id for c in constructors}
        units = []
        for container in self.containers:
            for method in container.methods:
                if wanted_methods is None or method.unit_id in wanted_methods:
                    units.append(self.method_unit(container, method))
            if container.has_constructor and (wanted_ctors is None or container.id in wanted_ctors):
                units.append(self.constructor_unit(container))
        return units

    # Generation loop

    def _materialize(self, unit: GenerationUnit, reply: str) -> list[SuiteFile]:
        """Turn a reply into aligned test files, primary file first."""
        adapter = self.toolchain.adapter
        blocks = extract_code_blocks(reply)
        primary_index = next(
            (i for i, block in enumerate(blocks) if declared_test_names(block, adapter)), 0
        )
        package = unit.container.package
        try:
            primary = align_identity(blocks[primary_index], unit.test_class_name, package, adapter)
        except UnfixableSourceError:
            return []
        files = [SuiteFile(_package_path(package, unit.test_class_name, adapter.suffix), primary)]
        for i, block in enumerate(blocks):
            if i == primary_index:
                continue
            try:
                helper = align_identity(block, None, package, adapter)
            except UnfixableSourceError:
                continue
            node = primary_type(helper, adapter)
            name = declared_name(node) if node is not None else ""
            path = _package_path(package, name, adapter.suffix)
            if name and all(f.relative_path != path for f in files):
                files.append(SuiteFile(path, helper))
        return files

    async def _attempt(self, workspace: Workspace, files: list[SuiteFile], truncated: bool) -> Optional[str]:
        """Compile and run one reply; return the errors to repair or None."""
        if truncated:
            return TRUNCATED_REPLY
        if not files:
            return NO_TEST_CLASS
        diagnostics = await self.toolchain.compile(workspace, files)
        if diagnostics:
            return render_diagnostics(diagnostics)
        verdicts = await self.toolchain.run_tests(workspace, files)
        if not verdicts:
            return NO_TEST_CLASS
        failing = [v for v in verdicts if not v.passed]
        return render_failures(failing) if failing else None

    async def generate_for_unit(
        self, unit: GenerationUnit, prompt: str, session: ChatSession
    ) -> TestSuiteArtifact:
        """Generate, compile, run and repair tests of one unit.

        At most ``repair_limit`` repair rounds follow the first request; the
        loop ends early once every test compiles and passes. The last reply
        is then pruned and classified.
        """
        artifact = TestSuiteArtifact(unit_id=unit.unit_id)
        files: list[SuiteFile] = []
        async with self.toolchain.workspace(self.project) as workspace:
            message = prompt
            try:
                for round_number in range(self.repair_limit + 1):
                    reply = await self.gateway.send(session, message)
                    artifact.truncated = session.truncated
                    files = self._materialize(unit, reply)
                    errors = await self._attempt(workspace, files, session.truncated)
                    if errors is None:
                        break
                    if round_number == self.repair_limit:
                        _LOGGER.debug("%s: repair limit reached", unit.unit_id)
                        break
                    artifact.repair_rounds += 1
                    message = build_repair_prompt(errors, self.templates)
            except ReplayDesyncError:
                raise
            except (BackendUnavailableError, BackendError, RunnerCrashError, ToolchainTimeoutError) as err:
                _LOGGER.error("Unit %s aborted: %s", unit.unit_id, err)
                artifact.aborted = True
                artifact.abort_reason = str(err)
            if not artifact.aborted and artifact.truncated:
                _LOGGER.warning("Unit %s: last reply was cut off, keeping no tests", unit.unit_id)
            elif not artifact.aborted:
                artifact.files = files
                artifact.primary_file = files[0].relative_path if files else ""
                artifact.n_generated = count_tests(files, self.toolchain.adapter)
                try:
                    artifact = await finalize(self.toolchain, workspace, artifact, self.prune_rounds)
                except (RunnerCrashError, ToolchainTimeoutError) as err:
                    _LOGGER.error("Unit %s aborted while finalizing: %s", unit.unit_id, err)
                    artifact.aborted = True
                    artifact.abort_reason = str(err)
        if artifact.aborted:
            artifact.files = []
            artifact.per_test_verdicts = []
        artifact.requests = session.counted_requests
        artifact.transport_failures = session.transport_failures
        _LOGGER.info(
            "Unit %s: %s requests, %s repair rounds, %s tests",
            unit.unit_id,
            artifact.requests,
            artifact.repair_rounds,
            artifact.n_generated,
        )
        return artifact

    async def _run_unit(self, unit: GenerationUnit) -> TestSuiteArtifact:
        async with self._semaphore:
            session = self.gateway.new_session(
                unit.session_id, temperature=self.temperature, system_message=self.system_message
            )
            return await self.generate_for_unit(unit, unit.prompt(self.templates), session)

    async def _run_units(self, mode: GranularityMode, units: list[GenerationUnit]) -> GenerationRun:
        artifacts = await asyncio.gather(*(self._run_unit(unit) for unit in units))
        run = GenerationRun(mode, self.project.name, self.project.fingerprint())
        for artifact in artifacts:
            run.add(artifact)
        groups = [(f"_u{i}", a.passing_files()) for i, a in enumerate(artifacts) if not a.aborted]
        run.suite = merge_suites(groups)
        return run

    # Measurement

    async def _settle(self, workspace: Workspace, files: list[SuiteFile]) -> list[SuiteFile]:
        """Prune a merged suite until it compiles."""
        scratch = TestSuiteArtifact(unit_id="suite", files=list(files))
        for _ in range(self.prune_rounds):
            diagnostics = await self.toolchain.compile(workspace, scratch.files)
            if not diagnostics:
                return scratch.files
            _LOGGER.warning("Merged suite does not compile, pruning %s diagnostics", len(diagnostics))
            scratch = prune_non_compiling(scratch, diagnostics, self.toolchain.adapter)
        if await self.toolchain.compile(workspace, scratch.files):
            return []
        return scratch.files

    async def measure(self, run: GenerationRun) -> GenerationRun:
        """Measure coverage and mutation score of a run's suite."""
        async with self.toolchain.workspace(self.project) as workspace:
            run.suite = await self._settle(workspace, run.suite)
            try:
                run.coverage = await self.toolchain.coverage(workspace, run.suite)
            except CoverageUnavailableError as err:
                _LOGGER.warning("Coverage unavailable for %s run: %s", run.mode.value, err)
                run.coverage = None
            if self.measure_mutation:
                try:
                    run.mutation = await self.toolchain.mutation_score(workspace, run.suite)
                except CoverageUnavailableError as err:
                    _LOGGER.warning("Mutation score unavailable for %s run: %s", run.mode.value, err)
                    run.mutation = None
        return run

    # Strategies

    async def run_class_level(self) -> GenerationRun:
        """Generate one test class per container."""
        units = [self.class_unit(c) for c in self.containers]
        _LOGGER.info("Class-level generation for %s containers", len(units))
        run = await self._run_units(GranularityMode.CLASS_LEVEL, units)
        return await self.measure(run)

    async def run_method_level(self) -> GenerationRun:
        """Generate one test class per method plus one per constructor group."""
        units = self.method_level_units()
        _LOGGER.info("Method-level generation for %s units", len(units))
        run = await self._run_units(GranularityMode.METHOD_LEVEL, units)
        return await self.measure(run)

    async def combine(
        self,
        run_a: GenerationRun,
        run_b: GenerationRun,
        mode: GranularityMode = GranularityMode.COMBINED,
    ) -> GenerationRun:
        """Merge the passing suites of two runs and re-measure the union.

        Raises:
            InputError: If the runs cover different projects
        """
        if run_a.project_fingerprint != run_b.project_fingerprint:
            raise InputError(
                f"Cannot combine runs of {run_a.project_name} and {run_b.project_name}"
            )
        suffix_a = COMBINE_SUFFIX_METHOD if run_a.mode == GranularityMode.METHOD_LEVEL else COMBINE_SUFFIX_CLASS
        suffix_b = COMBINE_SUFFIX_CLASS if run_b.mode == GranularityMode.CLASS_LEVEL else COMBINE_SUFFIX_METHOD
        run = GenerationRun(mode, run_a.project_name, run_a.project_fingerprint)
        for artifact in list(run_a.per_unit_artifacts.values()) + list(run_b.per_unit_artifacts.values()):
            run.per_unit_artifacts[artifact.unit_id] = artifact
        run.ledger = run_a.ledger.merge(run_b.ledger)
        run.suite = merge_suites([(suffix_a, run_a.suite), (suffix_b, run_b.suite)])
        run.phase_requests = {
            run_a.mode.value: run_a.ledger.total_requests,
            run_b.mode.value: run_b.ledger.total_requests,
        }
        return await self.measure(run)

    async def run_combined(self) -> GenerationRun:
        """Run class level and method level, then combine them."""
        class_run = await self.run_class_level()
        method_run = await self.run_method_level()
        return await self.combine(class_run, method_run)

    async def run_hybrid(self) -> GenerationRun:
        """Class level first, then method level for what it left uncovered."""
        class_run = await self.run_class_level()
        fallback = class_run.coverage is None
        if fallback:
            _LOGGER.warning("No phase-one coverage, falling back to full method level")
        methods, constructors = select_hybrid_targets(self.project, class_run.coverage)
        units = self.method_level_units(methods, constructors)
        _LOGGER.info(
            "Hybrid phase two targets %s methods and %s constructor passes",
            len(methods),
            len(constructors),
        )
        method_run = await self._run_units(GranularityMode.METHOD_LEVEL, units)
        run = await self.combine(class_run, method_run, GranularityMode.HYBRID)
        run.coverage_fallback = fallback
        return run

    async def run(self, mode: GranularityMode) -> GenerationRun:
        """Execute one strategy end to end."""
        strategies = {
            GranularityMode.CLASS_LEVEL: self.run_class_level,
            GranularityMode.METHOD_LEVEL: self.run_method_level,
            GranularityMode.COMBINED: self.run_combined,
            GranularityMode.HYBRID: self.run_hybrid,
        }
        return await strategies[GranularityMode(mode)]()

    # Output

    async def write_outputs(self, run: GenerationRun, out_dir: Path) -> None:
        """Write the suite, unit reports and inventory (``run.json`` excluded)."""
        out_dir = Path(out_dir)
        files: dict[Path, str] = {out_dir / FILE_UNITS: self.project.to_json() + "\n"}
        for suite_file in run.suite:
            files[out_dir / DIR_TESTS / suite_file.relative_path] = suite_file.source
        for unit_id, artifact in sorted(run.per_unit_artifacts.items()):
            unit_dir = out_dir / DIR_UNITS / safe_unit_id(unit_id)
            files[unit_dir / FILE_SANITIZER_REPORT] = artifact.report_json() + "\n"
            for suite_file in artifact.files:
                files[unit_dir / "files" / suite_file.relative_path] = suite_file.source
        for path, content in files.items():
            path.parent.mkdir(parents=True, exist_ok=True)
            async with aiofiles.open(path, mode="w", encoding="utf-8") as f:
                await f.write(content)
        _LOGGER.debug("Wrote %s output files to %s", len(files), out_dir)


def run_to_json(document: dict[str, Any]) -> str:
    """Serialize a run document deterministically."""
    return json.dumps(document, indent=2, sort_keys=True) + "\n"
