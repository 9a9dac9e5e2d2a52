"""Scripted toolchain for offline runs.

The script is a JSON document::

    {
      "project": {
        "methods": {"<unit id>": {"lines": 4, "branches": 2}},
        "mutants": {"<mutant id>": "<container id>"}
      },
      "compile_outcomes": {
        "<TestClass>": [
          {"member": "testX", "contains": "div(", "message": "cannot find symbol"},
          {"import": "org.mockito.Mockito", "message": "package org.mockito does not exist"},
          {"member": "testY", "when_absent": "Helper", "message": "cannot find symbol"},
          {"message": "unplaceable failure"}
        ]
      },
      "test_verdicts": {
        "<TestClass>.<test>": "passed",
        "<TestClass>.<other>": [
          {"contains": "assertEquals(3", "status": "failed", "message": "expected 3"},
          {"status": "passed"}
        ]
      },
      "coverage_tables": {
        "<TestClass>.<test>": {"lines": {"<unit id>": [0, 1]}, "branches": {"<unit id>": [0]}}
      },
      "mutant_kill_map": {"<TestClass>.<test>": ["<mutant id>"]}
    }

Faults are active only while their member (and ``contains`` text) is
still in the file, and ``when_absent`` faults only once the named member is
gone. Test classes without compile outcomes compile cleanly. A suite is
measured as the union over its tests, so coverage is monotonic under suite
union. Lookups ignore the ``_c``/``_m`` suffixes combined suites carry.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Optional, Union

import voluptuous as vol  # type: ignore

from .const import (
    DIAG_COMPILE_ERROR,
    DIAG_IMPORT_ERROR,
    DIAG_NAME_MISMATCH,
    DIAG_OTHER,
    LANGUAGE_JAVA,
    STATUS_FAILED,
    STATUS_PASSED,
    TOOLCHAIN_SIMULATED,
)
from .exceptions import (
    ConfigurationError,
    CoverageUnavailableError,
    RunnerCrashError,
    SimulatorDesyncError,
)
from .languages import JavaAdapter, declared_name, get_adapter
from .sanitizer import MEMBER_TEST, list_members, primary_type
from .toolchain import (
    DIAGNOSTIC_KINDS,
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

STATUS_CRASH = "crash"

_COUNT = vol.All(int, vol.Range(min=0))
_VERDICT_ENTRY = vol.Schema(
    {
        vol.Required("status"): vol.In([STATUS_PASSED, STATUS_FAILED, STATUS_CRASH]),
        vol.Optional("message"): str,
        vol.Optional("contains"): str,
    }
)

SCRIPT_SCHEMA = vol.Schema(
    {
        vol.Required("project"): {
            vol.Required("methods"): {
                str: {vol.Required("lines"): _COUNT, vol.Optional("branches", default=0): _COUNT}
            },
            vol.Optional("mutants", default={}): {str: str},
        },
        vol.Optional("compile_outcomes", default={}): {
            str: [
                vol.Schema(
                    {
                        vol.Optional("member"): str,
                        vol.Optional("import"): str,
                        vol.Optional("when_absent"): str,
                        vol.Optional("contains"): str,
                        vol.Optional("kind"): vol.In(sorted(DIAGNOSTIC_KINDS)),
                        vol.Required("message"): str,
                    }
                )
            ]
        },
        vol.Optional("test_verdicts", default={}): {
            str: vol.Any(vol.In([STATUS_PASSED, STATUS_FAILED, STATUS_CRASH]), _VERDICT_ENTRY, [_VERDICT_ENTRY])
        },
        vol.Optional("coverage_tables", default={}): {
            str: {
                vol.Optional("lines", default={}): {str: [_COUNT]},
                vol.Optional("branches", default={}): {str: [_COUNT]},
            }
        },
        vol.Optional("mutant_kill_map", default={}): {str: [str]},
        vol.Optional("coverage_unavailable", default=False): bool,
    }
)


def _container_of(unit_id: str) -> str:
    return unit_id.split("#", 1)[0]


class SimulatedToolchain(Toolchain):
    """Toolchain whose four operations replay a script."""

    name = TOOLCHAIN_SIMULATED

    def __init__(self, script: dict[str, Any], adapter: Optional[JavaAdapter] = None) -> None:
        super().__init__(adapter or get_adapter(LANGUAGE_JAVA))
        try:
            self.script = SCRIPT_SCHEMA(script)
        except vol.Invalid as err:
            raise ConfigurationError(f"Invalid simulator script: {err}", key="toolchain.script") from err
        self.methods: dict[str, dict[str, int]] = self.script["project"]["methods"]
        self.mutants: dict[str, str] = self.script["project"]["mutants"]

    async def _compile(self, workspace: Workspace, test_files: list[SuiteFile]) -> list[Diagnostic]:
        diagnostics: list[Diagnostic] = []
        for suite_file in test_files:
            diagnostics.extend(self._compile_file(suite_file))
        return diagnostics

    def _compile_file(self, suite_file: SuiteFile) -> list[Diagnostic]:
        source = suite_file.source
        path = suite_file.relative_path
        primary = primary_type(source, self.adapter, suite_file.class_name)
        if primary is None:
            return [Diagnostic(path, DIAG_COMPILE_ERROR, "class, interface, enum, or record expected")]
        if declared_name(primary) != suite_file.class_name:
            return [
                Diagnostic(
                    path,
                    DIAG_NAME_MISMATCH,
                    f"class {declared_name(primary)} is public, should be declared in a file "
                    f"named {declared_name(primary)}{self.adapter.suffix}",
                    span=(primary.start_point[0] + 1, primary.start_point[1] + 1),
                )
            ]

        members = list_members(source, self.adapter)
        by_name = {m.name: m for m in members}
        diagnostics = []
        for fault in self.script["compile_outcomes"].get(suite_file.base_class_name, []):
            if "when_absent" in fault and fault["when_absent"] in by_name:
                continue
            if "import" in fault:
                needle = f"import {fault['import']}"
                if needle not in source:
                    continue
                line = source[: source.index(needle)].count("\n") + 1
                diagnostics.append(
                    Diagnostic(path, fault.get("kind", DIAG_IMPORT_ERROR), fault["message"], span=(line, 1))
                )
            elif "member" in fault:
                member = by_name.get(fault["member"])
                if member is None or fault.get("contains", "") not in member.text:
                    continue
                diagnostics.append(
                    Diagnostic(
                        path,
                        fault.get("kind", DIAG_COMPILE_ERROR),
                        fault["message"],
                        span=(member.start_line, 1),
                        attributed_test=member.name if member.kind == MEMBER_TEST else None,
                    )
                )
            elif fault.get("contains", "") in source:
                diagnostics.append(Diagnostic(path, fault.get("kind", DIAG_OTHER), fault["message"]))
        return diagnostics

    async def _run_tests(self, workspace: Workspace, test_files: list[SuiteFile]) -> list[TestVerdict]:
        verdicts = []
        for suite_file in test_files:
            for member in list_members(suite_file.source, self.adapter):
                if member.kind != MEMBER_TEST:
                    continue
                test_id = f"{suite_file.base_class_name}.{member.name}"
                status, message = self._verdict(test_id, member.text)
                if status == STATUS_CRASH:
                    raise RunnerCrashError(f"Test runner crashed in {test_id}")
                verdicts.append(
                    TestVerdict(suite_file.relative_path, suite_file.base_class_name, member.name, status, message)
                )
        return verdicts

    def _verdict(self, test_id: str, text: str) -> tuple[str, Optional[str]]:
        entry = self.script["test_verdicts"].get(test_id)
        if entry is None:
            raise SimulatorDesyncError(f"Script has no verdict for {test_id}")
        if isinstance(entry, str):
            return entry, None if entry == STATUS_PASSED else f"{test_id} failed"
        candidates = entry if isinstance(entry, list) else [entry]
        for candidate in candidates:
            if candidate.get("contains", "") in text:
                status = candidate["status"]
                message = candidate.get("message")
                if status == STATUS_FAILED and not message:
                    message = f"{test_id} failed"
                return status, message
        raise SimulatorDesyncError(f"No scripted verdict of {test_id} matches its source")

    def _suite_tests(self, passing_suite: list[SuiteFile]) -> list[str]:
        return [
            f"{f.base_class_name}.{m.name}"
            for f in passing_suite
            for m in list_members(f.source, self.adapter)
            if m.kind == MEMBER_TEST
        ]

    async def _coverage(self, workspace: Workspace, passing_suite: list[SuiteFile]) -> CoverageSnapshot:
        if self.script["coverage_unavailable"]:
            raise CoverageUnavailableError("Scripted coverage failure")
        lines: dict[str, set[int]] = {unit: set() for unit in self.methods}
        branches: dict[str, set[int]] = {unit: set() for unit in self.methods}
        for test_id in self._suite_tests(passing_suite):
            table = self.script["coverage_tables"].get(test_id)
            if table is None:
                raise SimulatorDesyncError(f"Script has no coverage table for {test_id}")
            for kind, covered in (("lines", lines), ("branches", branches)):
                for unit_id, ids in table[kind].items():
                    if unit_id not in self.methods:
                        raise SimulatorDesyncError(f"Coverage of {test_id} names unknown unit {unit_id}")
                    if any(i >= self.methods[unit_id][kind] for i in ids):
                        raise SimulatorDesyncError(f"Coverage of {test_id} exceeds {kind} of {unit_id}")
                    covered[unit_id].update(ids)

        per_method_lines = {u: (len(lines[u]), m["lines"]) for u, m in self.methods.items()}
        per_method_branches = {u: (len(branches[u]), m["branches"]) for u, m in self.methods.items()}
        per_container: dict[str, ContainerCoverage] = {}
        for unit_id in self.methods:
            container = _container_of(unit_id)
            current = per_container.get(container, ContainerCoverage())
            per_container[container] = ContainerCoverage(
                current.lines + CoverageCounter(*per_method_lines[unit_id]),
                current.branches + CoverageCounter(*per_method_branches[unit_id]),
            )
        return CoverageSnapshot(
            lines_total=sum(t for _, t in per_method_lines.values()),
            lines_covered=sum(c for c, _ in per_method_lines.values()),
            branches_total=sum(t for _, t in per_method_branches.values()),
            branches_covered=sum(c for c, _ in per_method_branches.values()),
            per_method_branches=per_method_branches,
            per_method_lines=per_method_lines,
            per_container=per_container,
        )

    async def _mutation_score(
        self, workspace: Workspace, passing_suite: list[SuiteFile]
    ) -> MutationSnapshot:
        killed: set[str] = set()
        for test_id in self._suite_tests(passing_suite):
            for mutant in self.script["mutant_kill_map"].get(test_id, []):
                if mutant not in self.mutants:
                    raise SimulatorDesyncError(f"{test_id} kills unknown mutant {mutant}")
                killed.add(mutant)
        per_container: dict[str, tuple[int, int]] = {}
        for mutant, container in self.mutants.items():
            hit, total = per_container.get(container, (0, 0))
            per_container[container] = (hit + (mutant in killed), total + 1)
        return MutationSnapshot(
            mutants_total=len(self.mutants), mutants_killed=len(killed), per_container=per_container
        )


def simulated_toolchain(
    script: Union[dict[str, Any], str, Path], adapter: Optional[JavaAdapter] = None
) -> SimulatedToolchain:
    """Build a simulated toolchain from a script or a path to one."""
    if not isinstance(script, dict):
        path = Path(script)
        try:
            script = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as err:
            raise ConfigurationError(f"Cannot load simulator script {path}: {err}", key="toolchain.script") from err
        _LOGGER.debug("Loaded simulator script %s", path)
    return SimulatedToolchain(script, adapter)
