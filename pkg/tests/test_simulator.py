"""Tests for the scripted toolchain."""
import json

import pytest

from granutest.const import DIAG_COMPILE_ERROR, DIAG_IMPORT_ERROR, DIAG_NAME_MISMATCH, DIAG_OTHER
from granutest.exceptions import (
    ConfigurationError,
    CoverageUnavailableError,
    RunnerCrashError,
    SimulatorDesyncError,
)
from granutest.simulator import SimulatedToolchain, simulated_toolchain
from granutest.toolchain import CoverageCounter, SuiteFile

from conftest import junit_class

UNIT_ADD = "com.example.Calculator#add(int, int)"
UNIT_DIV = "com.example.Calculator#divide(int, int)"


def script(**sections):
    base = {
        "project": {
            "methods": {UNIT_ADD: {"lines": 1}, UNIT_DIV: {"lines": 3, "branches": 2}},
            "mutants": {"m1": "com.example.Calculator", "m2": "com.example.Calculator"},
        }
    }
    base.update(sections)
    return base


def calc_test(name="CalculatorTest", **tests):
    tests = tests or {"testAdd": "assertEquals(3, new Calculator(0).add(1, 2));"}
    return SuiteFile(f"com/example/{name}.java", junit_class(name, tests))


async def compile_one(toolchain, project, suite_file):
    async with toolchain.workspace(project) as workspace:
        return await toolchain.compile(workspace, [suite_file])


class TestScriptValidation:
    """Script loading."""

    def test_invalid_script(self):
        with pytest.raises(ConfigurationError):
            SimulatedToolchain({"project": {}})

    def test_unknown_verdict(self):
        with pytest.raises(ConfigurationError):
            SimulatedToolchain(script(test_verdicts={"A.b": "flaky"}))

    def test_load_from_path(self, tmp_path):
        path = tmp_path / "toolchain.json"
        path.write_text(json.dumps(script()))
        assert simulated_toolchain(path).methods[UNIT_ADD]["branches"] == 0

    def test_unreadable_path(self, tmp_path):
        with pytest.raises(ConfigurationError):
            simulated_toolchain(tmp_path / "missing.json")


class TestCompile:
    """Scripted compile outcomes."""

    async def test_clean_by_default(self, project_model):
        assert await compile_one(SimulatedToolchain(script()), project_model, calc_test()) == []

    async def test_member_fault(self, project_model):
        toolchain = SimulatedToolchain(
            script(compile_outcomes={"CalculatorTest": [{"member": "testAdd", "message": "cannot find symbol"}]})
        )
        [diagnostic] = await compile_one(toolchain, project_model, calc_test())
        assert diagnostic.kind == DIAG_COMPILE_ERROR
        assert diagnostic.attributed_test == "testAdd"
        assert diagnostic.span is not None

    async def test_contains_guard(self, project_model):
        toolchain = SimulatedToolchain(
            script(
                compile_outcomes={
                    "CalculatorTest": [{"member": "testAdd", "contains": "subtract(", "message": "no method"}]
                }
            )
        )
        assert await compile_one(toolchain, project_model, calc_test()) == []

    async def test_import_fault(self, project_model):
        toolchain = SimulatedToolchain(
            script(
                compile_outcomes={
                    "CalculatorTest": [{"import": "static org.junit.jupiter.api.Assertions.*", "message": "nope"}]
                }
            )
        )
        [diagnostic] = await compile_one(toolchain, project_model, calc_test())
        assert diagnostic.kind == DIAG_IMPORT_ERROR
        assert diagnostic.span == (4, 1)

    async def test_file_level_fault(self, project_model):
        toolchain = SimulatedToolchain(script(compile_outcomes={"CalculatorTest": [{"message": "broken"}]}))
        [diagnostic] = await compile_one(toolchain, project_model, calc_test())
        assert diagnostic.kind == DIAG_OTHER

    async def test_name_mismatch(self, project_model):
        wrong = SuiteFile("com/example/CalculatorTest.java", junit_class("CalcTest", {"t": "assertTrue(true);"}))
        [diagnostic] = await compile_one(SimulatedToolchain(script()), project_model, wrong)
        assert diagnostic.kind == DIAG_NAME_MISMATCH

    async def test_combine_suffix_ignored(self, project_model):
        toolchain = SimulatedToolchain(script(compile_outcomes={"CalculatorTest": [{"message": "broken"}]}))
        diagnostics = await compile_one(toolchain, project_model, calc_test("CalculatorTest_m"))
        assert len(diagnostics) == 1


class TestRunAndMeasure:
    """Verdicts, coverage union and mutation kills."""

    async def test_verdicts(self, project_model):
        toolchain = SimulatedToolchain(
            script(
                test_verdicts={
                    "CalculatorTest.testAdd": "passed",
                    "CalculatorTest.testDiv": [
                        {"contains": "assertEquals(4", "status": "failed", "message": "expected 4"},
                        {"status": "passed"},
                    ],
                }
            )
        )
        suite_file = calc_test(testAdd="assertTrue(true);", testDiv="assertEquals(4, new Calculator(0).divide(9, 2));")
        async with toolchain.workspace(project_model) as workspace:
            verdicts = await toolchain.run_tests(workspace, [suite_file])
        assert [(v.test_name, v.status, v.failure_message) for v in verdicts] == [
            ("testAdd", "passed", None),
            ("testDiv", "failed", "expected 4"),
        ]

    async def test_missing_verdict_desyncs(self, project_model):
        toolchain = SimulatedToolchain(script())
        async with toolchain.workspace(project_model) as workspace:
            with pytest.raises(SimulatorDesyncError):
                await toolchain.run_tests(workspace, [calc_test()])

    async def test_crash(self, project_model):
        toolchain = SimulatedToolchain(script(test_verdicts={"CalculatorTest.testAdd": "crash"}))
        async with toolchain.workspace(project_model) as workspace:
            with pytest.raises(RunnerCrashError):
                await toolchain.run_tests(workspace, [calc_test()])

    async def test_coverage_is_a_union(self, project_model):
        toolchain = SimulatedToolchain(
            script(
                coverage_tables={
                    "CalculatorTest.a": {"lines": {UNIT_DIV: [0, 1]}, "branches": {UNIT_DIV: [0]}},
                    "CalculatorTest.b": {"lines": {UNIT_DIV: [0, 2], UNIT_ADD: [0]}, "branches": {UNIT_DIV: [1]}},
                },
                mutant_kill_map={"CalculatorTest.a": ["m1"], "CalculatorTest.b": ["m1"]},
            )
        )
        suite = [calc_test(a="assertTrue(true);", b="assertTrue(true);")]
        async with toolchain.workspace(project_model) as workspace:
            coverage = await toolchain.coverage(workspace, suite)
            mutation = await toolchain.mutation_score(workspace, suite)
        assert coverage.lines == CoverageCounter(4, 4)
        assert coverage.branches == CoverageCounter(2, 2)
        assert coverage.per_method_branches[UNIT_DIV] == (2, 2)
        assert coverage.per_method_lines[UNIT_ADD] == (1, 1)
        assert coverage.per_container["com.example.Calculator"].lines == CoverageCounter(4, 4)
        assert (mutation.mutants_killed, mutation.mutants_total) == (1, 2)
        assert mutation.per_container == {"com.example.Calculator": (1, 2)}

    async def test_empty_suite(self, project_model):
        toolchain = SimulatedToolchain(script())
        async with toolchain.workspace(project_model) as workspace:
            coverage = await toolchain.coverage(workspace, [])
        assert coverage.lines == CoverageCounter(0, 4)
        assert coverage.per_method_branches[UNIT_DIV] == (0, 2)

    async def test_out_of_range_coverage(self, project_model):
        toolchain = SimulatedToolchain(
            script(coverage_tables={"CalculatorTest.testAdd": {"lines": {UNIT_ADD: [5]}}})
        )
        async with toolchain.workspace(project_model) as workspace:
            with pytest.raises(SimulatorDesyncError):
                await toolchain.coverage(workspace, [calc_test()])

    async def test_coverage_unavailable(self, project_model):
        toolchain = SimulatedToolchain(script(coverage_unavailable=True))
        async with toolchain.workspace(project_model) as workspace:
            with pytest.raises(CoverageUnavailableError):
                await toolchain.coverage(workspace, [])
