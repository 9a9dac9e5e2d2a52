"""Tests for the Maven toolchain's output parsing."""
from pathlib import Path

import pytest

from granutest.const import (
    DIAG_COMPILE_ERROR,
    DIAG_IMPORT_ERROR,
    DIAG_NAME_MISMATCH,
    STATUS_FAILED,
    STATUS_PASSED,
)
from granutest.exceptions import CoverageUnavailableError, RunnerCrashError, ToolchainEnvironmentError
from granutest.languages import get_adapter
from granutest.maven import MavenToolchain, descriptor_parameters, erase_type
from granutest.source_model import discover_units
from granutest.toolchain import CoverageCounter, SuiteFile, Workspace

from conftest import junit_class, write_java

PATH = "com/example/CalculatorTest.java"


@pytest.fixture
def maven():
    return MavenToolchain(get_adapter("java"))


@pytest.fixture
def suite_file():
    return SuiteFile(
        PATH,
        junit_class(
            "CalculatorTest",
            {
                "testAdd": "assertEquals(3, new Calculator(0).add(1, 2));",
                "testDivide": "assertEquals(2, new Calculator(0).divide(4, 2));",
            },
        ),
    )


@pytest.mark.parametrize(
    ("descriptor", "expected"),
    [
        ("()V", []),
        ("(II)I", ["int", "int"]),
        ("(Ljava/lang/String;)Ljava/lang/String;", ["String"]),
        ("([I[[Ljava/util/List;J)V", ["int[]", "List[][]", "long"]),
        ("(Lorg/shapes/Shapes$Circle;Z)V", ["Circle", "boolean"]),
    ],
)
def test_descriptor_parameters(descriptor, expected):
    assert descriptor_parameters(descriptor) == expected


@pytest.mark.parametrize(
    ("source_type", "expected"),
    [
        ("int", "int"),
        ("Map<String, List<Integer>>", "Map"),
        ("java.util.List<String>", "List"),
        ("int...", "int[]"),
        ("String[][]", "String[][]"),
    ],
)
def test_erase_type(source_type, expected):
    assert erase_type(source_type) == expected


@pytest.mark.parametrize(
    ("source_type", "expected"),
    [
        ("T", "Object"),
        ("T[]", "Object[]"),
        ("K", "Comparable"),
        ("V", "Comparable"),
        ("List<T>", "List"),
    ],
)
def test_erase_type_variables(source_type, expected):
    bounds = {"T": "", "K": "java.lang.Comparable<K>", "V": "K"}
    assert erase_type(source_type, bounds) == expected


class TestCompileOutput:
    """``mvn test-compile`` error lines."""

    def test_diagnostics_are_classified(self, maven, project_model, suite_file, tmp_path):
        workspace = Workspace(project=project_model, root=tmp_path)
        full = tmp_path / "src/test/java" / PATH
        output = "\n".join(
            [
                "[INFO] Compiling 1 source file",
                f"[ERROR] {full}:[4,1] package org.junit.jupiter.api does not exist",
                f"[ERROR] {full}:[10,30] cannot find symbol",
                f"[ERROR] {full}:[10,30] cannot find symbol",
                f"[ERROR] {full}:[6,8] class CalcTest is public, should be declared in a file named CalcTest.java",
                "[ERROR] -> [Help 1]",
            ]
        )
        diagnostics = maven.parse_compile_output(output, workspace, [suite_file])
        assert [(d.file, d.kind, d.span) for d in diagnostics] == [
            (PATH, DIAG_IMPORT_ERROR, (4, 1)),
            (PATH, DIAG_COMPILE_ERROR, (10, 30)),
            (PATH, DIAG_NAME_MISMATCH, (6, 8)),
        ]
        assert diagnostics[1].attributed_test == "testAdd"

    def test_foreign_file_keeps_its_path(self, maven, project_model, suite_file, tmp_path):
        workspace = Workspace(project=project_model, root=tmp_path)
        output = "[ERROR] /elsewhere/Other.java:[1,1] broken"
        [diagnostic] = maven.parse_compile_output(output, workspace, [suite_file])
        assert diagnostic.file == "/elsewhere/Other.java"
        assert diagnostic.attributed_test is None


class TestSurefireReports:
    """Per-method verdicts from ``TEST-*.xml``."""

    def test_parameterized_cases_collapse(self, maven, suite_file, tmp_path):
        (tmp_path / "TEST-com.example.CalculatorTest.xml").write_text(
            """<?xml version="1.0" encoding="UTF-8"?>
<testsuite name="com.example.CalculatorTest" tests="3">
  <testcase name="testAdd" classname="com.example.CalculatorTest"/>
  <testcase name="testDivide(int)[1]" classname="com.example.CalculatorTest"/>
  <testcase name="testDivide(int)[2]" classname="com.example.CalculatorTest">
    <failure message="expected: &lt;2&gt; but was: &lt;1&gt;" type="org.opentest4j.AssertionFailedError"/>
  </testcase>
  <testcase name="testOther" classname="com.example.OtherTest"/>
</testsuite>
"""
        )
        verdicts = maven.parse_surefire_reports(tmp_path, [suite_file])
        assert [(v.test_name, v.status, v.failure_message) for v in verdicts] == [
            ("testAdd", STATUS_PASSED, None),
            ("testDivide", STATUS_FAILED, "expected: <2> but was: <1>"),
        ]

    def test_missing_directory(self, maven, suite_file, tmp_path):
        assert maven.parse_surefire_reports(tmp_path / "absent", [suite_file]) == []

    def test_corrupt_report(self, maven, suite_file, tmp_path):
        (tmp_path / "TEST-x.xml").write_text("<testsuite><testcase")
        with pytest.raises(RunnerCrashError):
            maven.parse_surefire_reports(tmp_path, [suite_file])


JACOCO_XML = """<?xml version="1.0" encoding="UTF-8"?>
<report name="calc">
  <package name="com/example">
    <class name="com/example/Calculator" sourcefilename="Calculator.java">
      <method name="&lt;init&gt;" desc="(I)V" line="6">
        <counter type="LINE" missed="1" covered="3"/>
        <counter type="BRANCH" missed="1" covered="1"/>
      </method>
      <method name="add" desc="(II)I" line="13">
        <counter type="LINE" missed="0" covered="1"/>
      </method>
      <method name="divide" desc="(II)I" line="17">
        <counter type="LINE" missed="1" covered="2"/>
        <counter type="BRANCH" missed="1" covered="1"/>
      </method>
      <counter type="LINE" missed="2" covered="6"/>
      <counter type="BRANCH" missed="2" covered="2"/>
    </class>
    <class name="com/example/Calculator$1" sourcefilename="Calculator.java">
      <counter type="LINE" missed="5" covered="0"/>
    </class>
    <class name="com/example/Greeter" sourcefilename="Greeter.java">
      <method name="greet" desc="(Ljava/lang/String;)Ljava/lang/String;" line="4">
        <counter type="LINE" missed="3" covered="0"/>
        <counter type="BRANCH" missed="4" covered="0"/>
      </method>
      <counter type="LINE" missed="3" covered="0"/>
      <counter type="BRANCH" missed="4" covered="0"/>
    </class>
  </package>
</report>
"""


class TestJacoco:
    """Coverage mapped onto discovered units."""

    def test_units_and_totals(self, maven, project_model, tmp_path):
        report = tmp_path / "jacoco.xml"
        report.write_text(JACOCO_XML)
        snapshot = maven.parse_jacoco(report, project_model)
        assert snapshot.lines == CoverageCounter(6, 16)
        assert snapshot.branches == CoverageCounter(2, 8)
        assert snapshot.per_method_branches == {
            "com.example.Calculator#Calculator(int)": (1, 2),
            "com.example.Calculator#add(int, int)": (0, 0),
            "com.example.Calculator#divide(int, int)": (1, 2),
            "com.example.Greeter#greet(String)": (0, 4),
        }
        assert snapshot.per_method_lines["com.example.Calculator#add(int, int)"] == (1, 1)
        assert snapshot.per_container["com.example.Greeter"].branches == CoverageCounter(0, 4)
        assert snapshot.per_container["com.example.Calculator"].lines == CoverageCounter(6, 13)

    def test_corrupt_report(self, maven, project_model, tmp_path):
        report = tmp_path / "jacoco.xml"
        report.write_text("<report")
        with pytest.raises(CoverageUnavailableError):
            maven.parse_jacoco(report, project_model)

    def test_generic_methods_match_erased_descriptors(self, maven, tmp_path):
        root = tmp_path / "box"
        write_java(
            root,
            "src/main/java/a/Box.java",
            "package a;\n"
            "public class Box<T extends Comparable<T>> {\n"
            "    void put(T item) { }\n"
            "    <U> U map(U value, T[] items) { return value; }\n"
            "}\n",
        )
        project = discover_units(root, "java")
        report = tmp_path / "jacoco.xml"
        report.write_text(
            """<?xml version="1.0" encoding="UTF-8"?>
<report name="box">
  <package name="a">
    <class name="a/Box" sourcefilename="Box.java">
      <method name="put" desc="(Ljava/lang/Comparable;)V" line="3">
        <counter type="LINE" missed="0" covered="1"/>
      </method>
      <method name="map" desc="(Ljava/lang/Object;[Ljava/lang/Comparable;)Ljava/lang/Object;" line="4">
        <counter type="LINE" missed="1" covered="0"/>
      </method>
      <counter type="LINE" missed="1" covered="1"/>
    </class>
  </package>
</report>
"""
        )
        snapshot = maven.parse_jacoco(report, project)
        assert snapshot.per_method_lines == {"a.Box#put(T)": (1, 1), "a.Box#map(U, T[])": (0, 1)}


ZERO_JACOCO_XML = """<?xml version="1.0" encoding="UTF-8"?>
<report name="calc">
  <package name="com/example">
    <class name="com/example/Calculator" sourcefilename="Calculator.java">
      <counter type="LINE" missed="8" covered="0"/>
      <counter type="BRANCH" missed="4" covered="0"/>
    </class>
    <class name="com/example/Greeter" sourcefilename="Greeter.java">
      <counter type="LINE" missed="3" covered="0"/>
      <counter type="BRANCH" missed="4" covered="0"/>
    </class>
  </package>
</report>
"""


class FakeMaven(MavenToolchain):
    """Maven toolchain whose builds only touch the files named by ``writes``."""

    def __init__(self, writes):
        super().__init__(get_adapter("java"))
        self.writes = writes
        self.calls = []

    async def _mvn(self, workspace, args, timeout):
        self.calls.append(args)
        exec_file = Path(workspace.root) / "target" / "jacoco.exec"
        for relative, content in self.writes(len(self.calls), exec_file.exists()).items():
            path = Path(workspace.root) / relative
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(content)
        return 0, ""


class TestCoverageWithoutExecutionData:
    """Suites that leave JaCoCo without execution data."""

    async def test_empty_suite_reports_zero_of_total(self, project_model, tmp_path):
        def writes(call, has_exec):
            return {"target/site/jacoco/jacoco.xml": ZERO_JACOCO_XML} if has_exec else {}

        maven = FakeMaven(writes)
        workspace = Workspace(project=project_model, root=tmp_path)
        snapshot = await maven.coverage(workspace, [])
        assert [args[0] for args in maven.calls] == ["compile"]
        assert (tmp_path / "target" / "jacoco.exec").read_bytes() == b""
        assert snapshot.lines == CoverageCounter(0, 11)
        assert snapshot.branches == CoverageCounter(0, 8)

    async def test_run_without_exec_file_falls_back(self, project_model, suite_file, tmp_path):
        def writes(call, has_exec):
            return {"target/site/jacoco/jacoco.xml": ZERO_JACOCO_XML} if call == 2 and has_exec else {}

        maven = FakeMaven(writes)
        workspace = Workspace(project=project_model, root=tmp_path)
        snapshot = await maven.coverage(workspace, [suite_file])
        assert len(maven.calls) == 2
        assert "test" in maven.calls[0]
        assert snapshot.lines == CoverageCounter(0, 11)

    async def test_stale_report_is_not_reused(self, project_model, tmp_path):
        stale = tmp_path / "target" / "site" / "jacoco" / "jacoco.xml"
        stale.parent.mkdir(parents=True)
        stale.write_text(JACOCO_XML)
        maven = FakeMaven(lambda call, has_exec: {})
        workspace = Workspace(project=project_model, root=tmp_path)
        with pytest.raises(CoverageUnavailableError):
            await maven.coverage(workspace, [])


class TestPit:
    """Mutation counts from ``mutations.xml``."""

    def test_counts_per_class(self, tmp_path):
        report = tmp_path / "mutations.xml"
        report.write_text(
            """<?xml version="1.0" encoding="UTF-8"?>
<mutations>
  <mutation detected="true" status="KILLED"><mutatedClass>com.example.Calculator</mutatedClass></mutation>
  <mutation detected="false" status="SURVIVED"><mutatedClass>com.example.Calculator</mutatedClass></mutation>
  <mutation detected="false" status="NO_COVERAGE"><mutatedClass>com.example.Greeter</mutatedClass></mutation>
  <mutation detected="true" status="KILLED"><mutatedClass>com.example.Calculator$1</mutatedClass></mutation>
</mutations>
"""
        )
        snapshot = MavenToolchain.parse_pit(report)
        assert (snapshot.mutants_killed, snapshot.mutants_total) == (2, 4)
        assert snapshot.per_container == {
            "com.example.Calculator": (1, 2),
            "com.example.Greeter": (0, 1),
            "com.example.Calculator.1": (1, 1),
        }
        assert snapshot.score == 0.5


async def test_missing_executable(project_model):
    toolchain = MavenToolchain(get_adapter("java"), executable="granutest-no-such-mvn")
    with pytest.raises(ToolchainEnvironmentError):
        async with toolchain.workspace(project_model):
            pass
