"""Post-processing of generated test files.

Aligns generated files with the class under test, prunes what does not
compile, classifies the survivors and counts the extra content the model
produced besides tests.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import TYPE_CHECKING, Any, Iterable, Optional

from .const import (
    DEFAULT_PRUNE_ROUNDS,
    DIAG_IMPORT_ERROR,
    DIAG_NAME_MISMATCH,
    LANGUAGE_JAVA,
    STATUS_FAILED,
    STATUS_NOT_COMPILED,
)
from .exceptions import UnfixableSourceError
from .languages import (
    CONSTRUCTOR_DECLARATIONS,
    INTERFACE_DECLARATIONS,
    METHOD_DECLARATIONS,
    JavaAdapter,
    annotation_names,
    body_members,
    declared_name,
    get_adapter,
    is_empty_body,
    iter_types,
    node_text,
    top_level_types,
)
from .toolchain import Diagnostic, SuiteFile, TestVerdict, render_diagnostics

if TYPE_CHECKING:
    from .source_model import ProjectModel
    from .toolchain import Toolchain, Workspace

_LOGGER = logging.getLogger(__name__)

MEMBER_TYPE = "type"
MEMBER_TEST = "test"
MEMBER_METHOD = "method"


@dataclass(frozen=True)
class Member:
    """A declaration inside a generated file."""

    name: str
    kind: str
    owner: str
    start_line: int
    end_line: int
    start_byte: int
    end_byte: int
    text: str
    top_level: bool = False

    def contains(self, line: int) -> bool:
        return self.start_line <= line <= self.end_line


def _default_adapter() -> JavaAdapter:
    return get_adapter(LANGUAGE_JAVA)


def list_members(source: str, adapter: Optional[JavaAdapter] = None) -> list[Member]:
    """List the types, test methods and other methods a file declares."""
    adapter = adapter or _default_adapter()
    tree = adapter.parse(source)
    members: list[Member] = []
    top = {node.id for node in top_level_types(tree.root_node)}
    for type_node, outer in iter_types(tree.root_node):
        type_name = declared_name(type_node)
        members.append(_member(type_node, type_name, MEMBER_TYPE, ".".join(outer), type_node.id in top))
        for child in body_members(type_node):
            if child.type not in METHOD_DECLARATIONS | CONSTRUCTOR_DECLARATIONS:
                continue
            kind = MEMBER_TEST if annotation_names(child) & adapter.test_markers else MEMBER_METHOD
            members.append(_member(child, declared_name(child), kind, type_name))
    return members


def _member(node, name: str, kind: str, owner: str, top_level: bool = False) -> Member:
    return Member(
        name=name,
        kind=kind,
        owner=owner,
        start_line=node.start_point[0] + 1,
        end_line=node.end_point[0] + 1,
        start_byte=node.start_byte,
        end_byte=node.end_byte,
        text=node_text(node),
        top_level=top_level,
    )


def declared_test_names(source: str, adapter: Optional[JavaAdapter] = None) -> list[str]:
    """Return the names of the test-marked methods in source order."""
    return [m.name for m in list_members(source, adapter) if m.kind == MEMBER_TEST]


def locate_member(
    source: str, line: int, members: Optional[list[Member]] = None
) -> Optional[Member]:
    """Return the innermost declaration spanning a 1-based line."""
    if members is None:
        members = list_members(source)
    enclosing = [m for m in members if m.contains(line)]
    if not enclosing:
        return None
    return min(enclosing, key=lambda m: (m.end_byte - m.start_byte, m.kind == MEMBER_TYPE))


def primary_type(source: str, adapter: Optional[JavaAdapter] = None, expected: str = ""):
    """Return the top-level type holding the tests of a file."""
    adapter = adapter or _default_adapter()
    root = adapter.parse(source).root_node
    types = top_level_types(root)
    if not types:
        return None
    for node in types:
        if expected and declared_name(node) == expected:
            return node
    for node in types:
        if any(annotation_names(child) & adapter.test_markers for child in body_members(node)):
            return node
    return types[0]


def _expand_to_lines(data: bytes, start: int, end: int) -> tuple[int, int]:
    line_start = data.rfind(b"\n", 0, start) + 1
    if data[line_start:start].strip() == b"":
        start = line_start
    line_end = data.find(b"\n", end)
    if line_end == -1:
        line_end = len(data)
    if data[end:line_end].strip() == b"":
        end = min(line_end + 1, len(data))
    return start, end


def remove_members(source: str, members: Iterable[Member]) -> str:
    """Delete declarations from a file, whole lines where possible."""
    data = source.encode("utf-8")
    spans = {(m.start_byte, m.end_byte) for m in members}
    outermost = [
        (start, end)
        for start, end in spans
        if not any(s <= start and end <= e and (s, e) != (start, end) for s, e in spans)
    ]
    # Disjoint spans, removed back to front so offsets stay valid.
    for start, end in sorted(outermost, reverse=True):
        start, end = _expand_to_lines(data, start, end)
        data = data[:start] + data[end:]
    return data.decode("utf-8")


def retain_tests(source: str, names: Iterable[str], adapter: Optional[JavaAdapter] = None) -> str:
    """Remove every test method whose name is not in ``names``."""
    keep = set(names)
    doomed = [m for m in list_members(source, adapter) if m.kind == MEMBER_TEST and m.name not in keep]
    return remove_members(source, doomed) if doomed else source


def _replace_spans(source: str, edits: list[tuple[int, int, str]]) -> str:
    data = source.encode("utf-8")
    for start, end, text in sorted(edits, reverse=True):
        data = data[:start] + text.encode("utf-8") + data[end:]
    return data.decode("utf-8")


def _package_node(root):
    for child in root.named_children:
        if child.type == "package_declaration":
            return child
    return None


def _import_nodes(root) -> list:
    return [child for child in root.named_children if child.type == "import_declaration"]


def _import_name(node) -> str:
    text = node_text(node)
    text = text.removeprefix("import").strip().removesuffix(";").strip()
    return text.removeprefix("static").strip()


def _uses_bare_assertions(root, adapter: JavaAdapter) -> bool:
    stack = [root]
    while stack:
        node = stack.pop()
        if node.type == "method_invocation" and node.child_by_field_name("object") is None:
            name = node.child_by_field_name("name")
            if name is not None and node_text(name) in adapter.assertion_calls:
                return True
        stack.extend(node.named_children)
    return False


def rename_type(
    source: str, old_name: str, new_name: str, adapter: Optional[JavaAdapter] = None
) -> str:
    """Rename every identifier spelling ``old_name``, literals untouched."""
    adapter = adapter or _default_adapter()
    edits = []
    stack = [adapter.parse(source).root_node]
    while stack:
        node = stack.pop()
        if node.type in ("identifier", "type_identifier") and node_text(node) == old_name:
            edits.append((node.start_byte, node.end_byte, new_name))
        stack.extend(node.children)
    return _replace_spans(source, edits) if edits else source


def align_identity(
    file_source: str,
    expected_test_class_name: Optional[str],
    expected_namespace: str,
    adapter: Optional[JavaAdapter] = None,
) -> str:
    """Make a generated file agree with the class under test.

    Rewrites the package header, renames the primary test class (and every
    reference to it) and inserts missing framework imports. An already
    aligned file comes back byte-identical.

    Raises:
        UnfixableSourceError: If no top-level declaration can be recovered
    """
    adapter = adapter or _default_adapter()
    source = file_source
    root = adapter.parse(source).root_node
    if not top_level_types(root):
        raise UnfixableSourceError("No top-level type declaration could be recovered")

    package = _package_node(root)
    header = f"package {expected_namespace};" if expected_namespace else ""
    if package is not None and node_text(package) != header:
        if header:
            source = _replace_spans(source, [(package.start_byte, package.end_byte, header)])
        else:
            start, end = _expand_to_lines(source.encode("utf-8"), package.start_byte, package.end_byte)
            source = _replace_spans(source, [(start, end, "")])
    elif package is None and header:
        source = f"{header}\n\n{source}"

    if expected_test_class_name:
        primary = primary_type(source, adapter, expected_test_class_name)
        old_name = declared_name(primary)
        if old_name and old_name != expected_test_class_name:
            _LOGGER.debug("Renaming test class %s to %s", old_name, expected_test_class_name)
            source = rename_type(source, old_name, expected_test_class_name, adapter)

    root = adapter.parse(source).root_node
    imports = [_import_name(node) for node in _import_nodes(root)]
    missing: list[str] = []
    has_tests = any(m.kind == MEMBER_TEST for m in list_members(source, adapter))
    if has_tests and not any(
        name == prefix
        for name in imports
        for prefix in adapter.test_import_prefixes
    ):
        missing.append(adapter.test_import)
    if _uses_bare_assertions(root, adapter) and not any(
        name.startswith((adapter.assertion_import_prefix, *adapter.other_assertion_prefixes))
        for name in imports
    ):
        missing.append(adapter.assertion_import)
    if missing:
        anchors = _import_nodes(root) or [n for n in [_package_node(root)] if n is not None]
        block = "\n".join(missing)
        if anchors:
            at = anchors[-1].end_byte
            source = _replace_spans(source, [(at, at, "\n" + block)])
        else:
            source = f"{block}\n\n{source}"
    return source


@dataclass
class ExtraContentStats:
    """Non-test declarations found in generated files."""

    additional_classes: int = 0
    additional_interfaces: int = 0
    overriding_classes: int = 0
    empty_placeholder_classes: int = 0
    files_with_extra: int = 0
    files_total: int = 0

    def __add__(self, other: "ExtraContentStats") -> "ExtraContentStats":
        return ExtraContentStats(
            *(getattr(self, f) + getattr(other, f) for f in self.__dataclass_fields__)
        )

    def as_dict(self) -> dict[str, int]:
        return asdict(self)


@dataclass
class TestSuiteArtifact:
    """Generated test files of one unit and everything learned about them."""

    __test__ = False

    unit_id: str
    files: list[SuiteFile] = field(default_factory=list)
    primary_file: str = ""
    per_test_verdicts: list[TestVerdict] = field(default_factory=list)
    removed_non_compiling: int = 0
    removed_files: int = 0
    removed_helpers: int = 0
    n_generated: int = 0
    extra_content: ExtraContentStats = field(default_factory=ExtraContentStats)
    not_compiled: dict[str, tuple[str, str]] = field(default_factory=dict)
    requests: int = 0
    transport_failures: int = 0
    repair_rounds: int = 0
    truncated: bool = False
    aborted: bool = False
    abort_reason: Optional[str] = None

    @property
    def test_ids(self) -> list[str]:
        """Return ``Class.method`` for every surviving test."""
        return [
            f"{f.base_class_name}.{name}" for f in self.files for name in declared_test_names(f.source)
        ]

    def passing_files(self) -> list[SuiteFile]:
        """Return the files cut down to their passing tests."""
        passing: dict[str, set[str]] = {}
        for verdict in self.per_test_verdicts:
            if verdict.passed:
                passing.setdefault(verdict.file, set()).add(verdict.test_name)
        files = []
        kept_tests = False
        for suite_file in self.files:
            if not declared_test_names(suite_file.source):
                # Helpers stay with the tests that may use them.
                files.append(suite_file)
                continue
            names = passing.get(suite_file.relative_path)
            if names:
                files.append(suite_file.replace(retain_tests(suite_file.source, names)))
                kept_tests = True
        return files if kept_tests else []

    def report(self) -> dict[str, Any]:
        """Return the ``sanitizer_report.json`` document."""
        n_generated, n_non_compiling, n_non_passing = classify_failures(self.per_test_verdicts)
        return {
            "unit_id": self.unit_id,
            "aborted": self.aborted,
            "abort_reason": self.abort_reason,
            "truncated": self.truncated,
            "requests": self.requests,
            "transport_failures": self.transport_failures,
            "repair_rounds": self.repair_rounds,
            "files": [f.relative_path for f in self.files],
            "removed_non_compiling": self.removed_non_compiling,
            "removed_files": self.removed_files,
            "removed_helpers": self.removed_helpers,
            "classification": {
                "n_generated": n_generated,
                "n_non_compiling": n_non_compiling,
                "n_non_passing": n_non_passing,
                "n_passing": n_generated - n_non_compiling - n_non_passing,
            },
            "extra_content": self.extra_content.as_dict(),
            "verdicts": [v.as_dict() for v in self.per_test_verdicts],
        }

    def report_json(self) -> str:
        return json.dumps(self.report(), indent=2, sort_keys=True)


def count_tests(files: Iterable[SuiteFile], adapter: Optional[JavaAdapter] = None) -> int:
    """Count test-marked methods across files."""
    return sum(len(declared_test_names(f.source, adapter)) for f in files)


def _mark_removed(
    artifact: TestSuiteArtifact, suite_file: SuiteFile, names: Iterable[str], reason: str
) -> int:
    count = 0
    for name in names:
        key = f"{suite_file.base_class_name}.{name}"
        if key not in artifact.not_compiled:
            artifact.not_compiled[key] = (suite_file.relative_path, reason)
            count += 1
    return count


def _drop_file(artifact: TestSuiteArtifact, suite_file: SuiteFile, reason: str) -> None:
    _mark_removed(artifact, suite_file, declared_test_names(suite_file.source), reason)
    artifact.files = [f for f in artifact.files if f.relative_path != suite_file.relative_path]
    artifact.removed_files += 1
    _LOGGER.debug("Removed %s: %s", suite_file.relative_path, reason)


def prune_non_compiling(
    artifact: TestSuiteArtifact,
    diagnostics: list[Diagnostic],
    adapter: Optional[JavaAdapter] = None,
) -> TestSuiteArtifact:
    """Remove what the diagnostics condemn.

    A diagnostic inside a test method removes that method, one inside a
    helper type removes the type. Import errors, identity mismatches and
    diagnostics that cannot be placed remove the whole file.
    """
    adapter = adapter or _default_adapter()
    pruned = replace(
        artifact,
        files=list(artifact.files),
        not_compiled=dict(artifact.not_compiled),
        extra_content=replace(artifact.extra_content),
    )
    by_path = {f.relative_path: f for f in pruned.files}
    condemned_files: dict[str, str] = {}
    # path -> span -> (member, rendered diagnostic)
    doomed: dict[str, dict[tuple[int, int], tuple[Member, str]]] = {}

    for diagnostic in diagnostics:
        suite_file = by_path.get(diagnostic.file)
        if suite_file is None:
            if not diagnostic.file:
                for path in by_path:
                    condemned_files.setdefault(path, diagnostic.render())
            continue
        if diagnostic.kind in (DIAG_IMPORT_ERROR, DIAG_NAME_MISMATCH):
            condemned_files.setdefault(suite_file.relative_path, diagnostic.render())
            continue
        members = list_members(suite_file.source, adapter)
        member = None
        if diagnostic.span is not None:
            member = locate_member(suite_file.source, diagnostic.span[0], members)
        elif diagnostic.attributed_test:
            member = next((m for m in members if m.name == diagnostic.attributed_test), None)
        primary = primary_type(suite_file.source, adapter, suite_file.class_name)
        primary_name = declared_name(primary) if primary is not None else ""
        if member is None or (member.kind == MEMBER_TYPE and member.top_level and member.name == primary_name):
            condemned_files.setdefault(suite_file.relative_path, diagnostic.render())
            continue
        if member.kind == MEMBER_METHOD and member.owner != primary_name:
            # A broken method of a helper type takes the helper with it.
            owner = next((m for m in members if m.kind == MEMBER_TYPE and m.name == member.owner), None)
            member = owner or member
        spans = doomed.setdefault(suite_file.relative_path, {})
        spans.setdefault((member.start_byte, member.end_byte), (member, diagnostic.render()))

    for path, reason in sorted(condemned_files.items()):
        _drop_file(pruned, by_path[path], reason)

    for path, spans in sorted(doomed.items()):
        if path in condemned_files:
            continue
        suite_file = by_path[path]
        tests = [m for m in list_members(suite_file.source, adapter) if m.kind == MEMBER_TEST]
        for member, reason in spans.values():
            if member.kind == MEMBER_TEST:
                pruned.removed_non_compiling += _mark_removed(pruned, suite_file, [member.name], reason)
                continue
            if member.kind == MEMBER_TYPE:
                inner = [
                    t.name
                    for t in tests
                    if member.start_byte <= t.start_byte and t.end_byte <= member.end_byte
                ]
                pruned.removed_non_compiling += _mark_removed(pruned, suite_file, inner, reason)
            pruned.removed_helpers += 1
        source = remove_members(suite_file.source, [member for member, _ in spans.values()])
        pruned.files = [
            suite_file.replace(source) if f.relative_path == path else f for f in pruned.files
        ]
        _LOGGER.debug("Pruned %s members from %s", len(spans), path)
    return pruned


def classify_failures(verdicts: list[TestVerdict]) -> tuple[int, int, int]:
    """Return ``(n_generated, n_non_compiling, n_non_passing)``."""
    n_non_compiling = sum(1 for v in verdicts if v.status == STATUS_NOT_COMPILED)
    n_non_passing = sum(1 for v in verdicts if v.status == STATUS_FAILED)
    return len(verdicts), n_non_compiling, n_non_passing


def detect_extra_content(
    artifact: TestSuiteArtifact,
    project_model: "ProjectModel",
    adapter: Optional[JavaAdapter] = None,
) -> ExtraContentStats:
    """Count helper classes, interfaces and production look-alikes."""
    adapter = adapter or _default_adapter()
    production = project_model.production_type_names()
    stats = ExtraContentStats()
    for suite_file in artifact.files:
        stats.files_total += 1
        root = adapter.parse(suite_file.source).root_node
        primary = primary_type(suite_file.source, adapter, suite_file.class_name)
        found = False
        for node, _ in iter_types(root):
            if primary is not None and node.id == primary.id:
                continue
            if any(annotation_names(child) & adapter.test_markers for child in body_members(node)):
                continue
            found = True
            if node.type in INTERFACE_DECLARATIONS:
                stats.additional_interfaces += 1
            else:
                stats.additional_classes += 1
                if is_empty_body(node):
                    stats.empty_placeholder_classes += 1
            if declared_name(node) in production:
                stats.overriding_classes += 1
        if found:
            stats.files_with_extra += 1
    return stats


async def finalize(
    toolchain: "Toolchain",
    workspace: "Workspace",
    artifact: TestSuiteArtifact,
    prune_rounds: int = DEFAULT_PRUNE_ROUNDS,
) -> TestSuiteArtifact:
    """Prune until the files compile, run them and record every verdict.

    Pruning is repeated with recompilation up to ``prune_rounds`` times;
    after that, files that still fail are dropped whole.
    """
    adapter = toolchain.adapter
    artifact.extra_content = detect_extra_content(artifact, workspace.project, adapter)

    diagnostics = await toolchain.compile(workspace, artifact.files)
    rounds = 0
    while diagnostics and rounds < prune_rounds:
        artifact = prune_non_compiling(artifact, diagnostics, adapter)
        rounds += 1
        diagnostics = await toolchain.compile(workspace, artifact.files)
    if diagnostics:
        _LOGGER.warning(
            "%s still fails to compile after %s prune rounds, dropping files", artifact.unit_id, rounds
        )
        reason = render_diagnostics(diagnostics)
        paths = {d.file for d in diagnostics}
        for suite_file in list(artifact.files):
            if "" in paths or suite_file.relative_path in paths:
                _drop_file(artifact, suite_file, reason)
        diagnostics = await toolchain.compile(workspace, artifact.files)
        if diagnostics:
            for suite_file in list(artifact.files):
                _drop_file(artifact, suite_file, reason)

    verdicts = await toolchain.run_tests(workspace, artifact.files)
    reported = {v.test_id: v for v in verdicts}
    final: list[TestVerdict] = []
    for suite_file in artifact.files:
        for name in declared_test_names(suite_file.source, adapter):
            test_id = f"{suite_file.base_class_name}.{name}"
            verdict = reported.get(test_id)
            if verdict is None:
                verdict = TestVerdict(
                    suite_file.relative_path,
                    suite_file.base_class_name,
                    name,
                    STATUS_FAILED,
                    "no verdict reported by the test runner",
                )
            final.append(verdict)
    for test_id, (path, reason) in sorted(artifact.not_compiled.items()):
        test_class, _, name = test_id.partition(".")
        final.append(TestVerdict(path, test_class, name, STATUS_NOT_COMPILED, reason))
    artifact.per_test_verdicts = final

    n_generated, n_non_compiling, n_non_passing = classify_failures(final)
    if n_generated != artifact.n_generated:
        _LOGGER.warning(
            "%s: %s verdicts for %s generated tests", artifact.unit_id, n_generated, artifact.n_generated
        )
    _LOGGER.debug(
        "%s finalized: %s generated, %s not compiling, %s failing, %s passing",
        artifact.unit_id,
        n_generated,
        n_non_compiling,
        n_non_passing,
        n_generated - n_non_compiling - n_non_passing,
    )
    return artifact
