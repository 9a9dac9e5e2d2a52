"""Target-language adapters.

An adapter knows how to parse one language with tree-sitter and which
declarations mean what: type declarations, constructors, test markers and
the framework imports generated tests need. Java/JUnit 5 is the shipped
adapter; other ecosystems register their own instance in ``ADAPTERS``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator

import tree_sitter_java as tsjava  # type: ignore
from tree_sitter import Language, Node, Parser, Tree  # type: ignore

from .const import DEFAULT_FRAMEWORK_LABEL, LANGUAGE_JAVA
from .exceptions import ConfigurationError

TYPE_DECLARATIONS = frozenset(
    {
        "class_declaration",
        "interface_declaration",
        "enum_declaration",
        "record_declaration",
        "annotation_type_declaration",
    }
)
INTERFACE_DECLARATIONS = frozenset({"interface_declaration", "annotation_type_declaration"})
METHOD_DECLARATIONS = frozenset({"method_declaration"})
CONSTRUCTOR_DECLARATIONS = frozenset(
    {"constructor_declaration", "compact_constructor_declaration"}
)
COMMENT_NODES = frozenset({"line_comment", "block_comment"})

# Each of these is one decision point with two outcomes.
DECISION_NODES = frozenset(
    {
        "if_statement",
        "while_statement",
        "for_statement",
        "enhanced_for_statement",
        "do_statement",
        "ternary_expression",
    }
)
SHORT_CIRCUIT_OPERATORS = frozenset({"&&", "||"})
# Nested bodies that belong to other (synthetic) methods.
BRANCH_BARRIERS = frozenset({"class_body", "lambda_expression"})


@dataclass(frozen=True)
class JavaAdapter:
    """Java sources, JUnit 5 tests."""

    language_id: str = LANGUAGE_JAVA
    suffix: str = ".java"
    framework_label: str = DEFAULT_FRAMEWORK_LABEL
    test_roots: tuple[str, ...] = ("src/test",)
    test_source_root: str = "src/test/java"
    ignored_dirs: frozenset[str] = frozenset({"target", "build", "out", "node_modules"})
    test_markers: frozenset[str] = frozenset(
        {"Test", "ParameterizedTest", "RepeatedTest", "TestFactory", "TestTemplate"}
    )
    test_import: str = "import org.junit.jupiter.api.Test;"
    test_import_prefixes: tuple[str, ...] = (
        "org.junit.jupiter.api.Test",
        "org.junit.jupiter.api.*",
    )
    assertion_import: str = "import static org.junit.jupiter.api.Assertions.*;"
    assertion_import_prefix: str = "org.junit.jupiter.api.Assertions"
    # Static imports that already supply assertEquals and friends.
    other_assertion_prefixes: tuple[str, ...] = (
        "org.junit.Assert.",
        "org.testng.Assert.",
        "junit.framework.Assert.",
    )
    assertion_calls: frozenset[str] = field(
        default_factory=lambda: frozenset(
            {
                "assertEquals",
                "assertNotEquals",
                "assertTrue",
                "assertFalse",
                "assertNull",
                "assertNotNull",
                "assertThrows",
                "assertSame",
                "assertNotSame",
                "assertArrayEquals",
                "assertDoesNotThrow",
                "assertAll",
                "fail",
            }
        )
    )

    @cached_property
    def language(self) -> Language:
        """Return the tree-sitter language."""
        return Language(tsjava.language())

    def parse(self, source: bytes | str) -> Tree:
        """Parse source text into a syntax tree."""
        if isinstance(source, str):
            source = source.encode("utf-8")
        return Parser(self.language).parse(source)

    def is_test_path(self, relative: str) -> bool:
        """Return True for files under the adapter's test roots."""
        return any(
            relative == root or relative.startswith(root + "/") for root in self.test_roots
        )


ADAPTERS: dict[str, JavaAdapter] = {LANGUAGE_JAVA: JavaAdapter()}


def get_adapter(language_id: str) -> JavaAdapter:
    """Return the registered adapter for a language id."""
    try:
        return ADAPTERS[language_id]
    except KeyError as err:
        raise ConfigurationError(
            f"Unknown language adapter: {language_id}", key="adapter.language"
        ) from err


# Syntax tree helpers shared by the source model and the sanitizer.


def node_text(node: Node) -> str:
    """Return the decoded text of a node."""
    return node.text.decode("utf-8")


def declared_name(node: Node) -> str:
    """Return the identifier a declaration introduces."""
    name = node.child_by_field_name("name")
    return node_text(name) if name is not None else ""


def modifiers_of(node: Node) -> Node | None:
    """Return the modifiers child of a declaration, if any."""
    for child in node.children:
        if child.type == "modifiers":
            return child
    return None


def annotation_names(node: Node) -> set[str]:
    """Return the simple names of the annotations on a declaration."""
    names: set[str] = set()
    modifiers = modifiers_of(node)
    if modifiers is None:
        return names
    for child in modifiers.named_children:
        if child.type in ("marker_annotation", "annotation"):
            name = child.child_by_field_name("name")
            if name is not None:
                names.add(node_text(name).rsplit(".", 1)[-1])
    return names


def has_modifier(node: Node, keyword: str) -> bool:
    """Return True if a declaration carries the given keyword modifier."""
    modifiers = modifiers_of(node)
    if modifiers is None:
        return False
    return any(child.type == keyword for child in modifiers.children)


def body_members(type_node: Node) -> list[Node]:
    """Return the member declarations of a type body, comments included."""
    body = type_node.child_by_field_name("body")
    if body is None:
        return []
    members: list[Node] = []
    for child in body.named_children:
        if child.type == "enum_body_declarations":
            members.extend(child.named_children)
        else:
            members.append(child)
    return members


def top_level_types(root: Node) -> list[Node]:
    """Return the type declarations directly under a compilation unit."""
    return [child for child in root.named_children if child.type in TYPE_DECLARATIONS]


def iter_types(root: Node) -> Iterator[tuple[Node, tuple[str, ...]]]:
    """Yield every named type declaration with its enclosing type names."""
    stack: list[tuple[Node, tuple[str, ...]]] = [
        (node, ()) for node in reversed(top_level_types(root))
    ]
    while stack:
        node, outer = stack.pop()
        yield node, outer
        path = outer + (declared_name(node),)
        nested = [m for m in body_members(node) if m.type in TYPE_DECLARATIONS]
        stack.extend((child, path) for child in reversed(nested))


def parameter_types(declaration: Node) -> list[str]:
    """Return the normalized parameter types of a method or constructor."""
    params = declaration.child_by_field_name("parameters")
    if params is None:
        return []
    types: list[str] = []
    for param in params.named_children:
        if param.type == "formal_parameter":
            type_node = param.child_by_field_name("type")
            text = node_text(type_node) if type_node is not None else ""
            dims = param.child_by_field_name("dimensions")
            if dims is not None:
                text += node_text(dims)
            types.append(" ".join(text.split()))
        elif param.type == "spread_parameter":
            type_node = next(
                (c for c in param.named_children if c.type not in ("modifiers", "variable_declarator")),
                None,
            )
            text = node_text(type_node) if type_node is not None else ""
            types.append(" ".join(text.split()) + "...")
    return types


def type_variable_bounds(declaration: Node) -> dict[str, str]:
    """Return each declared type variable with its first bound ("" if unbounded)."""
    params = declaration.child_by_field_name("type_parameters")
    if params is None:
        return {}
    bounds: dict[str, str] = {}
    for param in params.named_children:
        if param.type != "type_parameter":
            continue
        name = next((c for c in param.named_children if c.type in ("type_identifier", "identifier")), None)
        if name is None:
            continue
        bound = next((c for c in param.named_children if c.type == "type_bound"), None)
        first = bound.named_children[0] if bound is not None and bound.named_children else None
        bounds[node_text(name)] = " ".join(node_text(first).split()) if first is not None else ""
    return bounds


def signature_of(declaration: Node) -> str:
    """Return ``name(type, type)`` for a method or constructor."""
    if declaration.type == "compact_constructor_declaration":
        return f"{declared_name(declaration)}()"
    return f"{declared_name(declaration)}({', '.join(parameter_types(declaration))})"


def count_branches(declaration: Node) -> int:
    """Count branch outcomes in a method body from its syntax tree."""
    body = declaration.child_by_field_name("body")
    if body is None:
        return 0
    decisions = 0
    stack = list(body.named_children)
    while stack:
        node = stack.pop()
        if node.type in BRANCH_BARRIERS:
            continue
        if node.type in DECISION_NODES:
            decisions += 1
        elif node.type == "binary_expression":
            operator = node.child_by_field_name("operator")
            if operator is not None and operator.type in SHORT_CIRCUIT_OPERATORS:
                decisions += 1
        elif node.type == "switch_label" and not node_text(node).startswith("default"):
            decisions += 1
        stack.extend(node.named_children)
    return decisions * 2


def is_empty_body(type_node: Node) -> bool:
    """Return True if a type body declares nothing besides comments."""
    return all(member.type in COMMENT_NODES for member in body_members(type_node))
