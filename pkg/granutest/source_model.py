"""Discovery of the units under test (containers, methods, constructors)."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .const import CONSTRUCTOR_SENTINEL
from .exceptions import EmptyProjectError, InputError
from .languages import (
    CONSTRUCTOR_DECLARATIONS,
    INTERFACE_DECLARATIONS,
    METHOD_DECLARATIONS,
    JavaAdapter,
    body_members,
    count_branches,
    declared_name,
    get_adapter,
    has_modifier,
    iter_types,
    node_text,
    signature_of,
    type_variable_bounds,
)

_LOGGER = logging.getLogger(__name__)

KIND_CLASS = "class"
KIND_ABSTRACT_CLASS = "abstract_class"
KIND_INTERFACE = "interface"
KIND_ENUM = "enum"
KIND_RECORD = "record"


@dataclass(frozen=True)
class MethodUnit:
    """A method (or declared constructor) of a container."""

    container_id: str
    name: str
    signature: str
    body_span: tuple[int, int]
    branch_count: int
    start_line: int
    end_line: int
    # (name, first bound) of type variables in scope, method-level shadowing class-level.
    type_variables: tuple[tuple[str, str], ...] = ()

    @property
    def unit_id(self) -> str:
        """Return the id used for sessions, artifacts and coverage lookup."""
        return f"{self.container_id}#{self.signature}"

    def as_dict(self) -> dict[str, Any]:
        """Return the inventory representation."""
        data: dict[str, Any] = {
            "name": self.name,
            "signature": self.signature,
            "body_span": list(self.body_span),
            "branch_count": self.branch_count,
            "start_line": self.start_line,
            "end_line": self.end_line,
        }
        if self.type_variables:
            data["type_variables"] = dict(self.type_variables)
        return data


@dataclass(frozen=True)
class ContainerUnit:
    """A class-like declaration: the class under test at class level."""

    id: str
    qualified_name: str
    simple_name: str
    package: str
    kind: str
    source_text: str
    source_path: str
    methods: tuple[MethodUnit, ...]
    constructors: tuple[MethodUnit, ...] = ()

    @property
    def has_constructor(self) -> bool:
        """Return True iff at least one constructor is declared."""
        return len(self.constructors) > 0

    @property
    def constructor_unit_id(self) -> str:
        """Return the unit id of the constructor pass."""
        return f"{self.id}#{CONSTRUCTOR_SENTINEL}"

    @property
    def is_abstract(self) -> bool:
        """Return True for interfaces and abstract classes."""
        return self.kind in (KIND_INTERFACE, KIND_ABSTRACT_CLASS)

    def method_names(self) -> list[str]:
        """Return the distinct method names in source order."""
        return list(dict.fromkeys(method.name for method in self.methods))

    def as_dict(self) -> dict[str, Any]:
        """Return the inventory representation."""
        return {
            "id": self.id,
            "qualified_name": self.qualified_name,
            "kind": self.kind,
            "source_path": self.source_path,
            "has_constructor": self.has_constructor,
            "constructors": [c.as_dict() for c in self.constructors],
            "methods": [m.as_dict() for m in self.methods],
        }


@dataclass(frozen=True)
class ProjectModel:
    """Every container of a project, sorted by qualified name."""

    root_path: Path
    language_id: str
    containers: tuple[ContainerUnit, ...] = field(default_factory=tuple)

    @property
    def name(self) -> str:
        """Return the project directory name."""
        return self.root_path.name

    @property
    def mut_count(self) -> int:
        """Return the number of methods under test."""
        return sum(len(container.methods) for container in self.containers)

    def container(self, container_id: str) -> ContainerUnit:
        """Return a container by id."""
        for container in self.containers:
            if container.id == container_id:
                return container
        raise InputError(f"Unknown container: {container_id}")

    def production_type_names(self) -> set[str]:
        """Return the simple names of every production type."""
        return {container.simple_name for container in self.containers}

    def to_json(self) -> str:
        """Serialize the inventory (``units.json``)."""
        return json.dumps(
            {
                "language_id": self.language_id,
                "containers": [c.as_dict() for c in self.containers],
            },
            indent=2,
            sort_keys=True,
        )

    def fingerprint(self) -> str:
        """Return a digest identifying the unit inventory."""
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


def has_constructor(container: ContainerUnit) -> bool:
    """Return True iff the container declares at least one constructor."""
    return container.has_constructor


def _char_offset(source: bytes, start: int, end: int) -> int:
    return len(source[start:end].decode("utf-8", errors="replace"))


def _kind_of(node) -> str:
    if node.type in INTERFACE_DECLARATIONS:
        return KIND_INTERFACE
    if node.type == "enum_declaration":
        return KIND_ENUM
    if node.type == "record_declaration":
        return KIND_RECORD
    if has_modifier(node, "abstract"):
        return KIND_ABSTRACT_CLASS
    return KIND_CLASS


def _package_of(root) -> str:
    for child in root.named_children:
        if child.type == "package_declaration":
            for part in child.named_children:
                if part.type in ("scoped_identifier", "identifier"):
                    return node_text(part)
    return ""


def parse_source_file(
    adapter: JavaAdapter, source: bytes, relative_path: str
) -> list[ContainerUnit]:
    """Extract the containers declared in one source file."""
    tree = adapter.parse(source)
    root = tree.root_node
    if root.has_error:
        _LOGGER.warning("Syntax errors in %s, extracting recoverable units", relative_path)
    package = _package_of(root)
    containers: list[ContainerUnit] = []

    for node, outer in iter_types(root):
        simple_name = declared_name(node)
        if not simple_name:
            continue
        dotted = ".".join(outer + (simple_name,))
        qualified_name = f"{package}.{dotted}" if package else dotted
        start = node.start_byte
        class_variables = type_variable_bounds(node)

        methods: list[MethodUnit] = []
        constructors: list[MethodUnit] = []
        seen: set[str] = set()
        for member in body_members(node):
            if member.type not in METHOD_DECLARATIONS | CONSTRUCTOR_DECLARATIONS:
                continue
            signature = signature_of(member)
            if signature in seen:
                _LOGGER.warning("Duplicate signature %s in %s", signature, qualified_name)
                continue
            seen.add(signature)
            span_start = _char_offset(source, start, member.start_byte)
            span_end = span_start + _char_offset(source, member.start_byte, member.end_byte)
            unit = MethodUnit(
                container_id=qualified_name,
                name=declared_name(member),
                signature=signature,
                body_span=(span_start, span_end),
                branch_count=count_branches(member),
                start_line=member.start_point[0] + 1,
                end_line=member.end_point[0] + 1,
                type_variables=tuple({**class_variables, **type_variable_bounds(member)}.items()),
            )
            if member.type in CONSTRUCTOR_DECLARATIONS:
                constructors.append(unit)
            else:
                methods.append(unit)

        containers.append(
            ContainerUnit(
                id=qualified_name,
                qualified_name=qualified_name,
                simple_name=simple_name,
                package=package,
                kind=_kind_of(node),
                source_text=source[node.start_byte : node.end_byte].decode("utf-8", errors="replace"),
                source_path=relative_path,
                methods=tuple(methods),
                constructors=tuple(constructors),
            )
        )
    return containers


def iter_source_files(root_path: Path, adapter: JavaAdapter) -> list[Path]:
    """Return the production source files of a project, sorted."""
    files = []
    for path in sorted(root_path.rglob(f"*{adapter.suffix}")):
        relative = path.relative_to(root_path)
        if any(part.startswith(".") or part in adapter.ignored_dirs for part in relative.parts):
            continue
        if adapter.is_test_path(relative.as_posix()):
            continue
        files.append(path)
    return files


def discover_units(root_path: Path | str, language_id: str) -> ProjectModel:
    """Parse a project and enumerate every container with its methods.

    Args:
        root_path: Project root directory
        language_id: Id of the target-language adapter

    Returns:
        ProjectModel with containers sorted by qualified name

    Raises:
        InputError: If the root path does not exist
        EmptyProjectError: If no source file is recognized
    """
    root_path = Path(root_path).resolve()
    if not root_path.is_dir():
        raise InputError(f"Project root not found: {root_path}")
    adapter = get_adapter(language_id)

    files = iter_source_files(root_path, adapter)
    if not files:
        raise EmptyProjectError(f"No {adapter.suffix} sources under {root_path}")

    containers: dict[str, ContainerUnit] = {}
    for path in files:
        relative = path.relative_to(root_path).as_posix()
        for container in parse_source_file(adapter, path.read_bytes(), relative):
            if container.qualified_name in containers:
                _LOGGER.warning(
                    "Duplicate type %s in %s, keeping %s",
                    container.qualified_name,
                    relative,
                    containers[container.qualified_name].source_path,
                )
                continue
            containers[container.qualified_name] = container

    ordered = tuple(containers[name] for name in sorted(containers))
    model = ProjectModel(root_path=root_path, language_id=language_id, containers=ordered)
    _LOGGER.info(
        "Discovered %s containers and %s methods in %s",
        len(model.containers),
        model.mut_count,
        root_path,
    )
    return model
