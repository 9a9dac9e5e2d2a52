"""Generation and repair prompts."""
from __future__ import annotations

import logging
from dataclasses import dataclass, fields
from string import Formatter
from typing import Union

from .const import (
    CLASS_PROMPT_TEMPLATE,
    CLASS_TEST_NAME_PATTERN,
    CONSTRUCTOR_PROMPT_TEMPLATE,
    CONSTRUCTOR_SENTINEL,
    CONSTRUCTOR_TEST_NAME_PATTERN,
    DEFAULT_FRAMEWORK_LABEL,
    DIAGNOSTIC_CAP,
    DIAGNOSTIC_HEAD_SHARE,
    METHOD_PROMPT_TEMPLATE,
    METHOD_TEST_NAME_PATTERN,
    PLACEHOLDER_CLASS_CONTENT,
    PLACEHOLDER_ERRORS,
    PLACEHOLDER_FRAMEWORK,
    PLACEHOLDER_METHOD,
    PLACEHOLDER_TEST_CLASS,
    REPAIR_PROMPT_TEMPLATE,
    TRUNCATION_MARKER,
)
from .exceptions import ConfigurationError, InputError
from .source_model import ContainerUnit, MethodUnit

_LOGGER = logging.getLogger(__name__)

# Placeholders each template must use, no more and no fewer.
TEMPLATE_PLACEHOLDERS: dict[str, frozenset[str]] = {
    "class_template": frozenset({PLACEHOLDER_FRAMEWORK, PLACEHOLDER_CLASS_CONTENT}),
    "method_template": frozenset(
        {
            PLACEHOLDER_FRAMEWORK,
            PLACEHOLDER_METHOD,
            PLACEHOLDER_TEST_CLASS,
            PLACEHOLDER_CLASS_CONTENT,
        }
    ),
    "constructor_template": frozenset(
        {PLACEHOLDER_FRAMEWORK, PLACEHOLDER_TEST_CLASS, PLACEHOLDER_CLASS_CONTENT}
    ),
    "repair_template": frozenset({PLACEHOLDER_ERRORS}),
}


def _placeholders(template: str) -> list[str]:
    return [name for _, name, _, _ in Formatter().parse(template) if name is not None]


@dataclass(frozen=True)
class PromptTemplateSet:
    """The four prompt templates plus the framework named in them."""

    class_template: str = CLASS_PROMPT_TEMPLATE
    method_template: str = METHOD_PROMPT_TEMPLATE
    constructor_template: str = CONSTRUCTOR_PROMPT_TEMPLATE
    repair_template: str = REPAIR_PROMPT_TEMPLATE
    test_framework_label: str = DEFAULT_FRAMEWORK_LABEL
    class_test_name_pattern: str = CLASS_TEST_NAME_PATTERN
    method_test_name_pattern: str = METHOD_TEST_NAME_PATTERN
    constructor_test_name_pattern: str = CONSTRUCTOR_TEST_NAME_PATTERN
    diagnostic_cap: int = DIAGNOSTIC_CAP

    def __post_init__(self):
        for item in fields(self):
            expected = TEMPLATE_PLACEHOLDERS.get(item.name)
            if expected is None:
                continue
            template = getattr(self, item.name)
            if not template or not template.strip():
                raise ConfigurationError(f"Prompt template {item.name} is empty", key=f"prompts.{item.name}")
            try:
                found = _placeholders(template)
            except ValueError as err:
                raise ConfigurationError(
                    f"Prompt template {item.name} is malformed: {err}", key=f"prompts.{item.name}"
                ) from err
            if set(found) != expected:
                raise ConfigurationError(
                    f"Prompt template {item.name} must use exactly {sorted(expected)}, "
                    f"found {sorted(set(found))}",
                    key=f"prompts.{item.name}",
                )
            if PLACEHOLDER_CLASS_CONTENT in expected and found.count(PLACEHOLDER_CLASS_CONTENT) != 1:
                raise ConfigurationError(
                    f"Prompt template {item.name} must embed the class content once",
                    key=f"prompts.{item.name}",
                )
        if self.diagnostic_cap <= len(TRUNCATION_MARKER):
            raise ConfigurationError("Diagnostic cap is too small", key="prompts.diagnostic_cap")


DEFAULT_TEMPLATES = PromptTemplateSet()


def class_token(container: ContainerUnit) -> str:
    """Return the container name used in test class names (nesting flattened)."""
    name = container.qualified_name
    if container.package:
        name = name[len(container.package) + 1 :]
    return name.replace(".", "_")


def required_test_class_name(
    container: ContainerUnit,
    method: Union[MethodUnit, str, None] = None,
    templates: PromptTemplateSet = DEFAULT_TEMPLATES,
) -> str:
    """Return the required test class name for a generation unit.

    ``None`` selects the class-level name, the constructor sentinel the
    constructor pass. Overloads after the first get a numeric suffix on the
    method token so every method unit owns a distinct test class.
    """
    token = class_token(container)
    if method is None:
        return templates.class_test_name_pattern.format(**{"class": token})
    if isinstance(method, str):
        if method == CONSTRUCTOR_SENTINEL:
            return templates.constructor_test_name_pattern.format(**{"class": token})
        return templates.method_test_name_pattern.format(**{"class": token, "method": method})
    names = method_test_class_names(container, templates)
    if method.unit_id in names:
        return names[method.unit_id]
    return templates.method_test_name_pattern.format(**{"class": token, "method": method.name})


def method_test_class_names(
    container: ContainerUnit, templates: PromptTemplateSet = DEFAULT_TEMPLATES
) -> dict[str, str]:
    """Map each method's unit id to a test class name unique within the container.

    The first method of a name keeps the plain token. Later overloads take
    the lowest free numeric suffix; a suffix is free when no declared method
    has that name and no earlier unit already rendered to the same class.
    """
    token = class_token(container)
    declared = set(container.method_names())
    taken = {
        templates.class_test_name_pattern.format(**{"class": token}),
        templates.constructor_test_name_pattern.format(**{"class": token}),
    }
    names: dict[str, str] = {}
    seen: set[str] = set()
    for unit in container.methods:
        candidate = unit.name if unit.name not in seen else None
        index = 1
        while True:
            if candidate is not None:
                rendered = templates.method_test_name_pattern.format(**{"class": token, "method": candidate})
                if rendered not in taken:
                    break
            index += 1
            candidate = f"{unit.name}{index}"
            if candidate in declared:
                candidate = None
        seen.add(unit.name)
        taken.add(rendered)
        names[unit.unit_id] = rendered
    return names


def build_class_prompt(
    container: ContainerUnit, templates: PromptTemplateSet = DEFAULT_TEMPLATES
) -> str:
    """Return the prompt asking for tests of a whole class."""
    if not container.source_text:
        raise InputError(f"Container {container.id} has no source text")
    return templates.class_template.format(
        framework=templates.test_framework_label,
        class_content=container.source_text,
    )


def build_method_prompt(
    container: ContainerUnit,
    method_name: str,
    test_class_name: str,
    templates: PromptTemplateSet = DEFAULT_TEMPLATES,
) -> str:
    """Return the prompt asking for tests of one method (or the constructors).

    Raises:
        InputError: If the method is not declared by the container
    """
    if not container.source_text:
        raise InputError(f"Container {container.id} has no source text")
    if method_name == CONSTRUCTOR_SENTINEL:
        return templates.constructor_template.format(
            framework=templates.test_framework_label,
            test_class_name=test_class_name,
            class_content=container.source_text,
        )
    if method_name not in container.method_names():
        raise InputError(f"Method {method_name} is not declared by {container.qualified_name}")
    return templates.method_template.format(
        framework=templates.test_framework_label,
        method=method_name,
        test_class_name=test_class_name,
        class_content=container.source_text,
    )


def truncate_diagnostics(diagnostics: str, cap: int = DIAGNOSTIC_CAP) -> str:
    """Cut diagnostics down to ``cap`` characters, keeping head and tail."""
    if len(diagnostics) <= cap:
        return diagnostics
    available = cap - len(TRUNCATION_MARKER)
    head = int(available * DIAGNOSTIC_HEAD_SHARE)
    tail = available - head
    _LOGGER.debug("Truncating %s characters of diagnostics to %s", len(diagnostics), cap)
    return diagnostics[:head] + TRUNCATION_MARKER + diagnostics[len(diagnostics) - tail :]


def build_repair_prompt(
    diagnostics: str, templates: PromptTemplateSet = DEFAULT_TEMPLATES
) -> str:
    """Return the correction request quoting the compiler or test output.

    Raises:
        ValueError: If there is nothing to repair
    """
    if not diagnostics or not diagnostics.strip():
        raise ValueError("Repair prompt needs non-empty diagnostics")
    return templates.repair_template.format(
        errors=truncate_diagnostics(diagnostics, templates.diagnostic_cap)
    )
