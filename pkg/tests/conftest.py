"""Fixtures for granutest tests."""
from __future__ import annotations

import json
import logging
import shutil
from pathlib import Path
from typing import Callable, Optional, Union

import pytest

from granutest import demo
from granutest.api import ChatGateway, Completion, TranscriptRecord
from granutest.exceptions import BackendError
from granutest.source_model import ProjectModel, discover_units

CALCULATOR = """package com.example;

public class Calculator {
    private final int precision;

    public Calculator(int precision) {
        if (precision < 0) {
            throw new IllegalArgumentException("precision must be >= 0");
        }
        this.precision = precision;
    }

    public int add(int a, int b) {
        return a + b;
    }

    public int divide(int a, int b) {
        if (b == 0) {
            throw new ArithmeticException("division by zero");
        }
        return a / b;
    }
}
"""

GREETER = """package com.example;

public class Greeter {
    public String greet(String name) {
        if (name == null || name.isEmpty()) {
            return "Hello, stranger!";
        }
        return "Hello, " + name + "!";
    }
}
"""

Reply = Union[str, Exception, Completion]


def write_java(root: Path, relative: str, source: str) -> Path:
    """Write a source file below a project root."""
    path = root / relative
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(source, encoding="utf-8")
    return path


def junit_class(
    name: str,
    tests: dict[str, str],
    package: Optional[str] = "com.example",
    extra: str = "",
) -> str:
    """Render a JUnit 5 test class with one method per ``tests`` entry."""
    header = f"package {package};\n\n" if package else ""
    body = "".join(
        f"\n    @Test\n    void {test}() {{\n        {statement}\n    }}\n"
        for test, statement in tests.items()
    )
    return (
        f"{header}import org.junit.jupiter.api.Test;\n"
        "import static org.junit.jupiter.api.Assertions.*;\n\n"
        f"public class {name} {{\n{body}}}\n{extra}"
    )


def fenced(*blocks: str) -> str:
    """Wrap code blocks the way chat models answer."""
    return "\n".join(f"```java\n{block}```\n" for block in blocks)


class ScriptedBackend:
    """Chat backend answering from per-session reply lists.

    A reply may be text, a Completion, or an exception to raise. A callable
    receives ``(session_id, seq, messages)`` and returns a reply.
    """

    def __init__(
        self,
        replies: Optional[dict[str, list[Reply]]] = None,
        default: Optional[Callable[[str, int, list], Reply]] = None,
        model: str = "gpt-4o-mini",
    ) -> None:
        self.replies = replies or {}
        self.default = default
        self.model = model
        self.calls: list[tuple[str, int, list]] = []
        self._served: dict[str, int] = {}

    async def complete(self, session_id, seq, messages, temperature):
        self.calls.append((session_id, seq, [dict(m) for m in messages]))
        index = self._served.get(session_id, 0)
        self._served[session_id] = index + 1
        queue = self.replies.get(session_id)
        if queue is not None and index < len(queue):
            reply = queue[index]
        elif self.default is not None:
            reply = self.default(session_id, seq, messages)
        elif queue:
            reply = queue[-1]
        else:
            raise BackendError(f"No scripted reply for {session_id}", status_code=400)
        if isinstance(reply, Exception):
            raise reply
        if isinstance(reply, Completion):
            return reply
        return Completion(text=reply, model=self.model)


@pytest.fixture(autouse=True)
def restore_logger():
    """Undo handlers and levels the CLI installs on the package logger."""
    logger = logging.getLogger("granutest")
    handlers, level, propagate = list(logger.handlers), logger.level, logger.propagate
    yield
    logger.handlers = handlers
    logger.setLevel(level)
    logger.propagate = propagate


@pytest.fixture
def demo_dir(tmp_path: Path) -> Path:
    """A writable copy of the bundled demo."""
    target = tmp_path / "demo"
    source = Path(demo.__file__).parent
    shutil.copytree(source, target, ignore=shutil.ignore_patterns("__init__.py", "__pycache__"))
    return target


@pytest.fixture
def demo_script(demo_dir: Path) -> dict:
    """The demo simulator script."""
    return json.loads((demo_dir / "toolchain.json").read_text(encoding="utf-8"))


@pytest.fixture
def demo_project(demo_dir: Path) -> ProjectModel:
    """The units of the demo project (Calculator and Greeter)."""
    return discover_units(demo_dir / "project", "java")


@pytest.fixture
def java_project(tmp_path: Path) -> Path:
    """A small Maven-layout project."""
    root = tmp_path / "calc"
    write_java(root, "src/main/java/com/example/Calculator.java", CALCULATOR)
    write_java(root, "src/main/java/com/example/Greeter.java", GREETER)
    return root


@pytest.fixture
def project_model(java_project: Path) -> ProjectModel:
    return discover_units(java_project, "java")


@pytest.fixture
def record() -> Callable[..., TranscriptRecord]:
    """Build transcript records."""

    def build(session_id: str, seq: int, text: str, model: str = "gpt-4o-mini", **kwargs):
        return TranscriptRecord(
            session_id=session_id,
            seq=seq,
            request_messages=kwargs.pop("request_messages", None),
            response_text=text,
            model=model,
            **kwargs,
        )

    return build


@pytest.fixture
def gateway_factory() -> Callable[..., ChatGateway]:
    """Gateways without backoff delay."""

    def build(backend, **kwargs) -> ChatGateway:
        kwargs.setdefault("retry_delay", 0)
        return ChatGateway(backend, **kwargs)

    return build

