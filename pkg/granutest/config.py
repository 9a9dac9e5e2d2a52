"""Run configuration from TOML files, CLI flags and schema defaults."""
from __future__ import annotations

import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional

import voluptuous as vol  # type: ignore

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .const import (
    API_TIMEOUT,
    BACKEND_LIVE,
    BACKEND_REPLAY,
    CONF_ADAPTER,
    CONF_BACKEND,
    CONF_LIMITS,
    CONF_LOGGING,
    CONF_METRICS,
    CONF_PROJECT,
    CONF_PROMPTS,
    COMPILE_TIMEOUT,
    DEFAULT_API_KEY_ENV,
    DEFAULT_CONFIG_FILE,
    DEFAULT_MODEL,
    DEFAULT_OUTPUT_DIR,
    DEFAULT_PRUNE_ROUNDS,
    DEFAULT_REPAIR_LIMIT,
    DEFAULT_TEMPERATURE,
    DEFAULT_WORKERS,
    LANGUAGE_JAVA,
    MAX_REQUESTS_PER_MINUTE,
    MAX_RETRIES,
    MODE_HYBRID,
    MODES,
    RETRY_BASE_DELAY,
    SIGNIFICANCE_UNIT_CLASS,
    SIGNIFICANCE_UNIT_PROJECT,
    TEST_TIMEOUT,
    TO_REDACT,
    TOOLCHAIN_MAVEN,
    TOOLCHAIN_SIMULATED,
)
from .exceptions import ConfigurationError
from .prompts import PromptTemplateSet

_LOGGER = logging.getLogger(__name__)

LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]
DEFAULT_ENDPOINT = "https://api.openai.com/v1"

_POSITIVE = vol.All(vol.Coerce(float), vol.Range(min=0))
_COUNT = vol.All(int, vol.Range(min=0))

PROJECT_SCHEMA = vol.Schema(
    {
        vol.Optional("root", default="."): str,
        vol.Optional("mode", default=MODE_HYBRID): vol.In(MODES),
        vol.Optional("output_dir", default=DEFAULT_OUTPUT_DIR): str,
        vol.Optional("language", default=LANGUAGE_JAVA): vol.In([LANGUAGE_JAVA]),
        vol.Optional("skip_abstract", default=False): bool,
    }
)

BACKEND_SCHEMA = vol.Schema(
    {
        vol.Optional("kind", default=BACKEND_LIVE): vol.In([BACKEND_LIVE, BACKEND_REPLAY]),
        vol.Optional("endpoint", default=DEFAULT_ENDPOINT): vol.Url(),
        vol.Optional("model", default=DEFAULT_MODEL): vol.All(str, vol.Length(min=1)),
        vol.Optional("api_key_env", default=DEFAULT_API_KEY_ENV): vol.All(str, vol.Length(min=1)),
        vol.Optional("transcript"): str,
        vol.Optional("system_message"): vol.All(str, vol.Length(min=1)),
        vol.Optional("temperature", default=DEFAULT_TEMPERATURE): vol.All(
            vol.Coerce(float), vol.Range(min=0, max=2)
        ),
        vol.Optional("timeout", default=API_TIMEOUT): _POSITIVE,
        vol.Optional("max_retries", default=MAX_RETRIES): _COUNT,
        vol.Optional("retry_delay", default=RETRY_BASE_DELAY): _POSITIVE,
        vol.Optional("requests_per_minute", default=MAX_REQUESTS_PER_MINUTE): _COUNT,
    }
)

PROMPTS_SCHEMA = vol.Schema(
    {
        vol.Optional("class_template"): str,
        vol.Optional("method_template"): str,
        vol.Optional("constructor_template"): str,
        vol.Optional("repair_template"): str,
        vol.Optional("test_framework_label"): str,
        vol.Optional("class_test_name_pattern"): str,
        vol.Optional("method_test_name_pattern"): str,
        vol.Optional("constructor_test_name_pattern"): str,
        vol.Optional("diagnostic_cap"): vol.All(int, vol.Range(min=100)),
    }
)

LIMITS_SCHEMA = vol.Schema(
    {
        vol.Optional("repair_limit", default=DEFAULT_REPAIR_LIMIT): _COUNT,
        vol.Optional("workers", default=DEFAULT_WORKERS): vol.All(int, vol.Range(min=1)),
        vol.Optional("prune_rounds", default=DEFAULT_PRUNE_ROUNDS): _COUNT,
    }
)

ADAPTER_SCHEMA = vol.Schema(
    {
        vol.Optional("toolchain", default=TOOLCHAIN_MAVEN): vol.In([TOOLCHAIN_MAVEN, TOOLCHAIN_SIMULATED]),
        vol.Optional("script"): str,
        vol.Optional("executable", default="mvn"): str,
        vol.Optional("compile_timeout", default=COMPILE_TIMEOUT): _POSITIVE,
        vol.Optional("test_timeout", default=TEST_TIMEOUT): _POSITIVE,
        vol.Optional("extra_args", default=[]): [str],
    }
)

METRICS_SCHEMA = vol.Schema(
    {
        vol.Optional("mutation", default=True): bool,
        vol.Optional("significance_unit", default=SIGNIFICANCE_UNIT_PROJECT): vol.In(
            [SIGNIFICANCE_UNIT_PROJECT, SIGNIFICANCE_UNIT_CLASS]
        ),
    }
)

LOGGING_SCHEMA = vol.Schema(
    {vol.Optional("level", default="INFO"): vol.All(str, vol.Upper, vol.In(LOG_LEVELS))}
)

CONFIG_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_PROJECT, default={}): PROJECT_SCHEMA,
        vol.Optional(CONF_BACKEND, default={}): BACKEND_SCHEMA,
        vol.Optional(CONF_PROMPTS, default={}): PROMPTS_SCHEMA,
        vol.Optional(CONF_LIMITS, default={}): LIMITS_SCHEMA,
        vol.Optional(CONF_ADAPTER, default={}): ADAPTER_SCHEMA,
        vol.Optional(CONF_METRICS, default={}): METRICS_SCHEMA,
        vol.Optional(CONF_LOGGING, default={}): LOGGING_SCHEMA,
    }
)

# Keys holding paths, resolved against the directory of the file naming them.
PATH_KEYS = {
    CONF_PROJECT: ("root", "output_dir"),
    CONF_BACKEND: ("transcript",),
    CONF_ADAPTER: ("script",),
}


@dataclass(frozen=True)
class LlmBackendConfig:
    """Where completions come from."""

    kind: str = BACKEND_LIVE
    endpoint: str = DEFAULT_ENDPOINT
    model: str = DEFAULT_MODEL
    api_key_env: str = DEFAULT_API_KEY_ENV
    transcript: Optional[Path] = None
    timeout: float = API_TIMEOUT
    max_retries: int = MAX_RETRIES
    retry_delay: float = RETRY_BASE_DELAY
    requests_per_minute: int = MAX_REQUESTS_PER_MINUTE
    system_message: Optional[str] = None

    def api_key(self) -> str:
        """Read the API key from the configured environment variable.

        Raises:
            ConfigurationError: If the variable is unset for a live backend
        """
        key = os.environ.get(self.api_key_env, "")
        if self.kind == BACKEND_LIVE and not key:
            raise ConfigurationError(
                f"Environment variable {self.api_key_env} is not set", key="backend.api_key_env"
            )
        return key


@dataclass(frozen=True)
class AdapterConfig:
    """Which toolchain builds and measures the tests."""

    toolchain: str = TOOLCHAIN_MAVEN
    script: Optional[Path] = None
    executable: str = "mvn"
    compile_timeout: float = COMPILE_TIMEOUT
    test_timeout: float = TEST_TIMEOUT
    extra_args: tuple[str, ...] = ()


@dataclass(frozen=True)
class RunConfig:
    """Everything one ``generate`` invocation needs."""

    project_root: Path
    mode: str = MODE_HYBRID
    language: str = LANGUAGE_JAVA
    output_dir: Path = Path(DEFAULT_OUTPUT_DIR)
    skip_abstract: bool = False
    backend: LlmBackendConfig = field(default_factory=LlmBackendConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    templates: PromptTemplateSet = field(default_factory=PromptTemplateSet)
    temperature: float = DEFAULT_TEMPERATURE
    repair_limit: int = DEFAULT_REPAIR_LIMIT
    worker_bound: int = DEFAULT_WORKERS
    prune_rounds: int = DEFAULT_PRUNE_ROUNDS
    measure_mutation: bool = True
    significance_unit: str = SIGNIFICANCE_UNIT_PROJECT
    log_level: str = "INFO"
    sections: Mapping[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.repair_limit < 0:
            raise ConfigurationError("repair_limit must be >= 0", key="limits.repair_limit")
        if self.worker_bound < 1:
            raise ConfigurationError("workers must be >= 1", key="limits.workers")

    def as_dict(self) -> dict[str, Any]:
        """Return the validated sections for ``run.json``, secrets removed."""
        return _redact(self.sections)


def _redact(data: Any) -> Any:
    if isinstance(data, Mapping):
        return {k: ("**REDACTED**" if k in TO_REDACT else _redact(v)) for k, v in data.items()}
    if isinstance(data, list):
        return [_redact(v) for v in data]
    return data


def _resolve_paths(sections: dict[str, Any], base: Path) -> dict[str, Any]:
    resolved = {
        name: dict(values) if isinstance(values, Mapping) else values
        for name, values in sections.items()
    }
    for section, keys in PATH_KEYS.items():
        for key in keys:
            values = resolved.get(section)
            value = values.get(key) if isinstance(values, dict) else None
            if value is not None:
                resolved[section][key] = str((base / Path(value)).resolve())
    return resolved


def _merge(base: Mapping[str, Any], overrides: Mapping[str, Mapping[str, Any]]) -> dict[str, Any]:
    merged = {
        name: dict(values) if isinstance(values, Mapping) else values
        for name, values in base.items()
    }
    for section, values in overrides.items():
        for key, value in values.items():
            if value is not None:
                merged.setdefault(section, {})[key] = value
    return merged


def validate_sections(raw: Mapping[str, Any]) -> dict[str, Any]:
    """Validate raw sections against the schema and fill in defaults.

    Raises:
        ConfigurationError: Naming the first offending key
    """
    try:
        return CONFIG_SCHEMA(dict(raw))
    except vol.Invalid as err:
        key = ".".join(str(part) for part in err.path) or None
        raise ConfigurationError(f"Invalid configuration at {key}: {err.msg}", key=key) from err


def read_config_file(path: Path) -> dict[str, Any]:
    """Load a TOML file with paths resolved against its directory.

    Raises:
        ConfigurationError: If the file cannot be read or parsed
    """
    path = Path(path)
    try:
        with path.open("rb") as f:
            raw = tomllib.load(f)
    except (OSError, tomllib.TOMLDecodeError) as err:
        raise ConfigurationError(f"Cannot read configuration {path}: {err}", key=str(path)) from err
    _LOGGER.debug("Loaded configuration file %s", path)
    return _resolve_paths(raw, path.parent)


def config_from_sections(sections: Mapping[str, Any]) -> RunConfig:
    """Build a RunConfig from validated (or raw) sections."""
    data = validate_sections(sections)
    project = data[CONF_PROJECT]
    backend = data[CONF_BACKEND]
    adapter = data[CONF_ADAPTER]
    limits = data[CONF_LIMITS]
    metrics = data[CONF_METRICS]

    if backend["kind"] == BACKEND_REPLAY and not backend.get("transcript"):
        raise ConfigurationError("The replay backend needs a transcript", key="backend.transcript")
    if adapter["toolchain"] == TOOLCHAIN_SIMULATED and not adapter.get("script"):
        raise ConfigurationError("The simulated toolchain needs a script", key="adapter.script")

    return RunConfig(
        project_root=Path(project["root"]),
        mode=project["mode"],
        language=project["language"],
        output_dir=Path(project["output_dir"]),
        skip_abstract=project["skip_abstract"],
        backend=LlmBackendConfig(
            kind=backend["kind"],
            endpoint=backend["endpoint"],
            model=backend["model"],
            api_key_env=backend["api_key_env"],
            transcript=Path(backend["transcript"]) if backend.get("transcript") else None,
            timeout=backend["timeout"],
            max_retries=backend["max_retries"],
            retry_delay=backend["retry_delay"],
            requests_per_minute=backend["requests_per_minute"],
            system_message=backend.get("system_message"),
        ),
        adapter=AdapterConfig(
            toolchain=adapter["toolchain"],
            script=Path(adapter["script"]) if adapter.get("script") else None,
            executable=adapter["executable"],
            compile_timeout=adapter["compile_timeout"],
            test_timeout=adapter["test_timeout"],
            extra_args=tuple(adapter["extra_args"]),
        ),
        templates=PromptTemplateSet(**data[CONF_PROMPTS]),
        temperature=backend["temperature"],
        repair_limit=limits["repair_limit"],
        worker_bound=limits["workers"],
        prune_rounds=limits["prune_rounds"],
        measure_mutation=metrics["mutation"],
        significance_unit=metrics["significance_unit"],
        log_level=data[CONF_LOGGING]["level"],
        sections=data,
    )


def load_config(
    path: Optional[Path] = None,
    overrides: Optional[Mapping[str, Mapping[str, Any]]] = None,
    cwd: Optional[Path] = None,
) -> RunConfig:
    """Merge flag overrides over a config file over schema defaults.

    Without an explicit ``path`` a ``granutest.toml`` in ``cwd`` is used when
    present. Override paths are resolved against ``cwd``.
    """
    cwd = Path(cwd or Path.cwd())
    sections: dict[str, Any] = {}
    if path is not None:
        sections = read_config_file(Path(path))
    elif (cwd / DEFAULT_CONFIG_FILE).is_file():
        sections = read_config_file(cwd / DEFAULT_CONFIG_FILE)
    flags = _resolve_paths({k: dict(v) for k, v in (overrides or {}).items()}, cwd)
    merged = _merge(sections, flags)
    project = merged.setdefault(CONF_PROJECT, {})
    project.setdefault("root", str(cwd))
    project.setdefault("output_dir", str(cwd / DEFAULT_OUTPUT_DIR))
    return config_from_sections(merged)
