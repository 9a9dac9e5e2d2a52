"""Constants for granutest."""
from typing import Final

# Tool information
DOMAIN: Final = "granutest"
VERSION: Final = "2025.1.0"

# Configuration sections
CONF_PROJECT: Final = "project"
CONF_BACKEND: Final = "backend"
CONF_PROMPTS: Final = "prompts"
CONF_LIMITS: Final = "limits"
CONF_ADAPTER: Final = "adapter"
CONF_METRICS: Final = "metrics"
CONF_LOGGING: Final = "logging"

DEFAULT_CONFIG_FILE: Final = "granutest.toml"
DEFAULT_API_KEY_ENV: Final = "GRANUTEST_API_KEY"
DEFAULT_OUTPUT_DIR: Final = "granutest-out"

# Granularity modes
MODE_CLASS_LEVEL: Final = "class_level"
MODE_METHOD_LEVEL: Final = "method_level"
MODE_COMBINED: Final = "combined"
MODE_HYBRID: Final = "hybrid"

MODES: Final = [MODE_CLASS_LEVEL, MODE_METHOD_LEVEL, MODE_COMBINED, MODE_HYBRID]

# Backend modes
BACKEND_LIVE: Final = "live"
BACKEND_REPLAY: Final = "replay"

# LLM defaults
DEFAULT_TEMPERATURE: Final = 0.1
DEFAULT_MODEL: Final = "gpt-4o-mini"
API_TIMEOUT: Final = 120  # seconds
MAX_RETRIES: Final = 3
RETRY_BASE_DELAY: Final = 2  # seconds, doubled on each attempt
MAX_REQUESTS_PER_MINUTE: Final = 0  # 0 disables the limiter
RETRYABLE_STATUS_CODES: Final[frozenset[int]] = frozenset({429, 500, 502, 503, 504})
FINISH_REASON_LENGTH: Final = "length"

# Chat roles
ROLE_SYSTEM: Final = "system"
ROLE_USER: Final = "user"
ROLE_ASSISTANT: Final = "assistant"

# Generation loop limits
DEFAULT_REPAIR_LIMIT: Final = 5
DEFAULT_WORKERS: Final = 4
DEFAULT_PRUNE_ROUNDS: Final = 3
COMPILE_TIMEOUT: Final = 300  # seconds
TEST_TIMEOUT: Final = 60  # seconds, per test

# Prompt defaults
DEFAULT_FRAMEWORK_LABEL: Final = "Java and Junit5"
DIAGNOSTIC_CAP: Final = 8000  # characters
DIAGNOSTIC_HEAD_SHARE: Final = 0.75
TRUNCATION_MARKER: Final = "\n... [truncated] ...\n"
CONSTRUCTOR_SENTINEL: Final = "<init>"

PLACEHOLDER_FRAMEWORK: Final = "framework"
PLACEHOLDER_CLASS_CONTENT: Final = "class_content"
PLACEHOLDER_METHOD: Final = "method"
PLACEHOLDER_TEST_CLASS: Final = "test_class_name"
PLACEHOLDER_ERRORS: Final = "errors"

CLASS_PROMPT_TEMPLATE: Final = (
    "The following class is missing unit tests. Please generate all tests "
    "needed to achieve 100% code coverage using {framework}. Return only the code"
    "\n\n{class_content}"
)
METHOD_PROMPT_TEMPLATE: Final = (
    "The following class is missing unit tests for method {method}. Please "
    "generate all tests needed to achieve 100% code coverage for method "
    "{method}, using {framework}.\n"
    "The name of the generated test class must be {test_class_name}. "
    "Return only the code\n\n{class_content}"
)
CONSTRUCTOR_PROMPT_TEMPLATE: Final = (
    "The following class is missing unit tests for the constructors of the "
    "class. Please generate all tests needed to achieve 100% code coverage "
    "for the constructors of the class, using {framework}.\n"
    "The name of the generated test class must be {test_class_name}. "
    "Return only the code\n\n{class_content}"
)
REPAIR_PROMPT_TEMPLATE: Final = (
    "The tests you generated produced the following errors. Fix the tests "
    "and return only the corrected code:\n{errors}"
)

CLASS_TEST_NAME_PATTERN: Final = "{class}Test"
METHOD_TEST_NAME_PATTERN: Final = "{class}_{method}_Test"
CONSTRUCTOR_TEST_NAME_PATTERN: Final = "{class}_Constructor_Test"

# Combined suites
COMBINE_SUFFIX_CLASS: Final = "_c"
COMBINE_SUFFIX_METHOD: Final = "_m"

# Session id prefixes
SESSION_CLASS: Final = "class"
SESSION_METHOD: Final = "method"
SESSION_CONSTRUCTOR: Final = "constructor"

# Adapters
LANGUAGE_JAVA: Final = "java"
TOOLCHAIN_SIMULATED: Final = "simulated"
TOOLCHAIN_MAVEN: Final = "maven"

# Test verdicts
STATUS_PASSED: Final = "passed"
STATUS_FAILED: Final = "failed"
STATUS_NOT_COMPILED: Final = "not_compiled"

# Diagnostic kinds
DIAG_COMPILE_ERROR: Final = "compile_error"
DIAG_NAME_MISMATCH: Final = "name_mismatch"
DIAG_IMPORT_ERROR: Final = "import_error"
DIAG_OTHER: Final = "other"

# Statistics
SIGNIFICANCE_LEVEL: Final = 0.05
EXACT_MWU_MAX_PRODUCT: Final = 400
SIGNIFICANCE_UNIT_PROJECT: Final = "project"
SIGNIFICANCE_UNIT_CLASS: Final = "class"

# Output files
FILE_RUN: Final = "run.json"
FILE_TRANSCRIPT: Final = "transcript.jsonl"
FILE_UNITS: Final = "units.json"
FILE_SANITIZER_REPORT: Final = "sanitizer_report.json"
FILE_REPORT_JSON: Final = "report.json"
FILE_REPORT_MD: Final = "report.md"
FILE_REPORT_CSV: Final = "report.csv"
DIR_TESTS: Final = "tests"
DIR_UNITS: Final = "units"

# Values stripped from run.json before it is written
TO_REDACT: Final = {"api_key", "authorization", "Authorization"}

# CLI exit codes
EXIT_OK: Final = 0
EXIT_FAILURE: Final = 1
EXIT_USAGE: Final = 2
