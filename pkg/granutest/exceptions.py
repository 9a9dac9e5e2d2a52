"""Exceptions raised by granutest."""


class GranutestError(Exception):
    """Base class for every granutest error."""


class InputError(GranutestError):
    """Raised when user input is invalid (missing path, unknown method, ...)."""


class EmptyProjectError(InputError):
    """Raised when a project contains no recognized source files."""


class ConfigurationError(GranutestError):
    """Raised when the configuration fails validation."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class BackendError(GranutestError):
    """Raised when the LLM backend rejects a request."""

    def __init__(self, message, status_code=None):
        super().__init__(message)
        self.status_code = status_code


class BackendUnavailableError(BackendError):
    """Raised when every retry of a chat completion failed."""

    def __init__(self, message, attempts=0, status_code=None):
        super().__init__(message, status_code=status_code)
        self.attempts = attempts


class ReplayDesyncError(BackendError):
    """Raised when a replay transcript does not match the conversation."""

    def __init__(self, message, session_id=None, seq=None):
        super().__init__(message)
        self.session_id = session_id
        self.seq = seq


class ToolchainError(GranutestError):
    """Base class for toolchain failures that are not test outcomes."""


class ToolchainEnvironmentError(ToolchainError):
    """Raised when a toolchain binary is missing or unusable."""


class ToolchainTimeoutError(ToolchainError):
    """Raised when a toolchain operation exceeds its time budget."""


class RunnerCrashError(ToolchainError):
    """Raised when the test runner dies instead of reporting verdicts."""


class CoverageUnavailableError(ToolchainError):
    """Raised when coverage could not be collected."""


class SimulatorDesyncError(ToolchainError):
    """Raised when a simulator script has no answer for a query."""


class UnfixableSourceError(GranutestError):
    """Raised when generated source cannot be recovered to top-level declarations."""


class UndefinedRateError(GranutestError):
    """Raised when a rate is requested over zero generated tests."""
