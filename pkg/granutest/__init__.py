"""LLM unit-test generation at class, method, combined and hybrid granularity."""
from .const import VERSION

__version__ = VERSION
