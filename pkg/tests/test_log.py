"""Tests for JSON log output."""
import io
import json
import logging
import sys

from granutest.log import JsonLogFormatter, setup_logging


def test_records_are_json_lines():
    stream = io.StringIO()
    setup_logging("DEBUG", stream)
    logger = logging.getLogger("granutest.coordinator")
    logger.info("Unit %s: %s requests", "com.example.Calculator", 2, extra={"unit_id": "com.example.Calculator"})
    entry = json.loads(stream.getvalue().strip())
    assert entry["level"] == "INFO"
    assert entry["logger"] == "granutest.coordinator"
    assert entry["msg"] == "Unit com.example.Calculator: 2 requests"
    assert entry["unit_id"] == "com.example.Calculator"


def test_level_filters_and_setup_is_idempotent():
    stream = io.StringIO()
    setup_logging("WARNING", stream)
    setup_logging("warning", stream)
    logger = logging.getLogger("granutest.api")
    logger.info("hidden")
    logger.warning("shown")
    lines = stream.getvalue().splitlines()
    assert len(lines) == 1
    assert json.loads(lines[0])["msg"] == "shown"


def test_exceptions_are_included():
    formatter = JsonLogFormatter()
    try:
        raise ValueError("boom")
    except ValueError:
        record = logging.getLogger("granutest").makeRecord(
            "granutest", logging.ERROR, __file__, 1, "failed", None, sys.exc_info()
        )
    entry = json.loads(formatter.format(record))
    assert "ValueError: boom" in entry["exc"]
