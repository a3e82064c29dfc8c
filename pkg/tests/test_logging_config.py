"""Tests for logging configuration and error categories."""

import logging

import pytest

from qmonitor.exceptions import (
    EXIT_CONFIG,
    EXIT_NUMERICAL,
    BranchFailure,
    ConfigError,
    InsufficientTaus,
    categorize_error,
    exit_code_for,
)
from qmonitor.logging_config import (
    ContextFilter,
    ExperimentLogFormatter,
    configure_logging,
)


@pytest.fixture
def restore_root():
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield root
    for handler in root.handlers[:]:
        root.removeHandler(handler)
        handler.close()
    for handler in handlers:
        root.addHandler(handler)
    root.setLevel(level)


def _record(message="hello"):
    return logging.LogRecord(
        "qmonitor.test", logging.INFO, __file__, 1, message, None, None
    )


def test_context_filter_stamps_records():
    context_filter = ContextFilter()
    with context_filter.context(experiment="fig1a", seed=7):
        record = _record()
        context_filter.filter(record)
    assert record.experiment == "fig1a"
    assert record.seed == 7

    outside = _record()
    context_filter.filter(outside)
    assert not hasattr(outside, "experiment")


def test_nested_context_restores_outer():
    context_filter = ContextFilter()
    with context_filter.context(experiment="outer", seed=1):
        with context_filter.context(seed=2):
            inner = _record()
            context_filter.filter(inner)
        after = _record()
        context_filter.filter(after)
    assert (inner.experiment, inner.seed) == ("outer", 2)
    assert after.seed == 1


def test_formatter_without_context():
    formatter = ExperimentLogFormatter("[%(experiment)s] [seed=%(seed)s] %(message)s")
    text = formatter.format(_record())
    assert text == "[-] [seed=-] hello"


def test_configure_logging_writes_file(tmp_path, restore_root):
    log_file = tmp_path / "logs" / "run.log"
    context_filter = configure_logging("DEBUG", str(log_file), use_rich=False)
    assert restore_root.level == logging.DEBUG
    assert len(restore_root.handlers) == 2

    with context_filter.context(experiment="zeno", seed=3):
        logging.getLogger("qmonitor.asymptotics").info("slope computed")
    for handler in restore_root.handlers:
        handler.flush()
    text = log_file.read_text()
    assert "[zeno] [seed=3] qmonitor.asymptotics - INFO - slope computed" in text


def test_configure_logging_rejects_unknown_level(restore_root):
    with pytest.raises(ValueError, match="Invalid log level"):
        configure_logging("LOUD")


def test_error_categories():
    assert categorize_error(InsufficientTaus("two taus")) == "config_error"
    assert categorize_error(BranchFailure("on the cut")) == "numerical_error"
    assert categorize_error(ValueError("bad")) == "config_error"
    assert categorize_error(RuntimeError("?")) == "unknown_error"
    assert exit_code_for(ConfigError("x")) == EXIT_CONFIG
    assert exit_code_for(BranchFailure("x")) == EXIT_NUMERICAL
    assert exit_code_for(RuntimeError("x")) == EXIT_NUMERICAL


def test_errors_carry_details():
    error = BranchFailure("on the cut", {"eigenvalue": -1.0})
    assert error.details == {"eigenvalue": -1.0}
    assert str(error) == "on the cut"


if __name__ == "__main__":
    pytest.main([__file__])
