"""
Tests for key/value report files and environment settings
"""
import math

import pytest

from engine.errors import ConfigError, SequenceIOError
from utils.reports import flatten, format_value, read_key_values, write_key_values
from utils.settings import Settings, get_settings, reset_settings


def test_format_value():
    assert format_value(0.1) == "0.1"
    assert format_value(True) == "true"
    assert format_value(None) == ""
    assert format_value([1, 2.5, math.nan]) == "1,2.5,nan"
    assert format_value(math.inf) == "inf"


def test_flatten_nested():
    assert flatten({"run": {"seed": 3}, "block": {"0": {"init": "fresh"}}}) == {
        "run.seed": 3,
        "block.0.init": "fresh",
    }


def test_write_then_read(tmp_path):
    path = write_key_values(tmp_path / "r" / "report.txt", {"run": {"n": 5}, "loss": 0.25, "missing": None},
                            header=("schema line",))
    text = path.read_text()
    assert text.startswith("# schema line\n")
    assert read_key_values(path) == {"run.n": "5", "loss": "0.25", "missing": ""}


def test_read_missing_report(tmp_path):
    with pytest.raises(SequenceIOError):
        read_key_values(tmp_path / "none.txt")


@pytest.fixture
def clean_settings(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    for name in ("TURBDIP_THREADS", "TURBDIP_LOG_LEVEL", "TURBDIP_DETERMINISTIC"):
        monkeypatch.delenv(name, raising=False)
    reset_settings()
    yield
    reset_settings()


def test_settings_defaults(clean_settings):
    settings = Settings.from_env()
    assert settings.threads is None
    assert settings.log_level == "INFO"
    assert settings.deterministic


def test_settings_from_environment(clean_settings, monkeypatch):
    monkeypatch.setenv("TURBDIP_THREADS", "2")
    monkeypatch.setenv("TURBDIP_LOG_LEVEL", "debug")
    monkeypatch.setenv("TURBDIP_DETERMINISTIC", "0")

    settings = get_settings()

    assert settings.threads == 2
    assert settings.log_level == "DEBUG"
    assert not settings.deterministic
    assert get_settings() is settings


def test_settings_bad_threads(clean_settings, monkeypatch):
    monkeypatch.setenv("TURBDIP_THREADS", "many")
    with pytest.raises(ConfigError):
        Settings.from_env()
