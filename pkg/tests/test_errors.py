"""Unit tests for error classes."""

import pytest

from scenario_rag.errors import (
    ConfigError,
    CorruptFile,
    DimMismatch,
    EmptyIndex,
    InputError,
    IoError,
    MissingEgo,
    NonFiniteVector,
    ParseError,
    ScenarioRagError,
    StorageError,
    TooLarge,
    ValidationError,
    VersionMismatch,
)


class TestScenarioRagError:
    def test_message_only(self):
        e = ScenarioRagError("something failed")
        assert e.message == "something failed"
        assert e.details is None
        assert e.suggestion is None
        assert str(e) == "something failed"

    def test_with_details_and_suggestion(self):
        e = ScenarioRagError("fail", details="detail", suggestion="hint")
        assert str(e) == "fail | detail | Suggestion: hint"


class TestExitCodes:
    @pytest.mark.parametrize(
        "error",
        [
            MissingEgo(3),
            ParseError(2, "bad json"),
            TooLarge(40, 36),
            DimMismatch(64, 32),
            EmptyIndex(),
            NonFiniteVector("s1"),
            ConfigError("bad"),
            ValidationError(["x"]),
        ],
    )
    def test_input_errors_exit_1(self, error):
        assert isinstance(error, InputError)
        assert error.exit_code == 1

    @pytest.mark.parametrize(
        "error",
        [IoError("/tmp/x", "denied"), CorruptFile(12, "truncated"), VersionMismatch("1", "9")],
    )
    def test_storage_errors_exit_2(self, error):
        assert isinstance(error, StorageError)
        assert error.exit_code == 2


class TestDetails:
    def test_missing_ego_timestamp(self):
        e = MissingEgo(7)
        assert e.timestamp == 7
        assert "timestamp=7" in str(e)

    def test_parse_error_line(self):
        e = ParseError(4, "unknown key 'foo'")
        assert e.line == 4
        assert "line 4" in str(e)

    def test_validation_error_truncates_summary(self):
        e = ValidationError([f"v{i}" for i in range(8)], subject="frame t=0")
        assert len(e.violations) == 8
        assert "8 total" in str(e)
        assert "frame t=0" in e.message

    def test_corrupt_file_offset_and_path(self):
        e = CorruptFile(16, "truncated", path="index.vidx")
        assert e.offset == 16
        assert "index.vidx offset 16" in str(e)

    def test_every_error_has_suggestion(self):
        for e in (MissingEgo(), TooLarge(1, 1), IoError("p", "r"), ConfigError("m")):
            assert e.suggestion
