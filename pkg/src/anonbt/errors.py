"""Exception hierarchy shared across the pipeline.

ConfigError maps to CLI exit code 2, StageError (and subclasses raised by
stage code) to exit code 3.
"""

from __future__ import annotations


class AnonbtError(Exception):
    """Base class for all package errors."""


class ConfigError(AnonbtError):
    """Bad or missing configuration (unknown keys, absent input files)."""


class StageError(AnonbtError):
    """A pipeline stage failed after configuration was accepted."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class CorpusError(AnonbtError):
    """Malformed corpus input (bad row, duplicate key, calendar gap)."""


class CalendarRangeError(CorpusError):
    """Timestamp falls outside the trading calendar's coverage."""


class DegenerateNameError(AnonbtError):
    """Company name is empty after cleaning."""


class AliasStoreError(AnonbtError):
    """Alias store file is malformed or the remote source failed."""


class CredentialError(AliasStoreError):
    """Remote alias source rejected the configured credential."""


class RemoteUnavailableError(AliasStoreError):
    """Remote alias source still failing after the retry budget."""


class ScoringError(AnonbtError):
    """A headline could not be scored after retries."""

    def __init__(self, message: str, headline_id: str | None = None):
        super().__init__(message)
        self.headline_id = headline_id


class CacheMissError(ScoringError):
    """Replay backend was asked for a prompt that is not in the cache."""


class BacktestError(AnonbtError):
    """Portfolio construction received inconsistent inputs."""


class BenchmarkUnavailableError(BacktestError):
    """No company has a usable return on the requested benchmark date."""


class StatsError(AnonbtError):
    """Statistical routine received degenerate or malformed input."""


class RankError(StatsError):
    """Regressor matrix is rank deficient after demeaning."""
