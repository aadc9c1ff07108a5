"""Exception types shared across the pipeline."""

from __future__ import annotations


class RiskRulesError(Exception):
    """Base class for every error the pipeline raises on purpose."""


class ConfigError(RiskRulesError, ValueError):
    """A flag or config field is outside its allowed range (CLI exit 1)."""


class DataError(RiskRulesError, ValueError):
    """Input data is malformed or fails a precondition (CLI exit 2)."""


class FitError(RiskRulesError, RuntimeError):
    """A numerical procedure could not produce a usable result (CLI exit 2)."""
