"""Shared exception types."""


class ParseError(ValueError):
    """Malformed input file (bad JSON, missing field, wrong type)."""


class ValidationError(ValueError):
    """Structurally parseable input that violates a data invariant."""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class TrainingError(RuntimeError):
    """Non-finite values or broken invariants during optimization."""


class MiningError(LookupError):
    """Triplet mining found no admissible positive or negative target."""
