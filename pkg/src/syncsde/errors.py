"""Exception hierarchy for the engine.

All engine errors derive from EngineError so callers can catch one type at
the CLI boundary. Transport failures are the only retryable class.
"""


class EngineError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(EngineError):
    """Invalid configuration value. Carries the offending key path."""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key '{key}': {message}")


class ShapeError(EngineError):
    """Operand shapes are inconsistent."""


class ScheduleError(EngineError):
    """Noise schedule violates its invariants."""


class SingularityError(ScheduleError):
    """A schedule coefficient is undefined (division by zero in gamma)."""


class PlanError(EngineError):
    """A trajectory plan is malformed or was used out of order."""


class ScoreModelError(EngineError):
    """A score model failed to produce a usable prediction."""


class TransportError(ScoreModelError):
    """Remote provider unreachable or connection lost. Safe to retry."""


class ProviderContractError(ScoreModelError):
    """Remote provider replied with a malformed or non-conforming payload."""


class HandshakeError(ScoreModelError):
    """Remote provider refused the session (version or digest mismatch)."""
