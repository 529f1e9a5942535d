"""Exception types shared across the package."""


class NavQAError(Exception):
    """Base class for all package errors."""


class UnavailableAction(NavQAError):
    """An action forbidden by the availability mask was executed (harness bug)."""


class Unreachable(NavQAError):
    """No floor path between two cells (corrupt world)."""


class GenerationFailure(NavQAError):
    """Procedural generation could not satisfy its constraints within the retry budget."""


class EmptyDataset(NavQAError):
    """An operation that needs at least one example received none."""


class UnknownToken(NavQAError):
    """A language token outside the fixed vocabulary."""


class DimensionMismatch(NavQAError):
    """Model input shape does not match the configured architecture."""


class GoldReplayFailure(NavQAError):
    """A gold action was unavailable during replay (corrupt episode)."""


class NonFiniteGradient(NavQAError):
    """A gradient buffer contains NaN or infinity; the run is aborted."""


class ConfigError(NavQAError):
    """Malformed or inconsistent configuration file."""
