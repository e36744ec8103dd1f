"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument violates an operation's precondition."""


class ConfigError(ValueError):
    """A configuration object is internally inconsistent."""


class ContractViolation(RuntimeError):
    """A caller broke an API contract (e.g. re-enabling a damaged joint)."""


class WarmupError(RuntimeError):
    """Raised when a replay buffer is sampled before it holds enough entries."""
