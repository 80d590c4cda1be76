"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or bound."""


class DegenerateInputError(ValueError):
    """Input carries no usable signal (e.g. every member equals the aggregate).

    ``fallback`` holds the uniform result callers may use instead.
    """

    def __init__(self, msg, fallback=None):
        super().__init__(msg)
        self.fallback = fallback


class MembershipError(ValueError):
    """Service is missing from, or already present in, a composition."""


class SizeLimitError(ValueError):
    """Problem size exceeds an enumeration cap or the available pool."""


class AmbiguityError(ValueError):
    """Inputs do not determine a unique answer (e.g. mixed modalities)."""
