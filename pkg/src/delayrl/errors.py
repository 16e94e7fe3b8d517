"""Exception types shared across the library."""


class ContractViolation(RuntimeError):
    """An operation was called in a state that breaks its contract."""


class CapacityError(RuntimeError):
    """An exact enumeration would exceed its configured size guard."""


class ChannelOverflow(RuntimeError):
    """Too many consecutive over-maximum delays for the action buffer to absorb."""


class EmptyReplayError(LookupError):
    """The replay memory has no sampleable fragment."""


class ConfigError(ValueError):
    """A run configuration is inconsistent or malformed."""


class ParseError(ValueError):
    """A text input could not be parsed; carries the offending line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
