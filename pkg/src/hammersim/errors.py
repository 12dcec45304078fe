"""Exception types raised by the simulator."""


class HammerSimError(Exception):
    """Base class for all simulator errors."""


class AddressRangeError(HammerSimError, ValueError):
    pass


class TraceFormatError(HammerSimError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UsageError(HammerSimError, RuntimeError):
    """An operation was called out of order (e.g. time went backwards)."""


class OwnershipError(HammerSimError, ValueError):
    """An attack would touch a row the attacker does not own."""

    def __init__(self, message: str, bank: int, row: int):
        self.bank = bank
        self.row = row
        super().__init__(message)


class DomainError(HammerSimError, ValueError):
    pass


class ConfigError(HammerSimError, ValueError):
    """Invalid configuration. ``field`` is a dotted path into the document."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)
