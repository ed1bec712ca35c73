"""Exception taxonomy shared across the package."""


class LobmmError(Exception):
    """Base class; the CLI maps these to categorized exit lines."""


class InvalidState(LobmmError):
    pass


class InadmissibleControl(LobmmError):
    pass


class EventImpossible(LobmmError):
    pass


class InventoryTooLarge(LobmmError):
    pass


class EnvelopeViolated(LobmmError):
    pass


class DegenerateState(LobmmError):
    pass


class PathTooLong(LobmmError):
    pass


class EmptyCell(LobmmError):
    pass


class GridExhausted(LobmmError):
    pass


class StateSpaceTooLarge(LobmmError):
    pass


class ContractionViolated(LobmmError):
    pass


class ZeroIntensity(LobmmError):
    pass


class TableConfigMismatch(LobmmError):
    pass


class ConfigError(LobmmError):
    pass
