"""Exception types raised across the package."""


class SynergyError(Exception):
    """Base class for all package errors."""


class InvalidMatrix(SynergyError, ValueError):
    pass


class SingularGram(SynergyError, ArithmeticError):
    pass


class InvalidBox(SynergyError, ValueError):
    pass


class InvalidCostMatrix(SynergyError, ValueError):
    pass


class ShapeMismatch(SynergyError, ValueError):
    pass


class LayoutMismatch(SynergyError, ValueError):
    pass


class BankFull(SynergyError):
    pass


class UpdateDue(SynergyError):
    """The weight history is full; the bank must be updated first."""


class UpdateNotDue(SynergyError):
    pass


class TrainingDiverged(SynergyError, ArithmeticError):
    pass


class ConfigError(SynergyError, ValueError):
    pass


class CheckpointFormatError(SynergyError, ValueError):
    pass
