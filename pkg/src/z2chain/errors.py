"""Exception types shared across the package."""


class SimError(Exception):
    """Base class for all z2chain errors."""


class OutOfRange(SimError, ValueError):
    """A parameter lies outside its allowed range."""

    def __init__(self, field, message=""):
        self.field = field
        super().__init__(message or f"parameter out of range: {field}")


class InvalidSite(SimError, IndexError):
    pass


class ZeroTrace(SimError, ArithmeticError):
    pass


class ZeroPurity(SimError, ArithmeticError):
    pass


class MemoryBudget(SimError):
    pass


class TooManyOutcomes(SimError):
    pass


class TruncationBlowup(SimError):
    pass


class LengthMismatch(SimError, ValueError):
    pass


class EmptyRegion(SimError, ValueError):
    pass


class NoReference(SimError):
    pass


class DenseOnly(SimError):
    pass


class LeakageTooLarge(SimError):
    def __init__(self, leakage, tol):
        self.leakage = leakage
        self.tol = tol
        super().__init__(f"code-space leakage {leakage:.3e} exceeds tolerance {tol:.1e}")


class ZeroDiagonal(SimError, ArithmeticError):
    pass


class SingularCoupling(SimError, ValueError):
    pass


class SingularWeight(SimError, ValueError):
    pass


class TooLarge(SimError):
    pass


class RequiresPureDynamics(SimError, ValueError):
    pass


class WrongLimit(SimError, ValueError):
    pass


class DegenerateDenominator(SimError, ArithmeticError):
    pass


class DimensionMismatch(SimError, ValueError):
    pass


class EmptyInput(SimError, ValueError):
    pass


class BadWeights(SimError, ValueError):
    pass


class ConfigError(SimError, ValueError):
    """Base class for config-file problems."""


class UnknownKey(ConfigError):
    def __init__(self, key):
        self.key = key
        super().__init__(f"unknown config key: {key!r}")


class MissingField(ConfigError):
    def __init__(self, key):
        self.key = key
        super().__init__(f"missing required config key: {key!r}")


class WrongType(ConfigError):
    def __init__(self, key, expected, got):
        self.key = key
        super().__init__(f"config key {key!r} expects {expected}, got {got!r}")


class IoError(SimError, OSError):
    pass
