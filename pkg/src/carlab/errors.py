"""Exception hierarchy shared across the package."""


class CarLabError(Exception):
    """Base class for every error raised by carlab."""


class ConfigError(CarLabError, ValueError):
    """A configuration value violates its documented invariant."""


# signal maths
class NonCoprimeRoot(CarLabError, ValueError):
    pass


class ZeroLength(CarLabError, ValueError):
    pass


class LengthMismatch(CarLabError, ValueError):
    pass


class EmptyProfile(CarLabError, ValueError):
    pass


class ZeroTotalPower(CarLabError, ValueError):
    pass


# channel simulation / datasets
class ConfigMismatch(ConfigError):
    pass


class ConfigInvalid(ConfigError):
    pass


class IoFailure(CarLabError, OSError):
    pass


# network kernel
class ShapeMismatch(CarLabError, ValueError):
    pass


class NonDivisibleShape(ShapeMismatch):
    pass


class ShapeArithmeticError(ConfigError):
    pass


class DivergenceDetected(CarLabError, FloatingPointError):
    pass


class EvenKernelLength(ConfigError):
    pass


# checkpoints
class FormatVersionMismatch(CarLabError, ValueError):
    pass


class CorruptFile(CarLabError, ValueError):
    pass


# harness
class TooFewSamples(CarLabError, ValueError):
    pass


class InvalidK(CarLabError, ValueError):
    pass


class EmptyTestSet(CarLabError, ValueError):
    pass
