"""Exception types raised across the package."""


class NoisyIOError(Exception):
    """Base class for all package errors."""


class InvalidInput(NoisyIOError, ValueError):
    pass


class NumericOverflow(NoisyIOError, ArithmeticError):
    pass


class ShapeError(NoisyIOError, ValueError):
    pass


class TapeError(NoisyIOError, RuntimeError):
    pass


class TrainingDiverged(NoisyIOError, RuntimeError):
    pass


class InvalidInit(NoisyIOError, ValueError):
    pass


class SamplerStuck(NoisyIOError, RuntimeError):
    pass


class InvalidCholesky(NoisyIOError, ValueError):
    pass


class CholeskyFailure(NoisyIOError, RuntimeError):
    pass


class SolverDiverged(NoisyIOError, RuntimeError):
    pass


class IoError(NoisyIOError, OSError):
    pass


class ConfigError(NoisyIOError, ValueError):
    pass
