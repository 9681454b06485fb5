"""Exception types shared across the package."""


class HiflowError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(HiflowError, ValueError):
    """Tensor shapes or extents violate an operation's contract."""


class GeometryError(HiflowError, ValueError):
    """Window/permutation geometry does not divide the spatial extents."""


class ConfigurationError(HiflowError, ValueError):
    """Invalid hyperparameter combination or config file contents."""


class DomainError(HiflowError, ValueError):
    """Mathematically undefined input (e.g. zero-norm vector for cosine)."""


class ContractError(HiflowError, TypeError):
    """An API precondition unrelated to shapes was violated."""


class NumericsError(HiflowError, ArithmeticError):
    """A forward op produced NaN/Inf while debug checks were enabled."""


class FormatError(HiflowError, ValueError):
    """Malformed or unsupported file contents (HIFT, PPM/PGM, checkpoint)."""


class TrainingDivergedError(HiflowError, RuntimeError):
    """Training loss became non-finite."""

    def __init__(self, iteration: int, message: str = ""):
        self.iteration = iteration
        super().__init__(message or f"non-finite loss at iteration {iteration}")
