"""Exception types shared across the package."""


class ChaospropError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(ChaospropError, ValueError):
    """A parameter, config file, or CLI flag violates its contract."""


class DomainError(ChaospropError, ValueError):
    """An input lies outside the mathematical domain of an operation."""


class DivergenceError(ChaospropError, RuntimeError):
    """A simulated state left the admissible region (non-finite or clipped).

    Carries enough context to locate the first offending value.
    """

    def __init__(self, message, *, t=None, step=None, replica=None, index=None,
                 population=None):
        super().__init__(message)
        self.t = t
        self.step = step
        self.replica = replica
        self.index = index
        self.population = population


class NumericError(ChaospropError, RuntimeError):
    """A numerical routine failed to produce a usable result."""


class AnalysisError(ChaospropError, RuntimeError):
    """An estimator or fit could not be carried out on the given data."""


class AssumptionError(ChaospropError, RuntimeError):
    """A structural condition required by the theory fails on the model."""
