"""Exception types raised by openbath."""


class OpenBathError(Exception):
    """Base class for all library errors."""


class NegativeFrequency(OpenBathError, ValueError):
    pass


class OutOfTabulatedRange(OpenBathError, ValueError):
    pass


class UndefinedAtZero(OpenBathError, ValueError):
    pass


class QuadratureNotConverged(OpenBathError, RuntimeError):
    """Adaptive quadrature stopped before reaching the requested tolerance.

    The achieved error estimate is kept in ``error_estimate``.
    """

    def __init__(self, message, error_estimate=float("nan")):
        super().__init__(f"{message} (error estimate {error_estimate:.3g})")
        self.error_estimate = error_estimate


class OverdampedRegime(OpenBathError, ValueError):
    pass


class ZeroTemperature(OpenBathError, ValueError):
    pass


class TooFewSamples(OpenBathError, ValueError):
    pass


class RankDeficient(OpenBathError, ValueError):
    pass


class NoStablePoles(OpenBathError, RuntimeError):
    pass


class MaxIterations(OpenBathError, RuntimeError):
    pass


class OptimizerNotConverged(OpenBathError, RuntimeWarning):
    pass


class PoleCollision(OpenBathError, ZeroDivisionError):
    pass


class StepSizeUnderflow(OpenBathError, RuntimeError):
    pass


class NonFiniteState(OpenBathError, FloatingPointError):
    pass


class FiniteDifferenceUnstable(OpenBathError, RuntimeError):
    pass


class NonPositiveInput(OpenBathError, ValueError):
    pass


class ConfigError(OpenBathError, ValueError):
    pass
