"""Exception hierarchy shared by all solvers.

The CLI maps the three top-level families to exit codes:
``ConfigError`` -> 2, ``NumericError`` -> 3, ``NonConvergence`` -> 4.
"""


class LsocError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(LsocError, ValueError):
    pass


class ParseError(ConfigError):
    pass


class GraphError(ConfigError):
    pass


class InvalidEdge(GraphError):
    pass


class DisconnectedGraph(GraphError):
    pass


class SupportViolation(LsocError, ValueError):
    """A distribution puts mass where its reference has none."""


class MisalignedStateSpaces(ConfigError):
    pass


class IncompatibleWeights(ConfigError):
    pass


class TooFewRows(ConfigError):
    pass


class InfeasibleInitialization(ConfigError):
    pass


class NumericError(LsocError, ArithmeticError):
    pass


class NoBoundaryReachable(NumericError):
    pass


class DegenerateDenominator(NumericError):
    pass


class RankDeficientBlock(NumericError):
    pass


class NonFiniteState(NumericError):
    pass


class SingularH(NumericError):
    pass


class SingularR(NumericError):
    pass


class SingularCovariance(NumericError):
    pass


class DegenerateDesign(NumericError):
    pass


class OptimizerDiverged(NumericError):
    pass


class NonConvergence(LsocError):
    pass


class MaxIterationsExceeded(NonConvergence):
    pass
