"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures to the
documented process exit status without a lookup table.
"""


class MsvError(Exception):
    exit_code = 1


class ConfigError(MsvError):
    exit_code = 2


class NonPositiveTheta(ConfigError):
    pass


class DataError(MsvError):
    exit_code = 3


class ZeroReturn(DataError):
    pass


class NonFiniteInput(DataError):
    pass


class InsufficientSample(DataError):
    pass


class LengthMismatch(DataError):
    pass


class ZeroVarianceColumn(DataError):
    pass


class NumericalError(MsvError):
    exit_code = 4


class NoConvergence(NumericalError):
    pass


class SingularDesign(NumericalError):
    pass


class PhiSingular(NumericalError):
    pass


class UnstablePhi(NumericalError):
    pass


class UnstableModel(NumericalError):
    pass


class SolverFailure(NumericalError):
    pass


class OptimFailure(NumericalError):
    pass


class SingularH(NumericalError):
    pass


class DegenerateVariance(NumericalError):
    pass


class DegenerateFolds(NumericalError):
    pass


class InfeasibleError(MsvError):
    exit_code = 5


class SplitInfeasible(InfeasibleError):
    pass


class AdmissibilitySampleExhausted(InfeasibleError):
    pass
