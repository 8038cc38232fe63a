"""Exception hierarchy shared by all modules.

Each error carries an ``exit_code`` that the command line front end maps
to its documented process exit status (2 = input error, 3 = solver failure).
"""


class SystolaError(Exception):
    exit_code = 2


class InputError(SystolaError, ValueError):
    exit_code = 2


class UnsupportedDimensionError(InputError):
    pass


class InvalidLatticeError(InputError):
    pass


class InvalidNormError(InputError):
    pass


class InvalidMeshError(InputError):
    pass


class InvalidMetricError(InvalidMeshError):
    pass


class InvalidFormError(InputError):
    pass


class InvalidBasisError(InputError):
    pass


class WrongExponentError(InputError):
    pass


class UnsupportedTopologyError(InputError):
    pass


class PreconditionError(InputError):
    """A hypothesis of an inequality is not met; ``hypothesis`` names it."""

    def __init__(self, hypothesis, message=None):
        self.hypothesis = hypothesis
        super().__init__(f"{hypothesis}: {message}" if message else f"precondition failed: {hypothesis}")


class SolverError(SystolaError, RuntimeError):
    exit_code = 3


class ConvergenceError(SolverError):
    def __init__(self, message, residual=None):
        self.residual = residual
        if residual is not None:
            message = f"{message} (residual {residual:.3e})"
        super().__init__(message)


class DegenerateContactError(SolverError):
    pass


class DegenerateMapError(SolverError):
    pass


class NumericalDegeneracyError(SolverError):
    pass


class ResourceError(SolverError):
    pass
