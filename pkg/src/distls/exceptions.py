"""Exception hierarchy shared by the solvers and builders."""


class DomainError(ValueError):
    """A point lies outside the domain of a function or operator."""


class SolverError(RuntimeError):
    """Base class for failures raised while iterating a solver."""


class StepsizeUnderflowError(SolverError):
    """The backtracking loop exhausted its budget of shrink steps."""


class NonFiniteIterateError(SolverError):
    """An iterate contains NaN or infinite entries."""


class DivergenceError(SolverError):
    """A method without stepsize safeguard blew up."""


class CertificateError(SolverError):
    """A reference solution or certificate failed its acceptance check."""
