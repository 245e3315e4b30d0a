"""Exception hierarchy shared by all sinkhorn_mpc modules."""


class SinkhornMpcError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(SinkhornMpcError, ValueError):
    """An argument violates a documented precondition (non-finite input,
    wrong shape, non-positive step size, ...)."""


class NearSingularGramianError(SinkhornMpcError):
    """The controllability/reachability Gramian is numerically singular,
    which signals an uncontrollable (or unreachable) pair or a degenerate
    horizon."""


class InfeasibleTargetError(SinkhornMpcError):
    """No constant input makes the requested target an equilibrium of the
    agent dynamics."""


class NumericRangeError(SinkhornMpcError, FloatingPointError):
    """A linear-domain computation overflowed or underflowed to a
    non-finite value; switch to the log-domain code path."""


class NonConvergenceError(SinkhornMpcError):
    """An iterative solver hit its iteration cap before reaching tolerance."""

    def __init__(self, message: str, violation: float, iterations: int):
        super().__init__(message)
        self.violation = violation
        self.iterations = iterations


class DivergenceError(SinkhornMpcError):
    """A simulated state left the divergence guard ball; this should be
    unreachable for well-posed instances and indicates a bug or a broken
    instance."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step
