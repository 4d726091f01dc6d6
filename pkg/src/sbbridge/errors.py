"""Exception types raised across the package."""


class InfiniteEntropyError(ValueError):
    """Relative entropy against a Lebesgue-continuous reference is infinite."""


class EmptyMassError(ArithmeticError):
    """A log-domain integral has no positive mass (every term is -inf)."""


class ProximalFailure(RuntimeError):
    """The proximal (Moreau) inner solver did not reach its residual tolerance."""


class NotConvergedError(RuntimeError):
    """An operation needs a converged solution but received a partial one."""
