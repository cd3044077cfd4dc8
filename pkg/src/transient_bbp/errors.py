"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    pass


class DysonConvergenceError(RuntimeError):
    """Fixed-point/Newton solve did not reach the requested tolerance."""

    def __init__(self, message, residual=float("nan"), z=None):
        super().__init__(message)
        self.residual = residual
        self.z = z


class DysonDomainError(ValueError):
    """Real spectral parameter lies inside the bulk support."""


class SingularityError(ArithmeticError):
    pass


class EdgeDetectionError(RuntimeError):
    pass


class DegenerateRootError(ArithmeticError):
    pass


class ResolutionError(RuntimeError):
    """Time grid too coarse to resolve the sign pattern of the discriminant."""


class DegenerateBlockError(ValueError):
    pass
