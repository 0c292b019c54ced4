"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    """Non-finite input, bad parameter, or an argument outside an operation's domain."""


class DegenerateRayError(ValueError):
    """The ray direction is zero (u coincides with the anchor)."""


class NotInvertibleError(ValueError):
    """The point is on or outside the boundary, so it has no preimage under p."""


class InfeasibleSetError(ValueError):
    """The constraint set is empty or has no usable (relative) interior."""


class GraphError(ValueError):
    """Shape mismatch or misuse detected while building an autodiff tape."""


class TrainingDivergedError(RuntimeError):
    """A loss or gradient became non-finite during training."""

    def __init__(self, message, step=None, last_good=None):
        super().__init__(message)
        self.step = step
        self.last_good = last_good
