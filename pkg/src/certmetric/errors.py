"""Exception types shared across the package."""


class InvalidInput(ValueError):
    """An argument violates a documented precondition."""


class NumericalFailure(RuntimeError):
    """A numerical routine could not produce a usable result.

    Trainers attach the partial :class:`~certmetric.lmnn.TrainingTrace`
    collected up to the failure point as the ``trace`` attribute.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
