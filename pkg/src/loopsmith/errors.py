"""Exception hierarchy.

Domain errors (bad inputs, violated preconditions) and convergence errors
(iterative procedures that did not finish) are kept apart so batch drivers
can map them to different exit codes.
"""


class LoopsmithError(Exception):
    """Base class for every error raised by the package."""


class DomainError(LoopsmithError, ValueError):
    """An argument is outside the admissible domain of an operation."""


class DimensionMismatch(DomainError):
    pass


class SingularPencil(DomainError):
    pass


class SingularAtPoint(DomainError):
    """A transfer was evaluated at (or numerically at) one of its poles."""


class SingularE(DomainError):
    pass


class IllPosedLoop(DomainError):
    pass


class UnstableSystem(DomainError):
    pass


class UnstableInput(UnstableSystem):
    pass


class NotStrictlyProper(DomainError):
    pass


class StepTooLarge(DomainError):
    def __init__(self, message, suggested_dt=None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


class LengthMismatch(DomainError):
    pass


class EmptyResult(DomainError):
    pass


class NodeCollision(DomainError):
    pass


class OrderTooLarge(DomainError):
    pass


class NothingStable(DomainError):
    pass


class SingularAtTustinPole(DomainError):
    pass


class MissingArtifact(DomainError):
    pass


class ConvergenceError(LoopsmithError):
    """An iterative procedure stopped without meeting its tolerance."""


class NoConvergence(ConvergenceError):
    def __init__(self, message, best=None, report=None):
        super().__init__(message)
        self.best = best
        self.report = report


class NoStabilizingController(ConvergenceError):
    pass
