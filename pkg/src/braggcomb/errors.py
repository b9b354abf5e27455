"""Exception types shared across the package."""


class BraggError(Exception):
    pass


class NonConvergence(BraggError):
    pass


class HalfIntegerInput(BraggError, ValueError):
    pass


class WindowTooSmall(BraggError, ValueError):
    pass


class TailBudgetExceeded(BraggError):
    pass


class QuadratureFailure(BraggError):
    pass


class AssumptionViolated(BraggError, ValueError):
    def __init__(self, clause, detail=""):
        self.clause = clause
        super().__init__(f"assumption clause {clause} violated: {detail}")


class BranchExplosion(BraggError):
    pass


class InsufficientFlips(BraggError):
    pass


class DegenerateFit(BraggError, ValueError):
    pass


class ConfigError(BraggError, ValueError):
    pass
