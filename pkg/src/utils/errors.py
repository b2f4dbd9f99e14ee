"""
Exception hierarchy for the billiard laboratory.

Every error carries a stable `code` (what the CLI prints) and an
`exit_code`: 2 for validation problems with the inputs, 3 for failures
while running.
"""

VALIDATION_EXIT = 2
RUNTIME_EXIT = 3


class BilliardError(Exception):
    exit_code = RUNTIME_EXIT

    def __init__(self, message="", *args):
        self.args_repr = args
        self.message = message
        super().__init__(message)

    @property
    def code(self):
        if self.args_repr:
            inner = ",".join(str(a) for a in self.args_repr)
            return f"{type(self).__name__}({inner})"
        return type(self).__name__

    def __str__(self):
        if self.message:
            return f"{self.code}: {self.message}"
        return self.code


class ValidationError(BilliardError):
    exit_code = VALIDATION_EXIT


# ---------------------------- MANIFOLD ----------------------------

class NonFiniteState(BilliardError):
    pass


class ChartDomainExceeded(BilliardError):
    pass


class DegeneratePlane(BilliardError):
    pass


# ---------------------------- SCENE ----------------------------

class ObstaclesOverlap(ValidationError):
    def __init__(self, i, j, message=""):
        self.pair = (i, j)
        super().__init__(message, i, j)


class ObstacleNotConvex(ValidationError):
    def __init__(self, i, point=None, message=""):
        self.obstacle_id = i
        self.point = point
        super().__init__(message or f"at {point}", i)


class ObstacleOutsideDomain(ValidationError):
    def __init__(self, i, message=""):
        self.obstacle_id = i
        super().__init__(message, i)


class DomainTooLarge(ValidationError):
    pass


class UnsupportedModel(ValidationError):
    pass


class SceneSchemaError(ValidationError):
    pass


class NotOnBoundary(BilliardError):
    pass


# ---------------------------- BILLIARD ----------------------------

class NotIncoming(BilliardError):
    pass


class DegenerateLaunch(BilliardError):
    pass


# ---------------------------- FRONTS ----------------------------

class FocalPointCrossed(BilliardError):
    def __init__(self, t_focal=None, message=""):
        self.t_focal = t_focal
        super().__init__(message or (f"focal point at t={t_focal:.6g}" if t_focal is not None else ""))


class TangentialReflection(BilliardError):
    pass


class PatchLeftDomain(BilliardError):
    pass


class PatchHitsObstacle(BilliardError):
    pass


class UnsupportedObstacle(BilliardError):
    pass


# ---------------------------- RIGIDITY ----------------------------

class IncomparableSpecs(ValidationError):
    pass


class InsufficientData(BilliardError):
    pass


class DidNotConverge(BilliardError):
    def __init__(self, best_so_far=None, message=""):
        self.best_so_far = best_so_far
        super().__init__(message)
