"""Exception types shared across the package."""


class MonospheresError(Exception):
    """Base class for all package-specific errors."""


class FewerThanThreePoints(MonospheresError):
    pass


class AllCollinear(MonospheresError):
    pass


class PointBehindCamera(MonospheresError):
    pass


class EmptyMesh(MonospheresError):
    pass


class NonpositiveDepth(MonospheresError):
    pass


class MalformedSpec(MonospheresError):
    pass


class StartNotInFreeSpace(MonospheresError):
    pass


class GoalNotInFreeSpace(MonospheresError):
    pass


class StartNotFree(MonospheresError):
    pass


class MalformedConfig(MonospheresError):
    pass


class WorldLoadFailure(MonospheresError):
    pass


class IoFailure(MonospheresError):
    pass
