"""Exception hierarchy shared by every module."""


class SwabServoError(Exception):
    pass


class DegenerateMatrix(SwabServoError):
    pass


class AntiparallelVectors(SwabServoError):
    pass


class BranchCut(SwabServoError):
    pass


class IKFailure(SwabServoError):
    """Base for inverse-kinematics failures. ``iterate`` is the failing iteration index."""

    def __init__(self, message: str, iterate: int, q=None):
        super().__init__(message)
        self.iterate = iterate
        self.q = q


class JointLimitHit(IKFailure):
    pass


class SelfCollision(IKFailure):
    pass


class MaxItersExceeded(IKFailure):
    pass


class ChainFileError(SwabServoError):
    pass


class NoFeasibleCandidate(SwabServoError):
    pass


class InfeasibleCell(SwabServoError):
    pass


class OutOfFrustum(SwabServoError):
    pass


class DegenerateProjection(SwabServoError):
    pass


class MissingDepth(SwabServoError):
    pass


class IllConditionedRay(SwabServoError):
    pass


class DimensionMismatch(SwabServoError):
    pass


class CovarianceNotPSD(SwabServoError):
    pass


class NearSingularity(SwabServoError):
    pass


class LutInfeasible(SwabServoError):
    pass


class StageTimeout(SwabServoError):
    pass
