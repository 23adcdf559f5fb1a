"""Exception hierarchy.

Every error carries a machine readable ``kind`` (the class name) and an
``exit_code`` used by the command line front end: 2 for domain errors
(bad or unsupported input), 3 for numerical failures.
"""

from __future__ import annotations


class LagGeoflowError(Exception):
    """Base class for all package errors."""

    exit_code = 1

    @property
    def kind(self) -> str:
        return type(self).__name__

    @property
    def detail(self) -> str:
        return str(self.args[0]) if self.args else ""


class DomainError(LagGeoflowError):
    exit_code = 2


class NumericError(LagGeoflowError):
    exit_code = 3


class InvalidInput(DomainError):
    pass


class EmptyPolynomial(DomainError):
    pass


class DegenerateRoots(DomainError):
    pass


class BadSeed(DomainError):
    pass


class ArcEndpointNotRoot(DomainError):
    pass


class DistinctRootsRequired(ArcEndpointNotRoot):
    pass


class ArcThroughRoot(DomainError):
    pass


class InvalidCycle(DomainError):
    pass


class NotPositive(DomainError):
    pass


class AtSingularity(DomainError):
    pass


class AtBranchPoint(DomainError):
    pass


class NotIsotopic(DomainError):
    pass


class StepTooLarge(NumericError):
    pass


class BranchFailure(NumericError):
    pass


class SingularityApproach(NumericError):
    pass


class NoIntersection(NumericError):
    pass


class StepCollapse(NumericError):
    pass


class DoubleIntersection(NumericError):
    pass


class HorizonReached(NumericError):
    pass


class StepUnstable(NumericError):
    pass


class CrossCheckFailure(NumericError):
    pass
