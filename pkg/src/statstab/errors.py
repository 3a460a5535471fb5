"""Exception hierarchy.

Every domain error knows the module it comes from and, when raised through
:func:`fail`, the operation that raised it. The CLI maps these to exit code 1.
"""


class DomainError(Exception):
    module = "statstab"

    def __init__(self, message="", operation=None, **witness):
        super().__init__(message)
        self.operation = operation
        self.witness = witness

    def describe(self):
        op = f".{self.operation}" if self.operation else ""
        return f"[{self.module}{op}] {type(self).__name__}: {self}"


# map-model
class MapModelError(DomainError):
    module = "map-model"


class UnknownFamily(MapModelError):
    pass


class ParamOutOfRange(MapModelError):
    pass


class NondegeneracyCheckFailed(MapModelError):
    pass


class OutOfDomain(MapModelError):
    pass


class AmbiguousSide(MapModelError):
    pass


class InfiniteDerivative(MapModelError):
    pass


class ZeroDerivative(MapModelError):
    pass


class OrbitEscapedDomain(MapModelError):
    pass


class NoAdmissibleSegments(MapModelError):
    pass


class InversionFailure(MapModelError):
    pass


class IncompatibleCriticalStructure(MapModelError):
    pass


class NoFiniteEta(MapModelError):
    pass


class HypothesisConstantsInvalid(MapModelError):
    pass


# partition-engine
class PartitionError(DomainError):
    module = "partition-engine"


class DeltaNotAdmissible(PartitionError):
    pass


class OverlappingCriticalNeighborhoods(PartitionError):
    pass


# inducing-scheme
class InducingError(DomainError):
    module = "inducing-scheme"


class NoReturnWithinHorizon(InducingError):
    pass


class PullbackCrossesCritical(InducingError):
    pass


class InvalidReturnParams(InducingError):
    pass


class BudgetExhausted(InducingError):
    pass


class InsufficientData(InducingError):
    pass


class ThetaNonpositive(InducingError):
    pass


class ThetaHatOutOfRange(InducingError):
    pass


# measure-lab
class MeasureError(DomainError):
    module = "measure-lab"


class AllOrbitsDegenerate(MeasureError):
    pass


class PowerIterationStalled(MeasureError):
    pass


class ResidualTooLarge(MeasureError):
    pass


class DomainMismatch(MeasureError):
    pass


# stability-harness
class HarnessError(DomainError):
    module = "stability-harness"


class DomainAlignmentFailed(HarnessError):
    pass


# cli-frontend
class ConfigError(DomainError):
    module = "cli-frontend"


class ParseError(ConfigError):
    pass


class SchemaError(ConfigError):
    pass


class AlphaConstraintViolated(ConfigError):
    pass
