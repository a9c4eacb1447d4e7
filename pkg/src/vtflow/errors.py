"""Exception hierarchy for vtflow."""


class VTFlowError(Exception):
    """Base class for all vtflow errors."""


class OutsideTubularNeighborhood(VTFlowError):
    """Closest-point projection is ambiguous or undefined at the requested point."""


class PointOffManifold(VTFlowError):
    """A point expected on the target lies further than the projection tolerance."""


class DegeneratePlane(VTFlowError):
    pass


class ShapeMismatch(VTFlowError):
    pass


class GateViolation(VTFlowError):
    """The tensor Phi fails the sup-norm gate ||Phi|| < 1/2."""


class StabilityBlowup(VTFlowError):
    """sup |du|^2 grew by more than the allowed factor in a single step."""


class CorruptCheckpoint(VTFlowError):
    pass


class NoPreviousState(VTFlowError):
    pass


class MissingArtifact(VTFlowError):
    pass


class ConfigError(VTFlowError):
    """Run configuration failed validation.

    ``problems`` holds one ``(field_path, message)`` pair per violated field.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        lines = [f"{path}: {msg}" for path, msg in self.problems]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))
