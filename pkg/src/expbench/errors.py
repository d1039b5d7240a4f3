"""Exception types shared across the package."""


class ExpbenchError(Exception):
    """Base class for all expbench errors."""


class GenerationFailed(ExpbenchError):
    """Floorplan generation could not satisfy its invariants within the retry budget."""


class InvalidPose(ExpbenchError):
    """A pose that must lie in free space is inside an obstacle or out of bounds."""


class OutOfBounds(ExpbenchError):
    """The agent cell falls outside the map grid."""


class ShapeMismatch(ExpbenchError):
    """Array arguments have incompatible shapes."""


class NonFiniteInput(ExpbenchError):
    """An input contains NaN or infinity."""


class DomainError(ExpbenchError):
    """Inputs are outside the mathematical domain of the operation."""


class NoPath(ExpbenchError):
    """No traversable path exists between the requested cells."""


class NoFrontier(ExpbenchError):
    """The map has no frontier cells left (fully explored)."""


class EmptyCategories(ExpbenchError):
    """Category set for a coverage score is empty."""


class EmptySet(ExpbenchError):
    """A token set that must be nonempty is empty."""


class PlacementFailed(ExpbenchError):
    """No valid placement was found for a displaced object within the retry budget."""


class ConfigError(ExpbenchError):
    """An episode or benchmark configuration is invalid."""


class InconsistentInputs(ExpbenchError):
    """Artifacts passed together do not belong to the same run (e.g. log vs. world)."""
