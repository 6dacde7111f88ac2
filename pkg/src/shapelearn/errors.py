"""Exception types shared across the package."""


class ShapeLearnError(Exception):
    """Base class for all errors raised by this package."""


class SingularGramError(ShapeLearnError):
    """Kernel matrix is not numerically positive definite."""


class NoReturnsError(ShapeLearnError):
    """No sensor ray hit the object within range."""


class DimensionMismatchError(ShapeLearnError):
    """Vector/matrix shapes do not agree."""


class NumericalDivergenceError(ShapeLearnError):
    """Solver iterates or residuals exceeded the divergence threshold."""


class ConsensusViolationError(ShapeLearnError):
    """An agent's iterate disagrees with the consensus vector beyond tolerance."""


class TooLargeError(ShapeLearnError):
    """Instance is too large for an exhaustive reference solver."""


class ConfigError(ShapeLearnError):
    """Scenario configuration is invalid.

    Carries the full list of offending fields so a user can fix a config
    in one pass.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))
