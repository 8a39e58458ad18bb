"""Exception hierarchy shared by all gatlab modules."""


class GatlabError(Exception):
    """Base class for every error raised by gatlab."""


class DimensionError(GatlabError, ValueError):
    """Operand shapes are incompatible."""


class DegenerateNeighborhoodError(GatlabError, ValueError):
    """A softmax segment or a consumed node's neighborhood is empty."""


class ContractError(GatlabError, ValueError):
    """A caller-side precondition was violated."""


class GraphError(GatlabError, ValueError):
    """Invalid graph construction (bad endpoint, duplicate edge)."""


class CapacityError(GatlabError, ValueError):
    """Not enough candidate non-edges to sample the requested noise."""


class KindMismatchError(GatlabError, TypeError):
    """An operation was applied to the wrong attention-layer variant."""


class NumericError(GatlabError, ArithmeticError):
    """Non-convergence, singularity, or divergence of a numeric routine."""


class SingularityError(NumericError):
    """Matrix is rank-deficient at the requested tolerance."""

    def __init__(self, message, smallest_singular_value=None):
        super().__init__(message)
        self.smallest_singular_value = smallest_singular_value


class DivergenceError(NumericError):
    """Training loss became non-finite."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
