"""Shared exception types."""


class NumericsError(Exception):
    """Base class for numerical failures raised by this package."""


class ShapeError(NumericsError, ValueError):
    """Operands have inconsistent dimensions."""


class NotPositiveDefiniteError(NumericsError):
    def __init__(self, column):
        self.column = column
        super().__init__(f"not positive definite at column {column}")


class SingularTriangularError(NumericsError):
    def __init__(self, index):
        self.index = index
        super().__init__(f"zero diagonal entry at index {index}")


class EigenConvergenceError(NumericsError):
    def __init__(self, index, iterations):
        self.index = index
        self.iterations = iterations
        super().__init__(
            f"eigenvalue iteration failed to converge at index {index} "
            f"after {iterations} iterations"
        )


class DependentBlockError(NumericsError):
    def __init__(self, block, detail=""):
        self.block = block
        msg = f"block {block} numerically dependent"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class InterblockError(NumericsError):
    """Inter-block QR failure (rank-deficient block sketch)."""

    def __init__(self, block, detail):
        self.block = block
        super().__init__(
            f"inter-block QR failed at block {block}: {detail}; "
            "consider raising the sketch size k or switching the inter-block method"
        )


class RankDeficiencyError(NumericsError):
    """Least-squares or QR input does not have full column rank."""


class CertificationError(NumericsError):
    """Certification input is degenerate (e.g. zero sketched matrix)."""
