"""Linear operator adapters for the Krylov drivers.

An operator is anything with a dimension and a block apply X -> AX. Adapters
cover dense matrices, CSR sparse matrices, the shifted form alpha*I +- A, and
operator composition (preconditioning).
"""

from __future__ import annotations

import numpy as np
import scipy.sparse

from .errors import ShapeError

__all__ = [
    "LinearOperator",
    "DenseOperator",
    "CsrOperator",
    "ShiftedOperator",
    "ComposedOperator",
]


class LinearOperator:
    """Abstract n x n operator; subclasses implement _apply on 2-D blocks."""

    def __init__(self, n: int, description: str = ""):
        self.n = int(n)
        self.description = description

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        squeeze = X.ndim == 1
        if squeeze:
            X = X.reshape(-1, 1)
        if X.shape[0] != self.n:
            raise ShapeError(f"operator dim {self.n} vs block rows {X.shape[0]}")
        Y = self._apply(X)
        return Y[:, 0] if squeeze else Y

    def _apply(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class DenseOperator(LinearOperator):
    def __init__(self, A, description: str = "dense"):
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ShapeError(f"dense operator must be square, got {A.shape}")
        super().__init__(A.shape[0], description)
        self.A = A

    def _apply(self, X):
        return self.A @ X


class CsrOperator(LinearOperator):
    def __init__(self, matrix: scipy.sparse.csr_matrix, description: str = "csr"):
        matrix = scipy.sparse.csr_matrix(matrix)
        if matrix.shape[0] != matrix.shape[1]:
            raise ShapeError(f"csr operator must be square, got {matrix.shape}")
        super().__init__(matrix.shape[0], description)
        self.matrix = matrix

    @classmethod
    def from_coo(cls, n, m, rows, cols, vals, description: str = "csr"):
        if n != m:
            raise ShapeError(f"operator must be square, got {n}x{m}")
        mat = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(n, m)).tocsr()
        return cls(mat, description)

    def _apply(self, X):
        return np.asarray(self.matrix @ X)


class ShiftedOperator(LinearOperator):
    """alpha*I + sign*A with sign in {+1, -1}."""

    def __init__(self, base: LinearOperator, alpha: float, sign: int = 1):
        if sign not in (1, -1):
            raise ValueError(f"sign must be +-1, got {sign}")
        super().__init__(base.n, f"{alpha}*I{'+' if sign > 0 else '-'}({base.description})")
        self.base = base
        self.alpha = float(alpha)
        self.sign = sign

    def _apply(self, X):
        return self.alpha * X + self.sign * self.base._apply(X)


class ComposedOperator(LinearOperator):
    """x -> A(M(x)), the preconditioned product A o M."""

    def __init__(self, A: LinearOperator, M: LinearOperator):
        if A.n != M.n:
            raise ShapeError(f"composition dims disagree: {A.n} vs {M.n}")
        super().__init__(A.n, f"({A.description})o({M.description})")
        self.outer = A
        self.inner = M

    def _apply(self, X):
        return self.outer._apply(self.inner._apply(X))
