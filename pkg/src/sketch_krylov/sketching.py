"""Oblivious l2-subspace embeddings: Rademacher and subsampled Hadamard.

Operators are fully determined by (kind, k, n, seed) and regenerate
bit-identically from a counter-based generator, so a one-line text record is
enough to store them. The identity kind is the degenerate sketch that turns
the randomized algorithms into their classical counterparts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import RankDeficiencyError, ShapeError
from .kernels import FINE, Matrix, as_array, gemm, householder_qr

__all__ = [
    "SketchOperator",
    "EmbeddingParams",
    "min_sketch_dim",
    "make_operator",
    "apply",
    "srht_apply",
    "materialize",
    "check_embedding",
    "operator_norm_bound_check",
    "to_line",
    "from_line",
]

KINDS = ("rademacher", "srht", "identity")


def _next_pow2(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


@dataclass(frozen=True, eq=False)
class SketchOperator:
    """Seeded k x n sketching operator; immutable after construction."""

    kind: str
    k: int
    n: int
    seed: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown sketch kind {self.kind!r}")
        if self.k < 1 or self.n < 1:
            raise ShapeError(f"sketch dims must be positive, got k={self.k}, n={self.n}")
        if self.kind == "identity":
            if self.k != self.n:
                raise ShapeError("identity sketch requires k == n")
        elif self.k > self.n:
            raise ShapeError(f"sketch rows k={self.k} exceed columns n={self.n}")
        rng = np.random.Generator(np.random.Philox(self.seed))
        if self.kind == "srht":
            n_pad = _next_pow2(self.n)
            signs = (rng.integers(0, 2, size=n_pad, dtype=np.int64) * 2 - 1).astype(
                np.float64)
            sample = rng.permutation(n_pad)[: self.k]
            object.__setattr__(self, "n_pad", n_pad)
            object.__setattr__(self, "sign_diagonal", signs)
            object.__setattr__(self, "sample_indices", sample)
        elif self.kind == "rademacher":
            signs = (rng.integers(0, 2, size=(self.k, self.n), dtype=np.int8) * 2 - 1)
            object.__setattr__(self, "_signs", signs)


@dataclass(frozen=True)
class EmbeddingParams:
    epsilon: float
    delta: float
    d: int

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError(f"epsilon must lie in (0,1), got {self.epsilon}")
        if not (0.0 < self.delta < 1.0):
            raise ValueError(f"delta must lie in (0,1), got {self.delta}")
        if self.d < 1:
            raise ValueError(f"subspace dimension must be >= 1, got {self.d}")


def min_sketch_dim(params: EmbeddingParams, dist: str, n: int) -> int:
    """Smallest sketch size k meeting the (eps, delta) embedding bound, capped at n.

    Rademacher: k >= 7.87 eps^-2 (6.9 d + ln(1/delta)).
    SRHT:       k >= 2 (eps^2 - eps^3/3)^-1 (sqrt(d) + sqrt(8 ln(6n/delta)))^2 ln(3d/delta).
    """
    eps, delta, d = params.epsilon, params.delta, params.d
    if dist == "rademacher":
        bound = 7.87 * eps ** -2 * (6.9 * d + math.log(1.0 / delta))
    elif dist == "srht":
        if n < 1:
            raise ValueError("srht bound needs n >= 1")
        bound = (2.0 / (eps ** 2 - eps ** 3 / 3.0)
                 * (math.sqrt(d) + math.sqrt(8.0 * math.log(6.0 * n / delta))) ** 2
                 * math.log(3.0 * d / delta))
    else:
        raise ValueError(f"unknown sketch distribution {dist!r}")
    return min(int(math.ceil(bound)), n)


def make_operator(kind: str, k: int, n: int, seed: int) -> SketchOperator:
    return SketchOperator(kind, int(k), int(n), int(seed))


def _fwht_rows(X: np.ndarray) -> np.ndarray:
    """Unnormalized fast Walsh-Hadamard transform along axis 0 (power-of-two rows)."""
    n, m = X.shape
    h = 1
    while h < n:
        Y = X.reshape(n // (2 * h), 2, h * m)
        a = Y[:, 0, :].copy()
        Y[:, 0, :] += Y[:, 1, :]
        Y[:, 1, :] *= -1.0
        Y[:, 1, :] += a
        h *= 2
    return X


def srht_apply(X: np.ndarray, sign_diagonal: np.ndarray, sample_indices: np.ndarray,
               k: int) -> np.ndarray:
    """Core SRHT path: zero-pad, sign-flip, fast transform, subsample, scale 1/sqrt(k)."""
    X = np.asarray(X, dtype=np.float64)
    n_pad = len(sign_diagonal)
    Z = np.zeros((n_pad, X.shape[1]), dtype=np.float64, order="C")
    Z[: X.shape[0]] = sign_diagonal[: X.shape[0], None] * X
    _fwht_rows(Z)
    return Z[np.asarray(sample_indices)] * (1.0 / math.sqrt(k))


def apply(theta: SketchOperator, X) -> Matrix:
    """Theta @ X in fine precision (k x cols)."""
    X = as_array(X)
    if X.shape[0] != theta.n:
        raise ShapeError(
            f"sketch expects {theta.n} rows, got {X.shape[0]}")
    if theta.kind == "identity":
        return Matrix(X.copy())
    if theta.kind == "srht":
        out = srht_apply(X, theta.sign_diagonal, theta.sample_indices, theta.k)
        return Matrix(out)
    # rademacher: route through the deterministic gemm kernel so every column
    # accumulates in the same order regardless of how many columns are applied
    S = theta._signs.astype(np.float64)
    out = gemm(1.0, S, X, prec=FINE).data * (1.0 / math.sqrt(theta.k))
    return Matrix(out)


def materialize(theta: SketchOperator) -> np.ndarray:
    """Dense k x n realization; test-scale diagnostics only."""
    return apply(theta, np.eye(theta.n)).data


def check_embedding(theta: SketchOperator, V, epsilon: float):
    """Exact epsilon test of the embedding on range(V).

    Orthonormalizes V, sketches the basis, and reads the deviation of the
    squared singular values of Theta*orth(V) from 1.

    Returns (holds, observed_eps).
    """
    V = as_array(V)
    Q, R = householder_qr(V)
    d = np.abs(np.diag(R.data))
    if d.size and d.min() <= V.shape[0] * FINE.u * max(d.max(), 1e-300):
        raise RankDeficiencyError(
            f"subspace basis is numerically rank deficient (min diag {d.min():.3e})")
    S = apply(theta, Q.data)
    sv = np.linalg.svd(S.data, compute_uv=False)
    observed = max(1.0 - sv[-1] ** 2, sv[0] ** 2 - 1.0)
    return observed <= epsilon, float(observed)


def operator_norm_bound_check(theta: SketchOperator) -> float:
    """Frobenius norm of the materialized operator (test-scale only)."""
    return float(np.linalg.norm(materialize(theta), "fro"))


def to_line(theta: SketchOperator) -> str:
    return f"{theta.kind} {theta.k} {theta.n} {theta.seed}"


def from_line(line: str) -> SketchOperator:
    parts = line.split()
    if len(parts) != 4:
        raise ValueError(f"operator line must be 'kind k n seed', got {line!r}")
    kind, k, n, seed = parts
    return make_operator(kind, int(k), int(n), int(seed))
