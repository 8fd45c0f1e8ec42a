"""Precision-tagged dense linear algebra primitives.

Every higher-level routine in this package composes these kernels: a GEMM
whose elementary operations round at a selectable unit roundoff, Householder
QR, Cholesky, triangular solves, a small dense Hessenberg eigensolver, and a
Jacobi-SVD condition estimator.

Matrices are stored in binary64 column-major layout regardless of the
precision tag; coarse operations down-convert their inputs, compute in
binary32, and store the (exactly representable) results back in binary64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.linalg import lapack

from .errors import (
    EigenConvergenceError,
    NotPositiveDefiniteError,
    ShapeError,
    SingularTriangularError,
)

__all__ = [
    "PrecisionSpec",
    "COARSE",
    "FINE",
    "Matrix",
    "BlockPartition",
    "as_array",
    "gemm",
    "householder_qr",
    "cholesky",
    "triangular_solve",
    "hessenberg_eig",
    "cond_estimate",
]


@dataclass(frozen=True)
class PrecisionSpec:
    """Working precision of an operation: 'coarse' is binary32, 'fine' binary64."""

    format: str

    def __post_init__(self):
        if self.format not in ("coarse", "fine"):
            raise ValueError(f"unknown precision format {self.format!r}")

    @property
    def u(self) -> float:
        """Unit roundoff of the format."""
        return 2.0 ** -24 if self.format == "coarse" else 2.0 ** -53

    @property
    def dtype(self):
        return np.float32 if self.format == "coarse" else np.float64


COARSE = PrecisionSpec("coarse")
FINE = PrecisionSpec("fine")


def as_array(X) -> np.ndarray:
    """Unwrap a Matrix (or pass through an ndarray) as a 2-D float64 array."""
    if isinstance(X, Matrix):
        return X.data
    A = np.asarray(X, dtype=np.float64)
    if A.ndim == 1:
        A = A.reshape(-1, 1)
    if A.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got ndim={A.ndim}")
    return A


@dataclass(eq=False)
class Matrix:
    """Dense column-major binary64 matrix with an attached precision tag.

    The tag records which unit roundoff produced the entries; storage is
    always binary64 (binary32 values embed exactly).
    """

    data: np.ndarray
    precision: PrecisionSpec = FINE

    def __post_init__(self):
        A = np.asarray(self.data, dtype=np.float64)
        if A.ndim == 1:
            A = A.reshape(-1, 1)
        if A.ndim != 2:
            raise ShapeError(f"Matrix requires 2-D data, got ndim={A.ndim}")
        if not np.all(np.isfinite(A)):
            raise ValueError("Matrix entries must be finite")
        self.data = np.asfortranarray(A)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        if dtype is None and not copy:
            return self.data
        return np.array(self.data, dtype=dtype)


@dataclass(frozen=True)
class BlockPartition:
    """Column-block layout: p blocks of nominal width m_p over m columns.

    The default layout is uniform with a ragged tail; `widths` overrides it
    for ragged-head layouts (the s-step basis uses [1, s, ..., s]).
    """

    block_width: int
    num_blocks: int
    total_cols: int
    widths: tuple = field(default=None)

    def __post_init__(self):
        m_p, p, m = self.block_width, self.num_blocks, self.total_cols
        if m_p < 1 or p < 1 or m < 1:
            raise ValueError("partition counts must be positive")
        if self.widths is not None:
            w = tuple(int(x) for x in self.widths)
            object.__setattr__(self, "widths", w)
            if len(w) != p or sum(w) != m or any(x < 1 for x in w):
                raise ValueError(f"explicit widths {w} inconsistent with p={p}, m={m}")
        else:
            w_last = m - m_p * (p - 1)
            if not (1 <= w_last <= m_p):
                raise ValueError(
                    f"partition m={m}, m_p={m_p}, p={p} has invalid tail width {w_last}"
                )

    @classmethod
    def uniform(cls, total_cols: int, block_width: int) -> "BlockPartition":
        p = -(-total_cols // block_width)
        return cls(block_width, p, total_cols)

    def block_widths(self) -> tuple:
        if self.widths is not None:
            return self.widths
        m_p, p, m = self.block_width, self.num_blocks, self.total_cols
        return tuple([m_p] * (p - 1) + [m - m_p * (p - 1)])

    def offsets(self) -> tuple:
        """Start offset of each block, plus a final sentinel equal to m."""
        out = [0]
        for w in self.block_widths():
            out.append(out[-1] + w)
        return tuple(out)


# ---------------------------------------------------------------------------
# GEMM with controlled elementary rounding
# ---------------------------------------------------------------------------

def gemm(alpha: float, A, B, beta: float = 0.0, C=None,
         prec: PrecisionSpec = FINE) -> Matrix:
    """fl(alpha*A*B + beta*C) with every elementary multiply/add rounded per prec.

    The accumulation order is fixed: out[i, j] starts from fl(beta*C[i, j])
    and adds fl(alpha*fl(A[i, l]*B[l, j])) for l ascending. Results are
    bit-reproducible and, in coarse mode, bit-identical to running the same
    loop nest entirely in binary32.
    """
    A = as_array(A)
    B = as_array(B)
    if A.shape[1] != B.shape[0]:
        raise ShapeError(f"gemm inner dimensions disagree: {A.shape} x {B.shape}")
    n, m = A.shape[0], B.shape[1]
    if C is not None:
        C = as_array(C)
        if C.shape != (n, m):
            raise ShapeError(f"gemm C has shape {C.shape}, expected {(n, m)}")
    elif beta != 0.0:
        raise ShapeError("gemm beta != 0 requires C")
    dt = prec.dtype
    Ad = A.astype(dt, copy=False)
    Bd = B.astype(dt, copy=False)
    if C is None or beta == 0.0:
        acc = np.zeros((n, m), dtype=dt, order="F")
    elif beta == 1.0:
        acc = np.asfortranarray(C.astype(dt))
    else:
        acc = np.asfortranarray(dt(beta) * C.astype(dt))
    a = dt(alpha)
    for l in range(A.shape[1]):
        term = Ad[:, l : l + 1] * Bd[l : l + 1, :]
        if alpha == -1.0:
            acc -= term
        elif alpha == 1.0:
            acc += term
        else:
            acc += a * term
    return Matrix(acc.astype(np.float64), precision=prec)


# ---------------------------------------------------------------------------
# Factorizations (LAPACK-backed, fine precision)
# ---------------------------------------------------------------------------

def householder_qr(A) -> tuple:
    """Economic Householder QR with the R diagonal made nonnegative.

    Returns (Q, R) with A = QR; sign flips are applied per column so that
    diag(R) >= 0 (zero stays zero for rank-deficient columns).
    """
    A = as_array(A)
    n, m = A.shape
    if n < m:
        raise ShapeError(f"householder_qr requires rows >= cols, got {A.shape}")
    Q, R = scipy.linalg.qr(A, mode="economic")
    d = np.sign(np.diag(R))
    d[d == 0.0] = 1.0
    Q = Q * d
    R = d[:, None] * R
    return Matrix(Q), Matrix(R)


def cholesky(G) -> Matrix:
    """Upper-triangular Cholesky factor R with R^T R = G."""
    G = as_array(G)
    n, m = G.shape
    if n != m:
        raise ShapeError(f"cholesky requires a square matrix, got {G.shape}")
    if not np.allclose(G, G.T, rtol=0.0, atol=1e-10 * max(1.0, abs(G).max())):
        raise ShapeError("cholesky input is not symmetric")
    R, info = lapack.dpotrf(G, lower=0, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(info)
    if info < 0:
        raise ValueError(f"dpotrf illegal argument {-info}")
    return Matrix(R)


def triangular_solve(R, B, side: str = "left") -> Matrix:
    """Solve RX = B ('left') or XR = B ('right') for upper-triangular R."""
    R = as_array(R)
    B = as_array(B)
    n = R.shape[0]
    if R.shape[1] != n:
        raise ShapeError(f"triangular_solve requires square R, got {R.shape}")
    d = np.abs(np.diag(R))
    if np.any(d == 0.0):
        raise SingularTriangularError(int(np.argmin(d != 0.0)))
    if side == "left":
        if B.shape[0] != n:
            raise ShapeError(f"RX=B shape mismatch: {R.shape} vs {B.shape}")
        X = scipy.linalg.solve_triangular(R, B, lower=False)
    elif side == "right":
        if B.shape[1] != n:
            raise ShapeError(f"XR=B shape mismatch: {B.shape} vs {R.shape}")
        X = scipy.linalg.solve_triangular(R, B.T, trans="T", lower=False).T
    else:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    return Matrix(X)


# ---------------------------------------------------------------------------
# Hessenberg eigensolver: Francis double-shift QR + inverse iteration
# ---------------------------------------------------------------------------

def _francis_eigvals(H: np.ndarray, max_window_its: int = 30) -> np.ndarray:
    """Eigenvalues of an upper Hessenberg matrix by implicit double-shift QR.

    Eigenvalues-only bulge chase restricted to the active window; deflated
    coupling blocks are never referenced again, so they are left stale.
    """
    H = np.array(H, dtype=np.float64, order="C")
    n = H.shape[0]
    eig = np.empty(n, dtype=np.complex128)
    anorm = np.sum(np.abs(H))
    total_cap = 30 * n
    total = 0
    t_shift = 0.0  # accumulated exceptional-shift offset on the diagonal
    nn = n - 1
    while nn >= 0:
        its = 0
        while True:
            # locate the start l of the trailing irreducible window
            l = nn
            while l > 0:
                s = abs(H[l - 1, l - 1]) + abs(H[l, l])
                if s == 0.0:
                    s = anorm
                if abs(H[l, l - 1]) + s == s:
                    H[l, l - 1] = 0.0
                    break
                l -= 1
            x = H[nn, nn]
            if l == nn:  # 1x1 block converged
                eig[nn] = x + t_shift
                nn -= 1
                break
            y = H[nn - 1, nn - 1]
            w = H[nn, nn - 1] * H[nn - 1, nn]
            if l == nn - 1:  # 2x2 block converged: closed-form eigenvalues
                p = 0.5 * (y - x)
                q = p * p + w
                z = np.sqrt(abs(q))
                x += t_shift
                if q >= 0.0:  # real pair
                    z = p + (z if p >= 0.0 else -z)
                    eig[nn - 1] = eig[nn] = x + z
                    if z != 0.0:
                        eig[nn] = x - w / z
                else:
                    eig[nn - 1] = complex(x + p, z)
                    eig[nn] = complex(x + p, -z)
                nn -= 2
                break
            if its >= max_window_its or total >= total_cap:
                raise EigenConvergenceError(nn, total)
            if its in (10, 20):
                # ad hoc exceptional shift against shift cycling
                t_shift += x
                for i in range(l, nn + 1):
                    H[i, i] -= x
                s = abs(H[nn, nn - 1]) + abs(H[nn - 1, nn - 2])
                x = y = 0.75 * s
                w = -0.4375 * s * s
            its += 1
            total += 1
            # start the bulge where two consecutive subdiagonals are small
            m = nn - 2
            while m >= l:
                z = H[m, m]
                r = x - z
                s = y - z
                p = (r * s - w) / H[m + 1, m] + H[m, m + 1]
                q = H[m + 1, m + 1] - z - r - s
                r = H[m + 2, m + 1]
                s = abs(p) + abs(q) + abs(r)
                p /= s
                q /= s
                r /= s
                if m == l:
                    break
                u = abs(H[m, m - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(H[m - 1, m - 1]) + abs(z) + abs(H[m + 1, m + 1]))
                if u + v == v:
                    break
                m -= 1
            for i in range(m + 2, nn + 1):
                H[i, i - 2] = 0.0
            for i in range(m + 3, nn + 1):
                H[i, i - 3] = 0.0
            # double implicit QR sweep on rows/cols m..nn
            for k in range(m, nn):
                last = k == nn - 1
                if k != m:
                    p = H[k, k - 1]
                    q = H[k + 1, k - 1]
                    r = 0.0 if last else H[k + 2, k - 1]
                    x = abs(p) + abs(q) + abs(r)
                    if x == 0.0:
                        continue
                    p /= x
                    q /= x
                    r /= x
                s = np.sqrt(p * p + q * q + r * r)
                if p < 0.0:
                    s = -s
                if s == 0.0:
                    continue
                if k == m:
                    if l != m:
                        H[k, k - 1] = -H[k, k - 1]
                else:
                    H[k, k - 1] = -s * x
                p += s
                x = p / s
                y = q / s
                z = r / s
                q /= p
                r /= p
                cols = slice(k, nn + 1)
                if last:
                    t = H[k, cols] + q * H[k + 1, cols]
                    H[k, cols] -= t * x
                    H[k + 1, cols] -= t * y
                else:
                    t = H[k, cols] + q * H[k + 1, cols] + r * H[k + 2, cols]
                    H[k, cols] -= t * x
                    H[k + 1, cols] -= t * y
                    H[k + 2, cols] -= t * z
                rows = slice(l, min(nn, k + 3) + 1)
                if last:
                    t = x * H[rows, k] + y * H[rows, k + 1]
                    H[rows, k] -= t
                    H[rows, k + 1] -= t * q
                else:
                    t = x * H[rows, k] + y * H[rows, k + 1] + z * H[rows, k + 2]
                    H[rows, k] -= t
                    H[rows, k + 1] -= t * q
                    H[rows, k + 2] -= t * r
    return eig


def _hessenberg_lu(A: np.ndarray):
    """LU with partial pivoting of a complex Hessenberg matrix.

    Returns (U, mult, piv) for repeated solves; exact zero pivots are
    replaced by a tiny value so inverse iteration can proceed.
    """
    n = A.shape[0]
    U = np.array(A, dtype=np.complex128, order="C")
    tiny = np.finfo(np.float64).eps * max(1.0, np.abs(A).sum()) * 1e-3
    mult = np.zeros(max(n - 1, 0), dtype=np.complex128)
    piv = np.zeros(max(n - 1, 0), dtype=bool)
    for j in range(n - 1):
        if abs(U[j + 1, j]) > abs(U[j, j]):
            U[[j, j + 1], j:] = U[[j + 1, j], j:]
            piv[j] = True
        if U[j, j] == 0.0:
            U[j, j] = tiny
        m = U[j + 1, j] / U[j, j]
        mult[j] = m
        U[j + 1, j:] -= m * U[j, j:]
        U[j + 1, j] = 0.0
    if U[n - 1, n - 1] == 0.0:
        U[n - 1, n - 1] = tiny
    return U, mult, piv


def _hessenberg_lu_solve(U, mult, piv, b):
    n = U.shape[0]
    y = np.array(b, dtype=np.complex128)
    for j in range(n - 1):
        if piv[j]:
            y[j], y[j + 1] = y[j + 1], y[j]
        y[j + 1] -= mult[j] * y[j]
    x = np.zeros(n, dtype=np.complex128)
    for i in range(n - 1, -1, -1):
        x[i] = (y[i] - U[i, i + 1 :] @ x[i + 1 :]) / U[i, i]
    return x


def _inverse_iteration(H: np.ndarray, lam: complex, neighbors, seed: int):
    """One right eigenvector of Hessenberg H for eigenvalue lam.

    Runs a few inverse-iteration steps on (H - lam*I); the start vector is
    seeded deterministically, and the iterate is orthogonalized against
    previously found vectors of (near-)coincident eigenvalues.
    """
    n = H.shape[0]
    A = H.astype(np.complex128)
    A[np.diag_indices(n)] -= lam
    U, mult, piv = _hessenberg_lu(A)
    rng = np.random.Generator(np.random.Philox(seed))
    v = rng.standard_normal(n) + 0.1j * rng.standard_normal(n)
    v /= np.linalg.norm(v)
    scale = max(1.0, np.linalg.norm(H, "fro"))
    target = 100.0 * np.finfo(np.float64).eps * n * scale
    best = None
    best_res = np.inf
    for _ in range(5):
        w = _hessenberg_lu_solve(U, mult, piv, v)
        for u in neighbors:
            w -= (np.conj(u) @ w) * u
        nw = np.linalg.norm(w)
        if nw == 0.0 or not np.isfinite(nw):
            v = rng.standard_normal(n) + 0.1j * rng.standard_normal(n)
            v /= np.linalg.norm(v)
            continue
        v = w / nw
        res = np.linalg.norm(H @ v - lam * v)
        if res < best_res:
            best, best_res = v.copy(), res
        if res <= 0.1 * target:
            break
    return best


def hessenberg_eig(H) -> tuple:
    """Eigenvalues and right eigenvectors of a real upper Hessenberg matrix.

    Eigenvalues come from Francis double-shift QR iteration; eigenvectors
    from inverse iteration on the original matrix. Values are sorted by
    descending magnitude with conjugate pairs adjacent (positive imaginary
    part first); for a conjugate pair the second vector is the conjugate of
    the first.

    Returns
    -------
    values : complex ndarray, shape (dim,)
    vectors : complex ndarray, shape (dim, dim), unit 2-norm columns
    """
    H = as_array(H)
    n, m = H.shape
    if n != m:
        raise ShapeError(f"hessenberg_eig requires a square matrix, got {H.shape}")
    if n > 2 and np.any(np.tril(H, -2) != 0.0):
        raise ShapeError("input is not upper Hessenberg (nonzeros below subdiagonal)")
    if n == 0:
        return np.empty(0, dtype=complex), np.empty((0, 0), dtype=complex)
    vals = _francis_eigvals(H)
    order = np.argsort(-np.abs(vals), kind="stable")
    vals = vals[order]
    # keep conjugate pairs adjacent with Im > 0 first
    i = 0
    while i < n - 1:
        if vals[i].imag != 0.0 and vals[i].imag < 0.0 and \
                np.isclose(vals[i], np.conj(vals[i + 1])):
            vals[i], vals[i + 1] = vals[i + 1], vals[i]
        i += 2 if vals[i].imag != 0.0 else 1
    vecs = np.zeros((n, n), dtype=np.complex128)
    scale = max(1.0, np.linalg.norm(H, "fro"))
    done = {}
    i = 0
    while i < n:
        lam = vals[i]
        if lam.imag < 0.0 and i > 0 and np.isclose(np.conj(lam), vals[i - 1]):
            vecs[:, i] = np.conj(vecs[:, i - 1])
            i += 1
            continue
        neighbors = [vecs[:, j] for j, lj in done.items()
                     if abs(lj - lam) <= 1e-8 * scale]
        v = _inverse_iteration(H, lam, neighbors, seed=0x5EED0 + i)
        vecs[:, i] = v
        done[i] = lam
        i += 1
    return vals, vecs


# ---------------------------------------------------------------------------
# Condition estimation via one-sided Jacobi SVD
# ---------------------------------------------------------------------------

def _jacobi_singular_values(A: np.ndarray) -> np.ndarray:
    sva, _, _, work, _, info = lapack.dgejsv(A)
    if info < 0:
        raise ValueError(f"dgejsv illegal argument {-info}")
    # dgejsv reports values scaled by work[0]/work[1]
    return sva * (work[0] / work[1])


def cond_estimate(A) -> float:
    """sigma_max / sigma_min via one-sided Jacobi SVD (LAPACK gejsv).

    Returns +inf when the smallest singular value underflows to zero.
    """
    A = as_array(A)
    n, m = A.shape
    if n < m:
        raise ShapeError(f"cond_estimate requires rows >= cols, got {A.shape}")
    sv = _jacobi_singular_values(A)
    smax = float(np.max(sv))
    smin = float(np.min(sv))
    if smin == 0.0:
        return float("inf")
    return smax / smin
