"""Classical block Gram-Schmidt baselines: BCGS, BMGS, BCGS2.

These run in a single configurable precision through the reproducible gemm
kernel, so coarse-precision instability is observable and repeatable. The
inter-block factorization is always binary64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    DependentBlockError,
    InterblockError,
    NotPositiveDefiniteError,
    RankDeficiencyError,
    ShapeError,
    SingularTriangularError,
)
from .kernels import (
    FINE,
    BlockPartition,
    Matrix,
    PrecisionSpec,
    as_array,
    cholesky,
    gemm,
    householder_qr,
    triangular_solve,
)
from .rbgs import BlockQR

__all__ = ["ClassicBgsConfig", "classic_bgs", "ClassicSweep"]

_METHODS = ("bcgs", "bmgs", "bcgs2")
_INTERBLOCK = ("householder", "cgs2", "cholqr")


@dataclass
class ClassicBgsConfig:
    partition: BlockPartition = None
    variant: str = "bcgs"
    interblock: str = "householder"
    precision: PrecisionSpec = FINE

    def __post_init__(self):
        if self.variant not in _METHODS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.interblock not in _INTERBLOCK:
            raise ValueError(f"unknown interblock method {self.interblock!r}")


def _interblock_qr(V: np.ndarray, how: str, block: int):
    """Dense QR of one block, always binary64."""
    try:
        if how == "householder":
            Q, R = householder_qr(V)
            return Q.data, R.data
        if how == "cgs2":
            return _cgs2(V)
        G = V.T @ V
        R = cholesky(G).data
        Q = triangular_solve(R, V, side="right").data
        return Q, R
    except (NotPositiveDefiniteError, SingularTriangularError,
            RankDeficiencyError) as e:
        raise InterblockError(block, str(e)) from e


def _cgs2(V: np.ndarray):
    """Column-wise classical Gram-Schmidt, two full passes."""
    n, w = V.shape
    Q = np.zeros((n, w), order="F")
    R = np.zeros((w, w), order="F")
    for t in range(w):
        v = V[:, t].copy()
        r = np.zeros(w)
        for _ in range(2):
            if t:
                c = Q[:, :t].T @ v
                v = v - Q[:, :t] @ c
                r[:t] += c
        nrm = float(np.linalg.norm(v))
        if nrm <= n * FINE.u * np.linalg.norm(V[:, t]):
            raise RankDeficiencyError(f"column {t + 1} dependent within block")
        R[:t, t] = r[:t]
        R[t, t] = nrm
        Q[:, t] = v / nrm
    return Q, R


class ClassicSweep:
    """Incremental classical block Gram-Schmidt; mirrors RbgsSweep's protocol."""

    def __init__(self, n: int, cfg: ClassicBgsConfig):
        m = cfg.partition.total_cols
        if m > n:
            raise ShapeError(f"more columns ({m}) than rows ({n})")
        self.n = n
        self.cfg = cfg
        self.offsets = cfg.partition.offsets()
        self.Q = np.zeros((n, m), order="F")
        self.R = np.zeros((m, m), order="F")
        self.blocks_done = 0
        self.cols_done = 0

    def push_block(self, W_i) -> tuple:
        W_i = as_array(W_i)
        i = self.blocks_done + 1
        j0 = self.offsets[self.blocks_done]
        j1 = self.offsets[self.blocks_done + 1]
        if W_i.shape != (self.n, j1 - j0):
            raise ShapeError(
                f"block {i} has shape {W_i.shape}, expected {(self.n, j1 - j0)}")
        cfg = self.cfg
        method = cfg.variant
        prec = cfg.precision
        done = slice(0, self.cols_done)
        if method == "bcgs" or not self.cols_done:
            if self.cols_done:
                Y = gemm(1.0, self.Q[:, done].T, W_i, prec=prec).data
                V = gemm(-1.0, self.Q[:, done], Y, beta=1.0, C=W_i, prec=prec).data
                self.R[done, j0:j1] = Y
            else:
                V = W_i.copy()
        elif method == "bmgs":
            V = W_i.copy()
            for b in range(self.blocks_done):
                o0, o1 = self.offsets[b], self.offsets[b + 1]
                Qb = self.Q[:, o0:o1]
                Yb = gemm(1.0, Qb.T, V, prec=prec).data
                V = gemm(-1.0, Qb, Yb, beta=1.0, C=V, prec=prec).data
                self.R[o0:o1, j0:j1] = Yb
        else:  # bcgs2: projection, inner QR, then a full second pass
            Y1 = gemm(1.0, self.Q[:, done].T, W_i, prec=prec).data
            V1 = gemm(-1.0, self.Q[:, done], Y1, beta=1.0, C=W_i, prec=prec).data
            self._check_zero(V1, W_i, i)
            U1, R1 = _interblock_qr(V1, cfg.interblock, i)
            Y2 = gemm(1.0, self.Q[:, done].T, U1, prec=prec).data
            V2 = gemm(-1.0, self.Q[:, done], Y2, beta=1.0, C=U1, prec=prec).data
            self._check_zero(V2, W_i, i)
            Qi, R2 = _interblock_qr(V2, cfg.interblock, i)
            self.R[done, j0:j1] = Y1 + Y2 @ R1
            self.R[j0:j1, j0:j1] = R2 @ R1
            self.Q[:, j0:j1] = Qi
            self.blocks_done += 1
            self.cols_done = j1
            return j0, j1
        self._check_zero(V, W_i, i)
        Qi, Rii = _interblock_qr(V, cfg.interblock, i)
        self.Q[:, j0:j1] = Qi
        self.R[j0:j1, j0:j1] = Rii
        self.blocks_done += 1
        self.cols_done = j1
        return j0, j1

    def _check_zero(self, V, W_i, i):
        # storage-precision guard: catches exact or rounding-level zero
        # blocks without cutting ill-conditioned sweeps short
        lim = self.n * FINE.u * np.linalg.norm(W_i, "fro")
        if np.linalg.norm(V, "fro") <= lim:
            raise DependentBlockError(i, "projected block vanished")

    def finish(self) -> BlockQR:
        return BlockQR(Matrix(self.Q), Matrix(self.R), None, None,
                       self.cfg.partition, None)


def classic_bgs(W, cfg: ClassicBgsConfig) -> BlockQR:
    """Factor W = QR by the configured classical block method."""
    W = as_array(W)
    n, m = W.shape
    if cfg.partition.total_cols != m:
        raise ShapeError(
            f"partition covers {cfg.partition.total_cols} cols, W has {m}")
    sweep = ClassicSweep(n, cfg)
    off = cfg.partition.offsets()
    for b in range(cfg.partition.num_blocks):
        sweep.push_block(W[:, off[b]:off[b + 1]])
    return sweep.finish()
