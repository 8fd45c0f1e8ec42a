"""Randomized block Gram-Schmidt with multi-precision execution.

Per block, the expensive n-dimensional projection runs at the coarse
roundoff while sketches, least-squares solves, and inter-block
orthogonalization run fine. The output carries the sketches S = Theta*Q and
P = Theta*W plus a posteriori certification quantities computable from
k-dimensional data alone.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import mmio, sketching
from .errors import (
    CertificationError,
    DependentBlockError,
    InterblockError,
    NotPositiveDefiniteError,
    RankDeficiencyError,
    ShapeError,
    SingularTriangularError,
)
from .kernels import (
    COARSE,
    FINE,
    BlockPartition,
    Matrix,
    PrecisionSpec,
    as_array,
    cholesky,
    cond_estimate,
    gemm,
    householder_qr,
    triangular_solve,
)

__all__ = [
    "RbgsConfig",
    "BlockQR",
    "CertReport",
    "rbgs",
    "RbgsSweep",
    "ls_richardson",
    "ls_bmgs_reorth",
    "ls_cg_normal",
    "ls_householder_direct",
    "interblock_rgs",
    "interblock_sketched_cholqr",
    "interblock_l2_cholqr",
    "certify",
    "cholesky_qr_postprocess",
    "certify_embedding",
    "save_blockqr",
    "load_blockqr",
    "parse_method",
]

_METHOD_RE = re.compile(r"^([a-z0-9_]+)(?:[(:]\s*(\d+)\s*\)?)?$")

_DEFAULT_PARAMS = {"richardson": 5, "bmgs_reorth": 1, "cg_normal": 20,
                   "sketched_cholqr": 1}


def parse_method(spec: str):
    """Parse 'name', 'name(3)' or 'name:3' into (name, param)."""
    m = _METHOD_RE.match(spec.strip().lower())
    if not m:
        raise ValueError(f"cannot parse method spec {spec!r}")
    name, param = m.group(1), m.group(2)
    if param is not None:
        param = int(param)
        if param < 1:
            raise ValueError(f"method parameter must be >= 1 in {spec!r}")
    else:
        param = _DEFAULT_PARAMS.get(name)
    return name, param


@dataclass
class RbgsConfig:
    """RBGS knobs. `partition` may stay None when a Krylov driver derives it."""

    partition: BlockPartition = None
    ls_solver: str = "richardson(5)"
    interblock: str = "l2_plus_cholqr"
    coarse: PrecisionSpec = COARSE
    fine: PrecisionSpec = FINE
    certify_blocks: bool = False
    resketch: bool = False

    def __post_init__(self):
        if self.fine.u > self.coarse.u:
            raise ValueError("fine precision must not be coarser than coarse")
        name, param = parse_method(self.ls_solver)
        if name not in ("richardson", "bmgs_reorth", "cg_normal", "householder_direct"):
            raise ValueError(f"unknown ls solver {self.ls_solver!r}")
        if name != "householder_direct" and (param is None or param < 1):
            raise ValueError(f"solver {name} needs a positive iteration count")
        iname, _ = parse_method(self.interblock)
        if iname not in ("rgs_single", "sketched_cholqr", "l2_plus_cholqr"):
            raise ValueError(f"unknown interblock method {self.interblock!r}")


@dataclass(frozen=True)
class CertReport:
    delta: float
    delta_tilde: float
    per_block_ortho: tuple = ()
    per_block_resid: tuple = ()

    def __post_init__(self):
        vals = (self.delta, self.delta_tilde, *self.per_block_ortho,
                *self.per_block_resid)
        if not all(np.isfinite(v) and v >= 0.0 for v in vals):
            raise ValueError("certification quantities must be finite and nonnegative")


@dataclass(eq=False)
class BlockQR:
    Q: Matrix
    R: Matrix
    S: Matrix
    P: Matrix
    partition: BlockPartition
    cert: CertReport = None


def _round_to(A: np.ndarray, prec: PrecisionSpec) -> np.ndarray:
    if prec.format == "coarse":
        return A.astype(np.float32).astype(np.float64)
    return A


# ---------------------------------------------------------------------------
# Sketched least-squares solvers (Step 2)
# ---------------------------------------------------------------------------

def ls_richardson(S, Pi, l: int, prec: PrecisionSpec = FINE) -> Matrix:
    """l Richardson sweeps on the normal system: X <- X + S^T (Pi - S X).

    With orthonormal S one sweep is exact; in general the error contracts by
    a factor ||I - S^T S|| per sweep.
    """
    dt = prec.dtype
    Sd = as_array(S).astype(dt, copy=False)
    Pd = as_array(Pi).astype(dt, copy=False)
    X = np.zeros((Sd.shape[1], Pd.shape[1]), dtype=dt)
    for _ in range(l):
        X = X + Sd.T @ (Pd - Sd @ X)
    return Matrix(X.astype(np.float64))


def ls_bmgs_reorth(S_blocks, Pi, l: int, prec: PrecisionSpec = FINE) -> Matrix:
    """l block-MGS sweeps with a running residual.

    Each sweep visits the blocks in order, accumulating the coefficient
    increment S_j^T Pi and deflating Pi immediately, so later blocks see the
    partially projected right-hand side; extra sweeps only add corrections.
    """
    dt = prec.dtype
    blocks = [as_array(Sj).astype(dt, copy=False) for Sj in S_blocks]
    P = as_array(Pi).astype(dt).copy()
    Xs = [np.zeros((Sj.shape[1], P.shape[1]), dtype=dt) for Sj in blocks]
    for _ in range(l):
        for j, Sj in enumerate(blocks):
            delta = Sj.T @ P
            Xs[j] += delta
            P -= Sj @ delta
    return Matrix(np.vstack(Xs).astype(np.float64))


def ls_cg_normal(S, Pi, iters: int, prec: PrecisionSpec = FINE) -> Matrix:
    """Fixed-count CG on (S^T S) X = S^T Pi, zero start, per-column scalars."""
    dt = prec.dtype
    Sd = as_array(S).astype(dt, copy=False)
    Pd = as_array(Pi).astype(dt, copy=False)
    b = Sd.T @ Pd
    X = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = np.sum(r * r, axis=0)
    for _ in range(iters):
        Ap = Sd.T @ (Sd @ p)
        pAp = np.sum(p * Ap, axis=0)
        alpha = np.where(pAp > 0, rs / np.where(pAp > 0, pAp, 1.0), 0.0).astype(dt)
        X += alpha * p
        r -= alpha * Ap
        rs_new = np.sum(r * r, axis=0)
        beta = np.where(rs > 0, rs_new / np.where(rs > 0, rs, 1.0), 0.0).astype(dt)
        rs = rs_new
        p = r + beta * p
    return Matrix(X.astype(np.float64))


def ls_householder_direct(S, Pi, prec: PrecisionSpec = FINE) -> Matrix:
    """Least-squares minimizer of ||S Y - Pi||_F through Householder QR of S."""
    dt = prec.dtype
    Sd = as_array(S).astype(dt, copy=False)
    Pd = as_array(Pi).astype(dt, copy=False)
    Q, R = scipy.linalg.qr(Sd, mode="economic")
    d = np.abs(np.diag(R))
    if d.size and d.min() <= Sd.shape[0] * prec.u * max(d.max(), 1e-300):
        raise RankDeficiencyError(
            f"least-squares matrix numerically rank deficient (min diag {d.min():.3e})")
    X = scipy.linalg.solve_triangular(R, Q.T @ Pd, lower=False)
    return Matrix(X.astype(np.float64))


def _solve_ls(name: str, param, S: np.ndarray, offsets, Pi: np.ndarray,
              prec: PrecisionSpec) -> np.ndarray:
    if name == "richardson":
        return ls_richardson(S, Pi, param, prec).data
    if name == "bmgs_reorth":
        blocks = [S[:, offsets[j]:offsets[j + 1]]
                  for j in range(len(offsets) - 1) if offsets[j] < S.shape[1]]
        return ls_bmgs_reorth(blocks, Pi, param, prec).data
    if name == "cg_normal":
        return ls_cg_normal(S, Pi, param, prec).data
    return ls_householder_direct(S, Pi, prec).data


# ---------------------------------------------------------------------------
# Inter-block orthogonalization (Steps 4-5), always fine precision
# ---------------------------------------------------------------------------

def interblock_rgs(Qprime, theta: sketching.SketchOperator):
    """Column-wise randomized Gram-Schmidt of one block.

    Each column is sketched, solved against the sketches of the columns
    already accepted, deflated in full dimension, then re-sketched; the R
    diagonal holds the sketched norms, so the output is orthonormal in the
    <Theta., Theta.> inner product.
    """
    Qp = as_array(Qprime)
    n, w = Qp.shape
    if w > theta.k:
        raise ShapeError(f"block width {w} exceeds sketch size {theta.k}")
    Q = np.empty((n, w), order="F")
    S = np.empty((theta.k, w), order="F")
    R = np.zeros((w, w), order="F")
    threshold = n * FINE.u * np.linalg.norm(Qp, "fro")
    for t in range(w):
        v = Qp[:, t].copy()
        p = sketching.apply(theta, v.reshape(-1, 1)).data
        if t:
            qf, rf = scipy.linalg.qr(S[:, :t], mode="economic")
            y = scipy.linalg.solve_triangular(rf, qf.T @ p, lower=False)
            R[:t, t] = y[:, 0]
            v -= Q[:, :t] @ y[:, 0]
        s2 = sketching.apply(theta, v.reshape(-1, 1)).data[:, 0]
        r_tt = float(np.linalg.norm(s2))
        if r_tt <= threshold:
            raise DependentBlockError(
                t + 1, f"sketched norm {r_tt:.3e} below dependence threshold")
        R[t, t] = r_tt
        Q[:, t] = v / r_tt
        S[:, t] = s2 / r_tt
    return Matrix(Q), Matrix(R), Matrix(S)


def interblock_sketched_cholqr(Qprime, theta: sketching.SketchOperator, l: int = 1,
                               resketch: bool = False):
    """Cholesky QR in the sketched metric: R = chol(S'^T S'), Q <- Q R^{-1}.

    Run l times with the R factors multiplied together. The returned sketch
    is S'R^{-1} by default; resketch=True recomputes it as Theta*Q instead.
    One pass loses accuracy like cond(Qprime)^2, so blocks near the coarse
    conditioning limit need l >= 2 or the l2-first variant.
    """
    Q = as_array(Qprime).copy()
    w = Q.shape[1]
    R_total = np.eye(w)
    Sp = None
    RS = None
    for _ in range(max(l, 1)):
        Sp = sketching.apply(theta, Q).data
        RS = cholesky(Sp.T @ Sp).data
        Q = triangular_solve(RS, Q, side="right").data
        R_total = RS @ R_total
    if resketch:
        S = sketching.apply(theta, Q).data
    else:
        S = triangular_solve(RS, Sp, side="right").data
    return Matrix(Q), Matrix(R_total), Matrix(S)


def interblock_l2_cholqr(Qprime, theta: sketching.SketchOperator,
                         resketch: bool = False):
    """Householder QR first, then sketched CholQR of the orthonormal factor.

    The first stage leaves a well-conditioned block, so the second stage's
    triangular factor is benign regardless of cond(Qprime).
    """
    Qstar, Rprime = householder_qr(Qprime)
    Qi, R2, Si = interblock_sketched_cholqr(Qstar.data, theta, l=1, resketch=resketch)
    return Qi, Matrix(R2.data @ Rprime.data), Si


def _interblock(name: str, param, Qprime: np.ndarray, theta, resketch: bool):
    if name == "rgs_single":
        return interblock_rgs(Qprime, theta)
    if name == "sketched_cholqr":
        return interblock_sketched_cholqr(Qprime, theta, l=param or 1,
                                          resketch=resketch)
    return interblock_l2_cholqr(Qprime, theta, resketch=resketch)


# ---------------------------------------------------------------------------
# The sweep
# ---------------------------------------------------------------------------

class RbgsSweep:
    """Incremental RBGS: feed blocks left to right, read Q/R/S/P as they grow.

    The Krylov drivers use this directly, interleaving operator applications
    with block pushes; `rbgs` is the one-shot wrapper.
    """

    def __init__(self, n: int, theta: sketching.SketchOperator, cfg: RbgsConfig):
        if cfg.partition is None:
            raise ShapeError("config needs a partition")
        m = cfg.partition.total_cols
        if theta.n != n:
            raise ShapeError(f"sketch built for n={theta.n}, input has n={n}")
        if not (m <= theta.k <= n):
            raise ShapeError(
                f"need total cols m={m} <= sketch k={theta.k} <= n={n}")
        self.n = n
        self.theta = theta
        self.cfg = cfg
        self.solver = parse_method(cfg.ls_solver)
        self.inter = parse_method(cfg.interblock)
        self.offsets = cfg.partition.offsets()
        self.Q = np.zeros((n, m), order="F")
        self.S = np.zeros((theta.k, m), order="F")
        self.P = np.zeros((theta.k, m), order="F")
        self.R = np.zeros((m, m), order="F")
        self.blocks_done = 0
        self.cols_done = 0
        self.per_block_ortho = []
        self.per_block_resid = []
        # sketch of the block that triggered a dependence error, for callers
        # that recover from happy breakdown (GMRES on an invariant subspace)
        self.pending_P = None

    def push_block(self, W_i) -> tuple:
        """Run one RBGS iteration on block W_i; returns its column slice."""
        W_i = as_array(W_i)
        self.pending_P = None
        i = self.blocks_done + 1
        j0 = self.offsets[self.blocks_done]
        j1 = self.offsets[self.blocks_done + 1]
        if W_i.shape != (self.n, j1 - j0):
            raise ShapeError(
                f"block {i} has shape {W_i.shape}, expected {(self.n, j1 - j0)}")
        cfg = self.cfg
        P_i = _round_to(sketching.apply(self.theta, W_i).data, cfg.fine)
        if self.cols_done:
            done = slice(0, self.cols_done)
            X = _solve_ls(self.solver[0], self.solver[1], self.S[:, done],
                          self.offsets, P_i, cfg.fine)
            self.R[done, j0:j1] = X
            Qprime = gemm(-1.0, self.Q[:, done], X, beta=1.0, C=W_i,
                          prec=cfg.coarse).data
        else:
            Qprime = W_i.copy()
        w_norm = np.linalg.norm(W_i, "fro")
        if np.linalg.norm(Qprime, "fro") <= self.n * FINE.u * w_norm:
            self.pending_P = P_i
            raise DependentBlockError(i, "projected block vanished")
        try:
            Qi, Rii, Si = _interblock(self.inter[0], self.inter[1], Qprime,
                                      self.theta, cfg.resketch)
        except DependentBlockError as e:
            raise DependentBlockError(i, f"dependent column: {e}") from e
        except (RankDeficiencyError, NotPositiveDefiniteError,
                SingularTriangularError) as e:
            raise InterblockError(i, str(e)) from e
        self.Q[:, j0:j1] = Qi.data
        self.S[:, j0:j1] = Si.data
        self.P[:, j0:j1] = P_i
        self.R[j0:j1, j0:j1] = Rii.data
        if cfg.certify_blocks:
            Sp = sketching.apply(self.theta, Qprime).data
            w = j1 - j0
            self.per_block_ortho.append(float(np.linalg.norm(
                np.eye(w) - Si.data.T @ Si.data, "fro")))
            denom = np.linalg.norm(Sp, "fro")
            self.per_block_resid.append(float(
                np.linalg.norm(Sp - Si.data @ Rii.data, "fro") / denom))
        self.blocks_done += 1
        self.cols_done = j1
        return j0, j1

    def finish(self) -> "BlockQR":
        cert0 = certify(self.S[:, : self.cols_done], self.P[:, : self.cols_done],
                        self.R[: self.cols_done, : self.cols_done])
        cert = CertReport(cert0.delta, cert0.delta_tilde,
                          tuple(self.per_block_ortho), tuple(self.per_block_resid))
        return BlockQR(Matrix(self.Q), Matrix(self.R), Matrix(self.S),
                       Matrix(self.P), self.cfg.partition, cert)


def rbgs(W, theta: sketching.SketchOperator, cfg: RbgsConfig) -> BlockQR:
    """Factor W = QR with Q orthonormal in the sketched inner product."""
    W = as_array(W)
    n, m = W.shape
    if cfg.partition.total_cols != m:
        raise ShapeError(
            f"partition covers {cfg.partition.total_cols} cols, W has {m}")
    sweep = RbgsSweep(n, theta, cfg)
    off = cfg.partition.offsets()
    for b in range(cfg.partition.num_blocks):
        sweep.push_block(W[:, off[b]:off[b + 1]])
    return sweep.finish()


# ---------------------------------------------------------------------------
# Certification and post-processing
# ---------------------------------------------------------------------------

def certify(S, P, R) -> CertReport:
    """Sketched orthogonality defect and relative factorization residual.

    delta = ||I - S^T S||_F, delta_tilde = ||P - S R||_F / ||P||_F; both
    depend on k-dimensional data only.
    """
    S = as_array(S)
    P = as_array(P)
    R = as_array(R)
    p_norm = np.linalg.norm(P, "fro")
    if p_norm == 0.0:
        raise CertificationError("certification undefined for a zero sketch P")
    m = S.shape[1]
    delta = float(np.linalg.norm(np.eye(m) - S.T @ S, "fro"))
    delta_tilde = float(np.linalg.norm(P - S @ R, "fro") / p_norm)
    return CertReport(delta, delta_tilde)


def cholesky_qr_postprocess(f: BlockQR) -> BlockQR:
    """One Cholesky-QR pass turning a sketch-orthonormal Q into an l2-orthonormal one.

    The sketch is updated consistently (S R'^{-1} = Theta Q R'^{-1}), so
    certification of the new factors stays valid.
    """
    Q = f.Q.data
    c = cond_estimate(Q)
    if not (c <= 100.0):
        raise RankDeficiencyError(
            f"cond(Q) = {c:.3e} exceeds 100; refusing Cholesky post-processing")
    G = Q.T @ Q
    Rp = cholesky(G).data
    Qn = triangular_solve(Rp, Q, side="right")
    Rn = Matrix(Rp @ f.R.data)
    Sn = triangular_solve(Rp, f.S.data, side="right")
    cert = certify(Sn.data, f.P.data, Rn.data)
    return BlockQR(Qn, Rn, Sn, f.P, f.partition, cert)


def certify_embedding(Q, W, theta: sketching.SketchOperator,
                      phi: sketching.SketchOperator) -> tuple:
    """Estimate the embedding distortion of theta on range(Q) and range(W).

    A second, independent sketch phi whitens each matrix; the singular values
    of (Theta M) R_phi^{-1} then expose theta's distortion on range(M).
    """
    out = []
    for M in (Q, W):
        M = as_array(M)
        PhiM = sketching.apply(phi, M).data
        _, Rphi = householder_qr(PhiM)
        d = np.abs(np.diag(Rphi.data))
        if d.size and d.min() <= phi.k * FINE.u * max(d.max(), 1e-300):
            raise RankDeficiencyError(
                f"second sketch of the factor is rank deficient (min diag {d.min():.3e})")
        G = triangular_solve(Rphi.data, sketching.apply(theta, M).data,
                             side="right").data
        sv = np.linalg.svd(G, compute_uv=False)
        out.append(float(max(sv[0] ** 2 - 1.0, 1.0 - sv[-1] ** 2)))
    return out[0], out[1]


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_blockqr(f: BlockQR, directory: str) -> None:
    """Write Q/R/S/P as Matrix Market array files plus cert and meta text."""
    os.makedirs(directory, exist_ok=True)
    for name, M in (("Q", f.Q), ("R", f.R), ("S", f.S), ("P", f.P)):
        if M is not None:
            mmio.write_array(os.path.join(directory, name + ".mtx"), M.data)
    if f.cert is not None:
        with open(os.path.join(directory, "cert.txt"), "w") as fh:
            fh.write(f"delta={f.cert.delta!r}\n")
            fh.write(f"delta_tilde={f.cert.delta_tilde!r}\n")
            fh.write("per_block_ortho=" +
                     ",".join(repr(v) for v in f.cert.per_block_ortho) + "\n")
            fh.write("per_block_resid=" +
                     ",".join(repr(v) for v in f.cert.per_block_resid) + "\n")
    part = f.partition
    with open(os.path.join(directory, "meta.txt"), "w") as fh:
        fh.write(f"block_width={part.block_width}\n")
        fh.write(f"num_blocks={part.num_blocks}\n")
        fh.write(f"total_cols={part.total_cols}\n")
        if part.widths is not None:
            fh.write("widths=" + ",".join(str(w) for w in part.widths) + "\n")


def load_blockqr(directory: str) -> BlockQR:
    mats = {}
    for name in ("Q", "R", "S", "P"):
        path = os.path.join(directory, name + ".mtx")
        if not os.path.exists(path) and name in ("S", "P"):
            mats[name] = None
            continue
        kind, payload = mmio.read_matrix_market(path)
        if kind != "array":
            raise ValueError(f"{name}.mtx must be an array file")
        mats[name] = Matrix(payload)
    meta = {}
    with open(os.path.join(directory, "meta.txt")) as fh:
        for line in fh:
            if "=" in line:
                key, val = line.strip().split("=", 1)
                meta[key] = val
    widths = None
    if meta.get("widths"):
        widths = tuple(int(x) for x in meta["widths"].split(","))
    part = BlockPartition(int(meta["block_width"]), int(meta["num_blocks"]),
                          int(meta["total_cols"]), widths=widths)
    cert = None
    cert_path = os.path.join(directory, "cert.txt")
    if os.path.exists(cert_path):
        kv = {}
        with open(cert_path) as fh:
            for line in fh:
                if "=" in line:
                    key, val = line.strip().split("=", 1)
                    kv[key] = val
        def _floats(s):
            return tuple(float(x) for x in s.split(",")) if s else ()
        cert = CertReport(float(kv["delta"]), float(kv["delta_tilde"]),
                          _floats(kv.get("per_block_ortho", "")),
                          _floats(kv.get("per_block_resid", "")))
    return BlockQR(mats["Q"], mats["R"], mats["S"], mats["P"], part, cert)
