"""Block Krylov methods on sketch-orthonormal bases.

Arnoldi builds the basis incrementally through the RBGS sweep (or a classical
sweep for baselines); the Hessenberg data is read off the R factor, so GMRES,
FOM, and Rayleigh-Ritz work on k- and m-dimensional quantities only. The
s-step variant generates the basis block-wise with a matrix powers kernel and
recovers H from the sketches alone.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .classic import ClassicBgsConfig, ClassicSweep
from .errors import DependentBlockError, RankDeficiencyError, ShapeError
from .kernels import (
    FINE,
    BlockPartition,
    Matrix,
    PrecisionSpec,
    as_array,
    cholesky,
    hessenberg_eig,
    householder_qr,
    triangular_solve,
)
from .operators import LinearOperator
from .rbgs import RbgsConfig, RbgsSweep, _round_to, certify
from .sketching import SketchOperator

__all__ = [
    "ArnoldiDecomposition",
    "KrylovSolveReport",
    "rbgs_arnoldi",
    "classic_arnoldi",
    "block_gmres",
    "block_fom",
    "rayleigh_ritz",
    "rayleigh_ritz_l2",
    "subspace_iteration",
    "sstep_arnoldi",
]


@dataclass(eq=False)
class ArnoldiDecomposition:
    """Krylov basis Q with the Hessenberg data read off the R factor.

    H holds the R columns past the first block, so A*Q_(1:p-1) = Q*H up to
    the factorization error; R_first holds the coefficients of the starting
    block. S, P, cert are None for classical (unsketched) backends.
    """

    Q: Matrix
    H: Matrix
    R_first: Matrix
    S: Matrix
    P: Matrix
    cert: object
    partition: BlockPartition


@dataclass(eq=False)
class KrylovSolveReport:
    """Solution plus per-inner-iteration convergence data.

    residual_history holds (iteration, max relative true residual) pairs;
    basis_cond_history the 2-norm condition of the basis in use at that
    iteration; restarts the number of Arnoldi cycles run; breakdown the
    1-based block index whose projection vanished (0 when none did).
    cert_history carries one (delta, delta_tilde) pair per iteration, taken
    from the certificate of the cycle the iteration belongs to; entries are
    NaN when no sketch certificate exists (classical backend).
    """

    solution: Matrix
    residual_history: list
    basis_cond_history: list
    restarts: int
    breakdown: int = 0
    cert_history: list = None

    def __post_init__(self):
        if not self.residual_history:
            raise ValueError("residual history must be non-empty")
        if len(self.residual_history) != len(self.basis_cond_history):
            raise ValueError("history lengths must agree")
        if self.cert_history is None:
            self.cert_history = [(np.nan, np.nan)] * len(self.residual_history)
        elif len(self.cert_history) != len(self.residual_history):
            raise ValueError("history lengths must agree")


def _cond2(A: np.ndarray) -> float:
    """2-norm condition number via LAPACK singular values."""
    sv = np.linalg.svd(A, compute_uv=False)
    if sv.size == 0 or sv[-1] == 0.0:
        return float("inf")
    return float(sv[0] / sv[-1])


def _arnoldi_partition(mp: int, p: int) -> BlockPartition:
    return BlockPartition(mp, p, p * mp)


def rbgs_arnoldi(A: LinearOperator, B, theta: SketchOperator, p: int,
                 cfg: RbgsConfig = None,
                 matvec_precision: PrecisionSpec = FINE) -> ArnoldiDecomposition:
    """Block Arnoldi: W_(1)=B, W_(i)=A*Q_(i-1), orthogonalized by RBGS.

    The partition is derived from B and p (cfg.partition is ignored). The
    operator products run at matvec_precision; every other step keeps the
    RBGS precision split.
    """
    B = as_array(B)
    n, mp = B.shape
    if p < 2:
        raise ShapeError("Arnoldi needs p >= 2 blocks")
    cfg = dataclasses.replace(cfg or RbgsConfig(),
                              partition=_arnoldi_partition(mp, p))
    sweep = RbgsSweep(n, theta, cfg)
    sweep.push_block(B)
    off = sweep.offsets
    for i in range(2, p + 1):
        W_i = _round_to(A.apply(sweep.Q[:, off[i - 2]:off[i - 1]]),
                        matvec_precision)
        sweep.push_block(W_i)
    f = sweep.finish()
    return ArnoldiDecomposition(f.Q, Matrix(f.R.data[:, mp:]),
                                Matrix(f.R.data[:, :mp]), f.S, f.P, f.cert,
                                cfg.partition)


def classic_arnoldi(A: LinearOperator, B, p: int, variant: str = "bcgs2",
                    interblock: str = "householder",
                    precision: PrecisionSpec = FINE) -> ArnoldiDecomposition:
    """Block Arnoldi on a classical Gram-Schmidt backend (baseline).

    Runs entirely at `precision` including the operator products, matching a
    unique-precision execution.
    """
    B = as_array(B)
    n, mp = B.shape
    if p < 2:
        raise ShapeError("Arnoldi needs p >= 2 blocks")
    cfg = ClassicBgsConfig(_arnoldi_partition(mp, p), variant, interblock,
                           precision)
    sweep = ClassicSweep(n, cfg)
    sweep.push_block(B)
    off = sweep.offsets
    for i in range(2, p + 1):
        W_i = _round_to(A.apply(sweep.Q[:, off[i - 2]:off[i - 1]]), precision)
        sweep.push_block(W_i)
    f = sweep.finish()
    return ArnoldiDecomposition(f.Q, Matrix(f.R.data[:, mp:]),
                                Matrix(f.R.data[:, :mp]), None, None, None,
                                cfg.partition)


def _ls_qr(M: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Tall least-squares min ||M Z - T||_F through Householder QR."""
    Qm, Rm = householder_qr(M)
    return triangular_solve(Rm.data, Qm.data.T @ T).data


def block_gmres(A: LinearOperator, B, theta: SketchOperator, p: int,
                restarts: int = 1, cfg=None, tol: float = 0.0,
                matvec_precision: PrecisionSpec = FINE) -> KrylovSolveReport:
    """Restarted block GMRES over a sketch-orthonormal (or classical) basis.

    Per cycle an order-p Arnoldi decomposition of the residual block is
    built; for each truncation level the small least-squares problem against
    the Hessenberg data is solved in binary64 and the true residuals are
    measured with a fresh operator product. Restarts continue on the
    residual-corrected system until `restarts` cycles are done or every
    right-hand side is below tol. Passing a ClassicBgsConfig as cfg selects
    the classical backend (theta is then unused and may be None).

    A vanished projection (invariant subspace reached) truncates the cycle:
    the sketched least-squares problem over the completed basis plus the
    dependent block's sketch is solved instead, the breakdown order is
    reported, and iteration stops.
    """
    B = as_array(B)
    n, mp = B.shape
    if p < 2:
        raise ShapeError("GMRES needs p >= 2 blocks")
    classic = isinstance(cfg, ClassicBgsConfig)
    part = _arnoldi_partition(mp, p)
    bnorms = np.linalg.norm(B, axis=0)
    bnorms[bnorms == 0.0] = 1.0
    X = np.zeros_like(B)
    history = []
    conds = []
    certs = []
    it = 0
    breakdown = 0
    cycles = 0

    def rel_residual(Xc):
        R = B - A.apply(Xc)
        return float(np.max(np.linalg.norm(R, axis=0) / bnorms))

    for cycle in range(max(restarts, 1)):
        cycles += 1
        Bres = B - A.apply(X) if cycle else B.copy()
        if classic:
            sweep = ClassicSweep(n, dataclasses.replace(cfg, partition=part))
            mv_prec = cfg.precision
        else:
            sweep = RbgsSweep(n, theta,
                              dataclasses.replace(cfg or RbgsConfig(),
                                                  partition=part))
            mv_prec = matvec_precision
        bk = 0
        try:
            sweep.push_block(Bres)
            off = sweep.offsets
            for i in range(2, p + 1):
                W_i = _round_to(A.apply(sweep.Q[:, off[i - 2]:off[i - 1]]),
                                mv_prec)
                sweep.push_block(W_i)
        except DependentBlockError as e:
            bk = e.block
        q, c = sweep.blocks_done, sweep.cols_done
        if q == 0:
            # the residual block itself is dependent: already converged
            it += 1
            history.append((it, rel_residual(X)))
            conds.append(1.0)
            certs.append((np.nan, np.nan))
            breakdown = bk
            break
        if classic:
            cert_pair = (np.nan, np.nan)
        else:
            rep = certify(sweep.S[:, :c], sweep.P[:, :c], sweep.R[:c, :c])
            cert_pair = (rep.delta, rep.delta_tilde)
        Hf = sweep.R[:c, mp:c]
        Rf = sweep.R[:c, :mp]
        U_best = None
        rel_best = None
        for j in range(1, q):
            rows = (j + 1) * mp
            Z = _ls_qr(Hf[:rows, :j * mp], Rf[:rows, :])
            Uj = sweep.Q[:, :j * mp] @ Z
            rel = rel_residual(X + Uj)
            it += 1
            history.append((it, rel))
            conds.append(_cond2(sweep.Q[:, :rows]))
            certs.append(cert_pair)
            if rel_best is None or rel <= rel_best:
                U_best, rel_best = Uj, rel
        if bk and not classic:
            PA = np.hstack([sweep.P[:, mp:c], sweep.pending_P])
            Z = _ls_qr(PA, sweep.P[:, :mp])
            Uj = sweep.Q[:, :c] @ Z
            rel = rel_residual(X + Uj)
            it += 1
            history.append((it, rel))
            conds.append(_cond2(sweep.Q[:, :c]))
            certs.append(cert_pair)
            if rel_best is None or rel <= rel_best:
                U_best, rel_best = Uj, rel
        if U_best is not None:
            X = X + U_best
        if bk:
            breakdown = bk
            break
        if tol > 0.0 and rel_best is not None and rel_best <= tol:
            break
    if not history:
        history.append((1, rel_residual(X)))
        conds.append(1.0)
        certs.append((np.nan, np.nan))
    return KrylovSolveReport(Matrix(X), history, conds, cycles, breakdown,
                             certs)


def block_fom(decomp: ArnoldiDecomposition) -> Matrix:
    """Galerkin (full orthogonalization) solution from an Arnoldi decomposition.

    U = Q_(1:p-1) H_(1:p-1,1:p-1)^{-1} R_(1:p-1,1); the sketched residual is
    then orthogonal to the sketched basis up to the certification error.
    """
    Q = decomp.Q.data
    H = decomp.H.data
    mp = decomp.R_first.cols
    c = Q.shape[1] - mp
    Hsq = H[:c, :c]
    try:
        # scipy's diagonal fast path divides by zero instead of raising
        with np.errstate(divide="ignore", invalid="ignore"):
            Z = scipy.linalg.solve(Hsq, decomp.R_first.data[:c, :])
    except np.linalg.LinAlgError as e:
        raise RankDeficiencyError(f"reduced Galerkin matrix is singular: {e}") from e
    if not np.all(np.isfinite(Z)):
        raise RankDeficiencyError("reduced Galerkin matrix is singular")
    return Matrix(Q[:, :c] @ Z)


def _select_extreme(vals: np.ndarray, want: int):
    """Indices of the `want` largest-magnitude eigenvalues, conjugate pairs intact.

    When one slot remains and the next candidate is a pair, the pair is
    skipped in favor of the next real eigenvalue; if none exists the real
    part of the leading skipped pair fills the slot.
    """
    idx = []
    skipped_pair = None
    t = 0
    nv = len(vals)
    while t < nv and len(idx) < want:
        is_pair = (abs(vals[t].imag) > 0 and t + 1 < nv
                   and np.isclose(vals[t + 1], np.conj(vals[t])))
        if is_pair:
            if want - len(idx) >= 2:
                idx.extend((t, t + 1))
            elif skipped_pair is None:
                skipped_pair = t
            t += 2
        else:
            idx.append(t)
            t += 1
    if len(idx) < want and skipped_pair is not None:
        idx.append(skipped_pair)
    return idx


def _real_restart_basis(mu: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Real basis of the selected Ritz directions: Re/Im pairs for complex ones."""
    cols = []
    j = 0
    while j < len(mu):
        if (abs(mu[j].imag) > 0 and j + 1 < len(mu)
                and np.isclose(mu[j + 1], np.conj(mu[j]))):
            cols.append(Y[:, j].real)
            cols.append(Y[:, j].imag)
            j += 2
        else:
            cols.append(Y[:, j].real)
            j += 1
    return np.column_stack(cols)


def _apply_complex(A: LinearOperator, U: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(U):
        return A.apply(np.ascontiguousarray(U.real)) + 1j * A.apply(
            np.ascontiguousarray(U.imag))
    return A.apply(U)


def _ritz_true_residuals(A, Q, c, mu, Y):
    U = Q[:, :c] @ Y
    AU = _apply_complex(A, U)
    out = []
    for t in range(U.shape[1]):
        u = U[:, t]
        denom = max(abs(mu[t]), 1e-300) * np.linalg.norm(u)
        out.append(float(np.linalg.norm(AU[:, t] - mu[t] * u) / denom))
    return out


def _rayleigh_ritz_impl(A, B, theta, p, n_iter, cfg, l2_correct,
                        matvec_precision, history):
    B = as_array(B).copy()
    n, mp = B.shape
    if p < 2:
        raise ShapeError("Rayleigh-Ritz needs p >= 2 blocks")
    if n_iter < 1:
        raise ShapeError("need at least one outer iteration")
    part = _arnoldi_partition(mp, p)
    mu = Ysel = ests = None
    Q = None
    c = 0
    for outer in range(1, n_iter + 1):
        sweep = RbgsSweep(n, theta, dataclasses.replace(cfg, partition=part))
        bk = 0
        try:
            sweep.push_block(B)
            off = sweep.offsets
            for i in range(2, p + 1):
                W_i = _round_to(A.apply(sweep.Q[:, off[i - 2]:off[i - 1]]),
                                matvec_precision)
                sweep.push_block(W_i)
        except DependentBlockError as e:
            if sweep.blocks_done == 0:
                raise
            bk = e.block
        cols = sweep.cols_done
        if bk:
            # invariant subspace reached: the dependent block's coefficients
            # (already solved against the sketches) complete a square
            # Galerkin matrix over the basis built so far
            c = cols
            Hstack = sweep.R[:c, mp:c + mp].copy()
        else:
            c = cols - mp
            Hstack = sweep.R[:cols, mp:cols].copy()
        Q = sweep.Q[:, :cols].copy()
        cert = certify(sweep.S[:, :cols], sweep.P[:, :cols],
                       sweep.R[:cols, :cols])
        if l2_correct:
            Rp = cholesky(Q.T @ Q).data
            Q = triangular_solve(Rp, Q, side="right").data
            Hstack = Rp @ Hstack
            Hstack = triangular_solve(Rp[:c, :c], Hstack, side="right").data
        # reduce the banded Hessenberg to scalar Hessenberg form, solve, lift
        Hh, V = scipy.linalg.hessenberg(Hstack[:c, :c], calc_q=True)
        vals, vecs = hessenberg_eig(Hh)
        Y = V @ vecs
        sel = _select_extreme(vals, mp)
        mu = vals[sel]
        Ysel = Y[:, sel]
        Hbot = Hstack[c:, :c]
        ests = [float(np.linalg.norm(Hbot @ Ysel[:, t]))
                for t in range(Ysel.shape[1])]
        if history is not None:
            history.append({
                "iteration": outer,
                "cond_q": _cond2(Q),
                "values": tuple(complex(v) for v in mu),
                "residuals": tuple(_ritz_true_residuals(A, Q, c, mu, Ysel)),
                "estimates": tuple(ests),
                "delta": cert.delta,
                "delta_tilde": cert.delta_tilde,
            })
        if outer < n_iter:
            B = Q[:, :c] @ _real_restart_basis(mu, Ysel)
            norms = np.linalg.norm(B, axis=0)
            norms[norms == 0.0] = 1.0
            B = B / norms
    U = Q[:, :c] @ Ysel
    U = U / np.linalg.norm(U, axis=0)
    return list(mu), U, ests


def rayleigh_ritz(A: LinearOperator, B, theta: SketchOperator, p: int,
                  n_iter: int, cfg: RbgsConfig = None,
                  matvec_precision: PrecisionSpec = FINE, history: list = None):
    """Restarted Rayleigh-Ritz for the largest-magnitude eigenpairs.

    Each outer iteration builds an order-p Arnoldi decomposition, solves the
    reduced eigenproblem of H_(1:p-1,1:p-1), keeps the m_p most extreme Ritz
    pairs (conjugate pairs together), estimates residuals as
    ||H_(p,1:p-1) y||, and restarts from the selected directions. Returns
    (values, unit vectors, residual estimates); vectors are complex when
    nonsymmetric pairs appear. Pass `history` to record per-iteration data.
    """
    return _rayleigh_ritz_impl(A, B, theta, p, n_iter, cfg or RbgsConfig(),
                               False, matvec_precision, history)


def rayleigh_ritz_l2(A: LinearOperator, B, theta: SketchOperator, p: int,
                     n_iter: int, cfg: RbgsConfig = None,
                     matvec_precision: PrecisionSpec = FINE,
                     history: list = None):
    """Rayleigh-Ritz with a Cholesky correction restoring l2 orthonormality.

    Q^T Q is factored once per outer iteration and Q, H are transformed
    consistently, so the classical Galerkin condition holds to fine roundoff.
    """
    return _rayleigh_ritz_impl(A, B, theta, p, n_iter, cfg or RbgsConfig(),
                               True, matvec_precision, history)


def subspace_iteration(A: LinearOperator, B, n_iter: int, history: list = None):
    """Power/subspace iteration baseline: B <- orth(A B), Rayleigh quotients last.

    Records one (values, residuals) snapshot per iteration into `history`
    when given, using the same operator product that advances the subspace.
    """
    B = as_array(B)
    Bq = householder_qr(B)[0].data
    vals = vecs = None
    for outer in range(1, max(n_iter, 1) + 1):
        Z = A.apply(Bq)
        G = Bq.T @ Z
        Hh, V = scipy.linalg.hessenberg(G, calc_q=True)
        mu, Yh = hessenberg_eig(Hh)
        Y = V @ Yh
        vals = mu
        vecs = Bq.astype(complex) @ Y
        if history is not None:
            res = []
            AU = Z.astype(complex) @ Y
            for t in range(Y.shape[1]):
                u = vecs[:, t]
                denom = max(abs(mu[t]), 1e-300) * np.linalg.norm(u)
                res.append(float(np.linalg.norm(AU[:, t] - mu[t] * u) / denom))
            history.append({"iteration": outer,
                            "cond_q": _cond2(Bq),
                            "values": tuple(complex(v) for v in mu),
                            "residuals": tuple(res)})
        Bq = householder_qr(Z)[0].data
    vecs = vecs / np.linalg.norm(vecs, axis=0)
    return list(vals), vecs


def _powers_block(A, v, s, poly, interval, prec):
    """Matrix powers kernel F*(v): s columns of polynomial images of v."""
    cols = np.empty((v.shape[0], s), order="F")
    if poly == "monomial":
        w = v
        for l in range(s):
            w = _round_to(A.apply(w), prec)
            cols[:, l] = w
        return cols
    a, b = interval
    center = 0.5 * (a + b)
    half = 0.5 * (b - a)
    if half <= 0:
        raise ValueError("chebyshev interval must satisfy a < b")
    t_prev = v
    t_cur = _round_to((A.apply(v) - center * v) / half, prec)
    cols[:, 0] = t_cur
    for l in range(1, s):
        t_next = _round_to(
            (2.0 / half) * (A.apply(t_cur) - center * t_cur) - t_prev, prec)
        cols[:, l] = t_next
        t_prev, t_cur = t_cur, t_next
    return cols


def sstep_arnoldi(A: LinearOperator, b, theta: SketchOperator, p: int, s: int,
                  poly: str = "monomial", interval=None,
                  cfg: RbgsConfig = None,
                  matvec_precision: PrecisionSpec = FINE) -> ArnoldiDecomposition:
    """s-step Arnoldi: blocks of s polynomial powers, orthogonalized by RBGS.

    W_(1) = b; W_(i) = F*(q_t) with t = s(i-2)+1 the newest basis vector,
    where F stacks monomial or scaled-shifted Chebyshev images. H is then
    recovered purely from the sketches: the sketched images of every basis
    vector under A follow from P, S, and R via a triangular change of basis,
    and one small least-squares solve against S yields H with its
    below-subdiagonal entries zeroed.
    """
    b = as_array(b)
    if b.shape[1] != 1:
        raise ShapeError("s-step Arnoldi starts from a single vector")
    if p < 2 or s < 1:
        raise ShapeError("need p >= 2 and s >= 1")
    if poly not in ("monomial", "chebyshev"):
        raise ValueError(f"unknown polynomial basis {poly!r}")
    if poly == "chebyshev" and interval is None:
        raise ValueError("chebyshev basis needs an (a, b) interval")
    n = b.shape[0]
    m = 1 + (p - 1) * s
    part = BlockPartition(s, p, m, widths=(1,) + (s,) * (p - 1))
    cfg = dataclasses.replace(cfg or RbgsConfig(), partition=part)
    sweep = RbgsSweep(n, theta, cfg)
    sweep.push_block(b)
    off = sweep.offsets
    for i in range(2, p + 1):
        t0 = off[i - 1] - 1
        W_i = _powers_block(A, sweep.Q[:, t0], s, poly, interval,
                            matvec_precision)
        sweep.push_block(W_i)
    f = sweep.finish()
    S, P, R = f.S.data, f.P.data, f.R.data
    c = m - 1
    # sketched A-images of q_0..q_{m-2} = PA * D^{-1}: D re-expresses the
    # pre-image columns (seed vectors and power columns) in the Q basis
    PA = np.empty((theta.k, c), order="F")
    D = np.zeros((c, c), order="F")
    if poly == "chebyshev":
        a_i, b_i = interval
        center = 0.5 * (a_i + b_i)
        half = 0.5 * (b_i - a_i)
    for bi in range(1, p):
        t0 = off[bi] - 1
        for l in range(off[bi + 1] - off[bi]):
            col = t0 + l
            if l == 0:
                D[t0, col] = 1.0
            else:
                D[:, col] = R[:c, t0 + l]
            if poly == "monomial":
                PA[:, col] = P[:, off[bi] + l]
            elif l == 0:
                PA[:, col] = center * S[:, t0] + half * P[:, off[bi]]
            else:
                low = P[:, off[bi] + l - 2] if l >= 2 else S[:, t0]
                PA[:, col] = (center * P[:, off[bi] + l - 1]
                              + 0.5 * half * (P[:, off[bi] + l] + low))
    d = np.abs(np.diag(D))
    if d.min() <= m * FINE.u * d.max():
        raise DependentBlockError(
            int(np.argmin(d)) + 1, "dependent power basis column")
    Z = triangular_solve(D, PA, side="right").data
    Qs, Rs = householder_qr(S)
    H = triangular_solve(Rs.data, Qs.data.T @ Z).data
    H = np.triu(H, -1)
    return ArnoldiDecomposition(f.Q, Matrix(H), Matrix(R[:, :1]), f.S, f.P,
                                f.cert, part)
