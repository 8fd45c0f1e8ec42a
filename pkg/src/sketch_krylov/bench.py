"""Benchmark experiment drivers: matrix generation, CSV emission, gating.

An ExperimentConfig selects one of four pipelines (synthetic QR sweep, QR on
a user matrix, GMRES, eigenvalue solve), the factorization method, sketch,
precision mode, and counts. run_experiment executes the pipeline, writes one
per-iteration CSV plus a key=value summary into the output directory, and
returns the process exit code: 0 on success, 2 when certification gating was
requested and the final certificate exceeds 0.1, 1 on hard numerical errors.
Given the same config and seed, reruns produce byte-identical CSV files.
"""

from __future__ import annotations

import csv
import os
import sys
from dataclasses import dataclass, fields

import numpy as np
import scipy.sparse

from .classic import ClassicBgsConfig, ClassicSweep
from .errors import NumericsError
from .kernels import COARSE, FINE, BlockPartition, Matrix
from .krylov import block_gmres, rayleigh_ritz, subspace_iteration
from .mmio import MatrixMarketError, read_matrix_market
from .operators import CsrOperator, DenseOperator, LinearOperator, ShiftedOperator
from .rbgs import RbgsConfig, RbgsSweep, certify, parse_method, save_blockqr
from .sketching import KINDS, SketchOperator

__all__ = [
    "ExperimentConfig",
    "gen_oscillatory",
    "gen_laplacian",
    "load_matrix_market",
    "run_experiment",
    "serialize_config",
    "parse_config",
]

EXPERIMENTS = ("qr_synthetic", "gmres", "eig", "custom_qr")
METHODS = ("bcgs", "bmgs", "bcgs2", "rbgs")
PRECISION_MODES = ("unique_coarse", "unique_fine", "multi")

_RBGS_INTERBLOCKS = ("rgs_single", "sketched_cholqr", "l2_plus_cholqr")
_CLASSIC_INTERBLOCKS = ("householder", "cgs2", "cholqr")


@dataclass(frozen=True)
class ExperimentConfig:
    """One benchmark run, fully determined (with the seed) by its fields.

    Defaults reproduce the synthetic QR sweep at desk scale. The gmres and
    eig experiments draw their operator from `grid`/`shift` (a shifted 2D
    finite-difference Laplacian) unless `matrix_path` points at a Matrix
    Market file. `p` is the number of Krylov blocks per cycle and `restart`
    the number of cycles (outer iterations for eig). A zero-length
    `matrix_path` or an unset `seed` mean "not provided"; the seed then
    falls back to the SKETCH_KRYLOV_SEED environment variable, then 0.
    """

    experiment: str = "qr_synthetic"
    method: str = "rbgs"
    n: int = 32768
    m: int = 150
    block_width: int = 10
    sketch_kind: str = "srht"
    sketch_dim: int = 1500
    seed: int = None
    precision: str = "multi"
    solver: str = "richardson(5)"
    interblock: str = "auto"
    grid: tuple = (100, 100)
    shift: float = 0.0
    p: int = 10
    restart: int = 10
    matrix_path: str = ""
    out_dir: str = "results"
    cert_gate: bool = False
    save_factors: bool = False

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.precision not in PRECISION_MODES:
            raise ValueError(f"unknown precision mode {self.precision!r}")
        if self.sketch_kind not in KINDS:
            raise ValueError(f"unknown sketch kind {self.sketch_kind!r}")
        if self.n < 2 or self.m < 2:
            raise ValueError("n and m must be at least 2")
        if not (1 <= self.block_width <= self.m):
            raise ValueError("block width must satisfy 1 <= m_p <= m")
        if self.sketch_dim < 1:
            raise ValueError("sketch dimension must be positive")
        if self.seed is not None and int(self.seed) < 0:
            raise ValueError("seed must be nonnegative")
        if self.p < 2:
            raise ValueError("Krylov cycles need p >= 2 blocks")
        if self.restart < 1:
            raise ValueError("restart count must be positive")
        if len(self.grid) not in (1, 2) or any(int(d) < 2 for d in self.grid):
            raise ValueError(f"grid must be 1 or 2 dims of size >= 2, got {self.grid}")
        object.__setattr__(self, "grid", tuple(int(d) for d in self.grid))
        if not np.isfinite(self.shift):
            raise ValueError("shift must be finite")
        if self.method == "rbgs":
            RbgsConfig(ls_solver=self.solver)
            if self.interblock not in _RBGS_INTERBLOCKS + ("auto",):
                raise ValueError(f"unknown rbgs interblock {self.interblock!r}")
        else:
            if self.precision == "multi":
                raise ValueError("multi precision applies to method=rbgs only")
            if self.interblock not in _CLASSIC_INTERBLOCKS + ("auto",):
                raise ValueError(f"unknown classic interblock {self.interblock!r}")
            if self.cert_gate:
                raise ValueError("certification gating needs a sketch; use method=rbgs")
        if self.experiment == "custom_qr" and not self.matrix_path:
            raise ValueError("custom_qr requires matrix_path")


def _fmt_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def serialize_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{f.name}={_fmt_value(getattr(cfg, f.name))}\n"
                   for f in fields(cfg))


def _parse_bool(s: str) -> bool:
    if s in ("true", "1", "yes"):
        return True
    if s in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


_FIELD_PARSERS = {
    "experiment": str,
    "method": str,
    "n": int,
    "m": int,
    "block_width": int,
    "sketch_kind": str,
    "sketch_dim": int,
    "seed": lambda s: None if s == "" else int(s),
    "precision": str,
    "solver": str,
    "interblock": str,
    "grid": lambda s: tuple(int(x) for x in s.split(",") if x),
    "shift": float,
    "p": int,
    "restart": int,
    "matrix_path": str,
    "out_dir": str,
    "cert_gate": _parse_bool,
    "save_factors": _parse_bool,
}


def parse_config(text: str, overrides: dict = None) -> ExperimentConfig:
    """Build a config from flat key=value lines plus optional overrides.

    Blank lines and '#' comments are skipped. Absent keys keep their
    defaults, so parse(serialize(cfg)) reproduces cfg exactly.
    """
    kv = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {no}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in _FIELD_PARSERS:
            raise ValueError(f"line {no}: unknown config key {key!r}")
        try:
            kv[key] = _FIELD_PARSERS[key](value.strip())
        except ValueError as e:
            raise ValueError(f"line {no}: bad value for {key}: {e}") from None
    if overrides:
        kv.update(overrides)
    return ExperimentConfig(**kv)


def gen_oscillatory(n: int, m: int) -> Matrix:
    """Parametrized column family with strong neighbor correlation.

    Column j samples f_mu(x) = sin(10(mu+x)) / (cos(100(mu-x)) + 1.1) at
    mu = j/m over the grid x = 1/n, ..., 1. Adjacent parameters produce
    nearly dependent columns, so the conditioning of leading column blocks
    grows rapidly with the block count.
    """
    if n < 2 or m < 2:
        raise ValueError("need n, m >= 2")
    x = np.arange(1, n + 1, dtype=np.float64) / n
    mu = np.arange(1, m + 1, dtype=np.float64) / m
    num = np.sin(10.0 * (mu[None, :] + x[:, None]))
    den = np.cos(100.0 * (mu[None, :] - x[:, None])) + 1.1
    return Matrix(np.asfortranarray(num / den))


def gen_laplacian(grid, shift: float = 0.0) -> LinearOperator:
    """Finite-difference Laplacian (5-point in 2D) plus shift*I, as CSR."""
    dims = tuple(int(d) for d in grid)
    if len(dims) not in (1, 2) or any(d < 2 for d in dims):
        raise ValueError(f"grid must be 1 or 2 dims of size >= 2, got {grid}")
    def second_diff(d):
        return scipy.sparse.diags(
            [-np.ones(d - 1), 2.0 * np.ones(d), -np.ones(d - 1)],
            offsets=[-1, 0, 1])
    if len(dims) == 1:
        lap = second_diff(dims[0])
    else:
        dx, dy = dims
        lap = (scipy.sparse.kron(scipy.sparse.identity(dy), second_diff(dx))
               + scipy.sparse.kron(second_diff(dy), scipy.sparse.identity(dx)))
    name = "laplacian" + "x".join(str(d) for d in dims)
    op = CsrOperator(lap.tocsr(), description=name)
    if shift != 0.0:
        return ShiftedOperator(op, shift)
    return op


def load_matrix_market(path):
    """Read a Matrix Market file as a dense Matrix or a CSR operator."""
    kind, payload = read_matrix_market(path)
    if kind == "array":
        return Matrix(np.asfortranarray(payload))
    n, m, rows, cols, vals = payload
    return CsrOperator.from_coo(n, m, rows, cols, vals,
                                description=os.path.basename(path))


def _resolve_seed(cfg: ExperimentConfig) -> int:
    if cfg.seed is not None:
        return int(cfg.seed)
    env = os.environ.get("SKETCH_KRYLOV_SEED", "")
    return int(env) if env else 0


def _precision_pair(mode: str):
    if mode == "multi":
        return COARSE, FINE
    if mode == "unique_fine":
        return FINE, FINE
    return COARSE, COARSE


def _resolve_interblock(cfg: ExperimentConfig) -> str:
    if cfg.interblock != "auto":
        return cfg.interblock
    return "l2_plus_cholqr" if cfg.method == "rbgs" else "householder"


def _make_sketch(cfg: ExperimentConfig, n: int, seed: int) -> SketchOperator:
    k = n if cfg.sketch_kind == "identity" else cfg.sketch_dim
    return SketchOperator(cfg.sketch_kind, k, n, seed)


def _operator_from_config(cfg: ExperimentConfig) -> LinearOperator:
    if cfg.matrix_path:
        loaded = load_matrix_market(cfg.matrix_path)
        if isinstance(loaded, Matrix):
            return DenseOperator(np.asarray(loaded))
        return loaded
    return gen_laplacian(cfg.grid, cfg.shift)


def _cond_from_svd(A: np.ndarray) -> float:
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] == 0.0:
        return float("inf")
    return float(sv[0] / sv[-1])


def _last_finite(values, default=float("nan")) -> float:
    out = default
    for v in values:
        if np.isfinite(v):
            out = v
    return out


def _qr_driver(cfg: ExperimentConfig, seed: int):
    if cfg.experiment == "custom_qr":
        W = load_matrix_market(cfg.matrix_path)
        if not isinstance(W, Matrix):
            raise ValueError("QR experiments need a dense (array format) matrix")
        Wa = np.asarray(W)
    else:
        Wa = np.asarray(gen_oscillatory(cfg.n, cfg.m))
    n, m = Wa.shape
    part = BlockPartition.uniform(m, cfg.block_width)
    sketched = cfg.method == "rbgs"
    if sketched:
        coarse, fine = _precision_pair(cfg.precision)
        rcfg = RbgsConfig(partition=part, ls_solver=cfg.solver,
                          interblock=_resolve_interblock(cfg),
                          coarse=coarse, fine=fine)
        sweep = RbgsSweep(n, _make_sketch(cfg, n, seed), rcfg)
    else:
        prec = COARSE if cfg.precision == "unique_coarse" else FINE
        ccfg = ClassicBgsConfig(partition=part, variant=cfg.method,
                                interblock=_resolve_interblock(cfg),
                                precision=prec)
        sweep = ClassicSweep(n, ccfg)
    offs = part.offsets()
    rows = []
    delta = delta_tilde = float("nan")
    for i in range(1, part.num_blocks + 1):
        sweep.push_block(Wa[:, offs[i - 1]:offs[i]])
        c = sweep.cols_done
        Qc = sweep.Q[:, :c]
        cond_q = _cond_from_svd(Qc)
        err = Wa[:, :c] - Qc @ sweep.R[:c, :c]
        rel = float(np.linalg.norm(err) / np.linalg.norm(Wa[:, :c]))
        if sketched:
            rep = certify(sweep.S[:, :c], sweep.P[:, :c], sweep.R[:c, :c])
            delta, delta_tilde = rep.delta, rep.delta_tilde
        rows.append((i, cond_q, rel, delta, delta_tilde))
    if cfg.save_factors:
        save_blockqr(sweep.finish(), os.path.join(cfg.out_dir, "factors"))
    header = ["iter", "cond_Q", "rel_fact_error", "delta", "delta_tilde"]
    extra = {
        "final_cond_q": rows[-1][1],
        "final_rel_fact_error": rows[-1][2],
        "final_delta": delta,
        "final_delta_tilde": delta_tilde,
    }
    return header, rows, extra


def _gmres_driver(cfg: ExperimentConfig, seed: int):
    A = _operator_from_config(cfg)
    rng = np.random.Generator(np.random.Philox(seed))
    B = np.asfortranarray(rng.standard_normal((A.n, cfg.block_width)))
    if cfg.method == "rbgs":
        coarse, fine = _precision_pair(cfg.precision)
        rcfg = RbgsConfig(ls_solver=cfg.solver,
                          interblock=_resolve_interblock(cfg),
                          coarse=coarse, fine=fine)
        report = block_gmres(A, B, _make_sketch(cfg, A.n, seed), cfg.p,
                             restarts=cfg.restart, cfg=rcfg,
                             matvec_precision=fine)
    else:
        prec = COARSE if cfg.precision == "unique_coarse" else FINE
        ccfg = ClassicBgsConfig(variant=cfg.method,
                                interblock=_resolve_interblock(cfg),
                                precision=prec)
        report = block_gmres(A, B, None, cfg.p, restarts=cfg.restart, cfg=ccfg)
    rows = [(it, cond, rel, d, dt)
            for (it, rel), cond, (d, dt) in zip(report.residual_history,
                                                report.basis_cond_history,
                                                report.cert_history)]
    header = ["iter", "cond_Q", "rel_residual", "delta", "delta_tilde"]
    extra = {
        "final_rel_residual": rows[-1][2],
        "final_delta": _last_finite(r[3] for r in rows),
        "final_delta_tilde": _last_finite(r[4] for r in rows),
        "cycles": report.restarts,
        "breakdown": report.breakdown,
    }
    return header, rows, extra


def _eig_driver(cfg: ExperimentConfig, seed: int):
    A = _operator_from_config(cfg)
    rng = np.random.Generator(np.random.Philox(seed))
    B = np.asfortranarray(rng.standard_normal((A.n, cfg.block_width)))
    hist = []
    if cfg.method == "rbgs":
        coarse, fine = _precision_pair(cfg.precision)
        rcfg = RbgsConfig(ls_solver=cfg.solver,
                          interblock=_resolve_interblock(cfg),
                          coarse=coarse, fine=fine)
        vals, _, _ = rayleigh_ritz(A, B, _make_sketch(cfg, A.n, seed), cfg.p,
                                   cfg.restart, cfg=rcfg,
                                   matvec_precision=fine, history=hist)
    else:
        # classical baseline: subspace iteration at the same operator-product
        # budget of restart cycles * (p - 1) block products
        vals, _ = subspace_iteration(A, B, cfg.restart * (cfg.p - 1),
                                     history=hist)
    nan = float("nan")
    rows = [(h["iteration"], h["cond_q"], max(h["residuals"]),
             h.get("delta", nan), h.get("delta_tilde", nan)) for h in hist]
    header = ["iter", "cond_Q", "max_eig_residual", "delta", "delta_tilde"]
    top = max(vals, key=abs)
    extra = {
        "final_max_eig_residual": rows[-1][2],
        "final_delta": rows[-1][3],
        "final_delta_tilde": rows[-1][4],
        "top_value_real": float(top.real),
        "top_value_imag": float(top.imag),
    }
    return header, rows, extra


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


def _write_summary(path: str, cfg: ExperimentConfig, seed: int, extra) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(serialize_config(cfg))
        fh.write(f"resolved_seed={seed}\n")
        for key, value in extra.items():
            fh.write(f"{key}={_fmt_value(value)}\n")


_DRIVERS = {
    "qr_synthetic": _qr_driver,
    "custom_qr": _qr_driver,
    "gmres": _gmres_driver,
    "eig": _eig_driver,
}


def run_experiment(cfg: ExperimentConfig) -> int:
    """Run one configured experiment; write CSV + summary; return exit code."""
    seed = _resolve_seed(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    summary_path = os.path.join(cfg.out_dir, "summary.txt")
    try:
        header, rows, extra = _DRIVERS[cfg.experiment](cfg, seed)
    except (NumericsError, MatrixMarketError, OSError, ValueError) as e:
        print(f"{cfg.experiment} failed: {e}", file=sys.stderr)
        _write_summary(summary_path, cfg, seed,
                       {"error": f"{type(e).__name__}: {e}", "exit_code": 1})
        return 1
    code = 0
    if cfg.cert_gate:
        d = extra.get("final_delta", float("nan"))
        dt = extra.get("final_delta_tilde", float("nan"))
        if not (np.isfinite(d) and np.isfinite(dt)) or d > 0.1 or dt > 0.1:
            code = 2
    extra["exit_code"] = code
    _write_csv(os.path.join(cfg.out_dir, f"{cfg.experiment}.csv"), header, rows)
    _write_summary(summary_path, cfg, seed, extra)
    return code
