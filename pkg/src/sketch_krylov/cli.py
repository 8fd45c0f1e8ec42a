"""Command-line entry point.

Subcommands: `qr`, `gmres`, `eig` run the benchmark experiments (results as
per-iteration CSV plus a key=value summary), `certify` recomputes the
stability certificate of a saved factorization, and `gen` writes test
matrices to Matrix Market files. Flags override keys of an optional flat
key=value config file; an unset seed falls back to SKETCH_KRYLOV_SEED.

Exit codes: 0 success, 2 certification over threshold, 1 hard error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np
import scipy.sparse

from . import bench
from .errors import NumericsError
from .mmio import MatrixMarketError, write_array, write_coordinate
from .rbgs import certify, load_blockqr

_PRECISION_FLAGS = {"f32": "unique_coarse", "f64": "unique_fine", "multi": "multi"}


def _parse_sketch(text: str):
    """Split kind[:k[:seed]] into override entries."""
    parts = text.split(":")
    if len(parts) > 3 or not parts[0]:
        raise argparse.ArgumentTypeError(
            f"expected kind[:k[:seed]], got {text!r}")
    out = {"sketch_kind": parts[0]}
    try:
        if len(parts) > 1 and parts[1]:
            out["sketch_dim"] = int(parts[1])
        if len(parts) > 2 and parts[2]:
            out["seed"] = int(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"sketch dim and seed must be integers, got {text!r}") from None
    return out


def _parse_grid(text: str):
    try:
        return tuple(int(x) for x in text.split(",") if x)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated dims, got {text!r}") from None


def _add_experiment_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("matrix", nargs="?", default="",
                    help="optional Matrix Market input instead of a generated matrix")
    sp.add_argument("--method", choices=bench.METHODS)
    sp.add_argument("--sketch", type=_parse_sketch, metavar="KIND[:K[:SEED]]")
    sp.add_argument("--block", type=int, metavar="M_P", dest="block_width",
                    help="column block width")
    sp.add_argument("--precision", choices=sorted(_PRECISION_FLAGS))
    sp.add_argument("--solver", help="sketched least-squares solver, e.g. richardson(5)")
    sp.add_argument("--interblock", help="intra-block orthogonalization method")
    sp.add_argument("--restart", type=int, help="cycle / outer iteration count")
    sp.add_argument("--blocks-per-cycle", type=int, dest="p", metavar="P",
                    help="Krylov blocks per cycle")
    sp.add_argument("--n", type=int, help="generated matrix rows")
    sp.add_argument("--m", type=int, help="generated matrix columns")
    sp.add_argument("--grid", type=_parse_grid, metavar="NX[,NY]",
                    help="Laplacian grid dims")
    sp.add_argument("--shift", type=float, help="diagonal shift of the operator")
    sp.add_argument("--seed", type=int, help="RNG seed")
    sp.add_argument("--gate", action="store_true", default=None,
                    help="exit 2 unless the final certificate is at most 0.1")
    sp.add_argument("--save-factors", action="store_true", default=None,
                    help="save the QR factors for later certification (qr only)")
    sp.add_argument("--out", metavar="DIR", help="output directory")
    sp.add_argument("--config", metavar="FILE", help="flat key=value config file")


_OVERRIDE_KEYS = ("method", "block_width", "solver", "interblock", "restart",
                  "p", "n", "m", "grid", "shift", "seed", "out", "gate",
                  "save_factors")
_KEY_RENAMES = {"out": "out_dir", "gate": "cert_gate"}


def _collect_overrides(args: argparse.Namespace, experiment: str) -> dict:
    over = {"experiment": experiment}
    for key in _OVERRIDE_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            over[_KEY_RENAMES.get(key, key)] = val
    if args.precision is not None:
        over["precision"] = _PRECISION_FLAGS[args.precision]
    if args.sketch is not None:
        # an explicit --seed wins over the seed embedded in --sketch
        sketch = dict(args.sketch)
        if args.seed is not None:
            sketch.pop("seed", None)
        over.update(sketch)
    if args.matrix:
        over["matrix_path"] = args.matrix
        if experiment == "qr_synthetic":
            over["experiment"] = "custom_qr"
    return over


def _cmd_experiment(args: argparse.Namespace, experiment: str) -> int:
    text = ""
    if args.config:
        with open(args.config) as fh:
            text = fh.read()
    cfg = bench.parse_config(text, _collect_overrides(args, experiment))
    return bench.run_experiment(cfg)


def _cmd_certify(args: argparse.Namespace) -> int:
    f = load_blockqr(args.out)
    if f.S is None or f.P is None:
        print("no sketch data in saved factorization; nothing to certify",
              file=sys.stderr)
        return 1
    rep = certify(np.asarray(f.S), np.asarray(f.P), np.asarray(f.R))
    print(f"delta={rep.delta!r}")
    print(f"delta_tilde={rep.delta_tilde!r}")
    if f.cert is not None:
        print(f"recorded_delta={f.cert.delta!r}")
        print(f"recorded_delta_tilde={f.cert.delta_tilde!r}")
    return 0 if rep.delta <= 0.1 and rep.delta_tilde <= 0.1 else 2


def _cmd_gen(args: argparse.Namespace) -> int:
    os.makedirs(args.out, exist_ok=True)
    if args.what == "synthetic":
        W = bench.gen_oscillatory(args.n, args.m)
        path = os.path.join(args.out, f"synthetic_{args.n}x{args.m}.mtx")
        write_array(path, np.asarray(W))
    else:
        grid = args.grid or (100, 100)
        mat = bench.gen_laplacian(grid, 0.0).matrix
        if args.shift:
            mat = mat + args.shift * scipy.sparse.identity(mat.shape[0])
        coo = mat.tocoo()
        name = "laplacian_" + "x".join(str(d) for d in grid)
        if args.shift:
            name += f"_shift{args.shift}"
        path = os.path.join(args.out, name + ".mtx")
        write_coordinate(path, coo.shape[0], coo.shape[1],
                         coo.row, coo.col, coo.data)
    print(path)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sketch-krylov",
        description="Randomized block Gram-Schmidt benchmarks and tools")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, experiment, blurb in (
            ("qr", "qr_synthetic", "block QR factorization sweep"),
            ("gmres", "gmres", "restarted block GMRES solve"),
            ("eig", "eig", "restarted Rayleigh-Ritz eigensolve")):
        sp = sub.add_parser(name, help=blurb)
        _add_experiment_flags(sp)
        sp.set_defaults(experiment=experiment)
    sp = sub.add_parser("certify", help="recheck the certificate of saved factors")
    sp.add_argument("--out", metavar="DIR", default="results/factors",
                    help="directory written by qr --save-factors")
    gp = sub.add_parser("gen", help="write a test matrix to a Matrix Market file")
    gp.add_argument("what", choices=("synthetic", "laplacian"))
    gp.add_argument("--n", type=int, default=32768)
    gp.add_argument("--m", type=int, default=150)
    gp.add_argument("--grid", type=_parse_grid, metavar="NX[,NY]")
    gp.add_argument("--shift", type=float, default=0.0)
    gp.add_argument("--out", metavar="DIR", default="results")
    args = parser.parse_args(argv)

    try:
        if args.command == "certify":
            return _cmd_certify(args)
        if args.command == "gen":
            return _cmd_gen(args)
        return _cmd_experiment(args, args.experiment)
    except (NumericsError, MatrixMarketError, OSError, ValueError) as e:
        print(f"{args.command}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
