"""Benchmark driver and CLI: config handling, generators, exit codes, CSV."""

import csv
import dataclasses
import hashlib
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sketch_krylov.bench import (
    ExperimentConfig,
    gen_laplacian,
    gen_oscillatory,
    load_matrix_market,
    parse_config,
    run_experiment,
    serialize_config,
)
from sketch_krylov.cli import main
from sketch_krylov.kernels import Matrix
from sketch_krylov.mmio import MatrixMarketError, write_array
from sketch_krylov.operators import CsrOperator


def read_summary(out_dir):
    entries = {}
    with open(os.path.join(out_dir, "summary.txt")) as fh:
        for line in fh:
            key, _, value = line.strip().partition("=")
            entries[key] = value
    return entries


def read_rows(out_dir, name):
    with open(os.path.join(out_dir, name), newline="") as fh:
        return list(csv.DictReader(fh))


def sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write_conditioned_mtx(path, n, m, cond, seed):
    rng = np.random.Generator(np.random.Philox(seed))
    U, _ = np.linalg.qr(rng.standard_normal((n, m)))
    V, _ = np.linalg.qr(rng.standard_normal((m, m)))
    write_array(path, (U * np.geomspace(1.0, 1.0 / cond, m)) @ V.T)


SMALL_QR = dict(experiment="qr_synthetic", method="rbgs", n=256, m=24,
                block_width=4, sketch_kind="srht", sketch_dim=96, seed=5)


class TestExperimentConfig:
    def test_defaults_are_valid(self):
        cfg = ExperimentConfig()
        assert cfg.experiment == "qr_synthetic"
        assert cfg.method == "rbgs"
        assert cfg.precision == "multi"

    @pytest.mark.parametrize("kwargs,match", [
        (dict(experiment="fft"), "experiment"),
        (dict(method="mgs"), "method"),
        (dict(precision="f16"), "precision"),
        (dict(sketch_kind="gaussian"), "sketch"),
        (dict(n=1), "n and m"),
        (dict(m=1), "n and m"),
        (dict(block_width=0), "block width"),
        (dict(block_width=200), "block width"),
        (dict(sketch_dim=0), "sketch dimension"),
        (dict(seed=-1), "seed"),
        (dict(p=1), "p >= 2"),
        (dict(restart=0), "restart"),
        (dict(grid=(1,)), "grid"),
        (dict(grid=(4, 5, 6)), "grid"),
        (dict(shift=float("inf")), "shift"),
        (dict(solver="newton"), "solver"),
        (dict(interblock="qr"), "interblock"),
    ])
    def test_validation_rejects(self, kwargs, match):
        with pytest.raises(ValueError, match=match):
            ExperimentConfig(**kwargs)

    def test_classic_rejects_multi_precision(self):
        with pytest.raises(ValueError, match="multi precision applies to method=rbgs"):
            ExperimentConfig(method="bcgs", precision="multi")

    def test_classic_rejects_cert_gate(self):
        with pytest.raises(ValueError, match="certification gating needs a sketch"):
            ExperimentConfig(method="bcgs2", precision="unique_fine", cert_gate=True)

    def test_custom_qr_needs_matrix_path(self):
        with pytest.raises(ValueError, match="matrix_path"):
            ExperimentConfig(experiment="custom_qr")

    def test_grid_coerced_to_int_tuple(self):
        cfg = ExperimentConfig(grid=[16, 32])
        assert cfg.grid == (16, 32)
        assert all(isinstance(d, int) for d in cfg.grid)


class TestConfigSerialization:
    def test_round_trip_defaults(self):
        cfg = ExperimentConfig()
        assert parse_config(serialize_config(cfg)) == cfg

    def test_round_trip_exotic_values(self):
        cfg = ExperimentConfig(experiment="gmres", method="bcgs2",
                               precision="unique_fine", seed=None,
                               shift=-4.530643267968092e-03, grid=(7,),
                               restart=3, p=5, solver="direct",
                               interblock="cgs2", save_factors=True,
                               out_dir="results/deep")
        assert parse_config(serialize_config(cfg)) == cfg

    def test_parse_skips_comments_and_blanks(self):
        text = "# hello\n\nn=64\nm=8\n   \nblock_width=4\n"
        cfg = parse_config(text)
        assert (cfg.n, cfg.m, cfg.block_width) == (64, 8, 4)

    def test_parse_overrides_win(self):
        cfg = parse_config("n=64\nm=8\nblock_width=4\n", overrides={"m": 12})
        assert cfg.m == 12
        assert cfg.n == 64

    @pytest.mark.parametrize("text,match", [
        ("bogus_key=1\n", "line 1: unknown config key"),
        ("n=64\nm 8\n", "line 2: expected key=value"),
        ("n=abc\n", "bad value for n"),
    ])
    def test_parse_errors_carry_line_numbers(self, text, match):
        with pytest.raises(ValueError, match=match):
            parse_config(text)

    @settings(max_examples=40, deadline=None)
    @given(data=st.data())
    def test_round_trip_is_identity(self, data):
        m = data.draw(st.integers(2, 32))
        cfg = ExperimentConfig(
            experiment=data.draw(st.sampled_from(("qr_synthetic", "gmres", "eig"))),
            method="rbgs",
            n=data.draw(st.integers(2, 4096)),
            m=m,
            block_width=data.draw(st.integers(1, m)),
            sketch_kind=data.draw(st.sampled_from(("identity", "srht", "rademacher"))),
            sketch_dim=data.draw(st.integers(1, 512)),
            seed=data.draw(st.one_of(st.none(), st.integers(0, 2**31))),
            precision=data.draw(st.sampled_from(("multi", "unique_fine", "unique_coarse"))),
            solver=data.draw(st.sampled_from(("richardson(5)", "richardson(3)", "direct"))),
            interblock=data.draw(st.sampled_from(
                ("auto", "rgs_single", "sketched_cholqr", "l2_plus_cholqr"))),
            grid=tuple(data.draw(st.lists(st.integers(2, 64), min_size=1, max_size=2))),
            shift=data.draw(st.floats(allow_nan=False, allow_infinity=False, width=64)),
            p=data.draw(st.integers(2, 12)),
            restart=data.draw(st.integers(1, 20)),
            cert_gate=data.draw(st.booleans()),
            save_factors=data.draw(st.booleans()),
            out_dir=data.draw(st.sampled_from(("results", "results/a_b"))),
        )
        assert parse_config(serialize_config(cfg)) == cfg


class TestGenOscillatory:
    def test_first_entry_matches_formula(self):
        # entries sample f_mu(x) on the open grid x_i = i/n, mu_j = j/m
        n, m = 64, 8
        ld = np.longdouble
        x, mu = ld(1) / ld(n), ld(1) / ld(m)
        ref = np.sin(10 * (mu + x)) / (np.cos(100 * (mu - x)) + ld("1.1"))
        W = np.asarray(gen_oscillatory(n, m))
        assert W.shape == (n, m)
        assert W.dtype == np.float64
        assert abs(W[0, 0] - float(ref)) <= 1e-14 * abs(float(ref))

    def test_diagonal_coincidence_reduces_to_sin20x(self):
        # where mu_j = x_i the cosine term is cos(0): f = sin(20 x) / 2.1
        n, m = 100, 10
        W = np.asarray(gen_oscillatory(n, m))
        for j in range(1, m + 1):
            x = j / m
            i = j * (n // m)
            expected = np.sin(20.0 * x) / 2.1
            assert abs(W[i - 1, j - 1] - expected) <= 1e-13 * max(abs(expected), 1.0)

    def test_conditioning_grows_extreme(self):
        # neighbouring columns correlate strongly; at this shape the full
        # matrix is already past 1e8
        W = np.asarray(gen_oscillatory(1024, 96))
        assert np.linalg.cond(W) > 1e8

    @pytest.mark.parametrize("n,m", [(1, 8), (8, 1)])
    def test_rejects_degenerate_shapes(self, n, m):
        with pytest.raises(ValueError, match="n, m"):
            gen_oscillatory(n, m)


class TestGenLaplacian:
    def test_1d_size3_spectrum(self):
        A = gen_laplacian((3,), 0.0)
        dense = np.column_stack([A.apply(e) for e in np.eye(3)])
        eigs = np.sort(np.linalg.eigvalsh(dense))
        ref = np.array([2.0 - np.sqrt(2.0), 2.0, 2.0 + np.sqrt(2.0)])
        assert np.allclose(eigs, ref, rtol=0, atol=1e-12)

    def test_1d_constant_vector_hits_boundary_only(self):
        A = gen_laplacian((10,), 0.0)
        v = A.apply(np.ones(10))
        expected = np.zeros(10)
        expected[0] = expected[-1] = 1.0
        assert np.array_equal(v, expected)

    def test_2d_constant_vector_interior_zero(self):
        A = gen_laplacian((4, 5), 0.0)
        v = A.apply(np.ones(20))
        # 6 interior nodes, 10 edge nodes, 4 corners
        values, counts = np.unique(v, return_counts=True)
        assert np.array_equal(values, [0.0, 1.0, 2.0])
        assert np.array_equal(counts, [6, 10, 4])

    def test_shift_adds_scaled_identity(self):
        rng = np.random.Generator(np.random.Philox(1))
        v = rng.standard_normal(12)
        base = gen_laplacian((3, 4), 0.0)
        shifted = gen_laplacian((3, 4), 2.5)
        assert np.allclose(shifted.apply(v), base.apply(v) + 2.5 * v,
                           rtol=0, atol=1e-14)

    def test_description_names_grid(self):
        assert "laplacian" in gen_laplacian((4, 5), 0.0).description

    @pytest.mark.parametrize("grid", [(1,), (2, 1), (2, 2, 2)])
    def test_rejects_bad_grids(self, grid):
        with pytest.raises(ValueError, match="grid"):
            gen_laplacian(grid, 0.0)

    def test_top_eigenvalue_matches_closed_form(self, tmp_path):
        # 2D Dirichlet eigenvalues are 4 sin^2 + 4 sin^2; the extreme pair
        # doubles up, so the largest is 8 sin^2(pi N / (2(N+1)))
        N = 20
        cfg = ExperimentConfig(experiment="eig", method="rbgs",
                               sketch_kind="identity", precision="unique_fine",
                               seed=3, block_width=2, p=8, restart=20,
                               grid=(N, N), out_dir=str(tmp_path))
        assert run_experiment(cfg) == 0
        top = float(read_summary(cfg.out_dir)["top_value_real"])
        closed = 8.0 * np.sin(np.pi * N / (2.0 * (N + 1))) ** 2
        assert abs(top - closed) <= 1e-10 * closed


class TestLoadMatrixMarket:
    def test_array_file_loads_as_dense(self, tmp_path):
        path = str(tmp_path / "w.mtx")
        W = np.arange(6, dtype=float).reshape(3, 2) / 7.0
        write_array(path, W)
        loaded = load_matrix_market(path)
        assert isinstance(loaded, Matrix)
        assert np.array_equal(np.asarray(loaded), W)

    def test_coordinate_symmetric_expands_both_triangles(self, tmp_path):
        path = tmp_path / "s.mtx"
        path.write_text("%%MatrixMarket matrix coordinate real symmetric\n"
                        "2 2 2\n1 1 3.0\n2 1 -1.5\n")
        A = load_matrix_market(str(path))
        assert isinstance(A, CsrOperator)
        assert np.array_equal(A.apply(np.eye(2)[0]), [3.0, -1.5])
        assert np.array_equal(A.apply(np.eye(2)[1]), [-1.5, 0.0])

    def test_malformed_header_reports_line(self, tmp_path):
        path = tmp_path / "bad.mtx"
        path.write_text("%%MatrixMarket matrix coordinate complex general\n1 1 1\n")
        with pytest.raises(MatrixMarketError, match="line"):
            load_matrix_market(str(path))


class TestRunExperiment:
    def test_qr_small_run_is_healthy(self, tmp_path):
        cfg = ExperimentConfig(out_dir=str(tmp_path), cert_gate=True, **SMALL_QR)
        assert run_experiment(cfg) == 0
        rows = read_rows(cfg.out_dir, "qr_synthetic.csv")
        assert list(rows[0]) == ["iter", "cond_Q", "rel_fact_error",
                                 "delta", "delta_tilde"]
        assert [int(r["iter"]) for r in rows] == list(range(1, 7))
        for r in rows:
            assert 1.0 <= float(r["cond_Q"]) < 2.0
            assert 0.0 <= float(r["delta"]) <= 0.1
            assert float(r["rel_fact_error"]) <= 1e-5
        summary = read_summary(cfg.out_dir)
        assert summary["exit_code"] == "0"
        assert summary["resolved_seed"] == "5"
        assert float(summary["final_delta"]) == float(rows[-1]["delta"])

    def test_rerun_is_byte_identical(self, tmp_path):
        digests = []
        for sub in ("one", "two"):
            cfg = ExperimentConfig(out_dir=str(tmp_path / sub), **SMALL_QR)
            assert run_experiment(cfg) == 0
            digests.append(sha256(os.path.join(cfg.out_dir, "qr_synthetic.csv")))
        assert digests[0] == digests[1]

    def test_env_seed_fallback(self, tmp_path, monkeypatch):
        explicit = ExperimentConfig(out_dir=str(tmp_path / "a"), **SMALL_QR)
        run_experiment(explicit)
        monkeypatch.setenv("SKETCH_KRYLOV_SEED", "5")
        from_env = dataclasses.replace(explicit, seed=None,
                                       out_dir=str(tmp_path / "b"))
        assert run_experiment(from_env) == 0
        assert read_summary(from_env.out_dir)["resolved_seed"] == "5"
        assert (sha256(os.path.join(explicit.out_dir, "qr_synthetic.csv"))
                == sha256(os.path.join(from_env.out_dir, "qr_synthetic.csv")))

    def test_unset_seed_defaults_to_zero(self, tmp_path, monkeypatch):
        monkeypatch.delenv("SKETCH_KRYLOV_SEED", raising=False)
        cfg = ExperimentConfig(out_dir=str(tmp_path),
                               **{**SMALL_QR, "seed": None})
        assert run_experiment(cfg) == 0
        assert read_summary(cfg.out_dir)["resolved_seed"] == "0"

    def test_cert_gate_catches_coarse_failure(self, tmp_path):
        mtx = str(tmp_path / "ill.mtx")
        write_conditioned_mtx(mtx, 512, 32, 1e8, seed=77)
        gated = ExperimentConfig(experiment="custom_qr", matrix_path=mtx,
                                 method="rbgs", precision="unique_coarse",
                                 block_width=4, sketch_kind="srht",
                                 sketch_dim=128, seed=5, cert_gate=True,
                                 out_dir=str(tmp_path / "gated"))
        assert run_experiment(gated) == 2
        summary = read_summary(gated.out_dir)
        assert summary["exit_code"] == "2"
        assert float(summary["final_delta"]) > 0.1
        # without the gate the same run reports but does not fail
        ungated = dataclasses.replace(gated, cert_gate=False,
                                      out_dir=str(tmp_path / "ungated"))
        assert run_experiment(ungated) == 0

    def test_missing_matrix_is_hard_error(self, tmp_path):
        cfg = ExperimentConfig(experiment="custom_qr",
                               matrix_path=str(tmp_path / "nope.mtx"),
                               out_dir=str(tmp_path / "out"))
        assert run_experiment(cfg) == 1
        summary = read_summary(cfg.out_dir)
        assert summary["exit_code"] == "1"
        assert "nope.mtx" in summary["error"]
        assert not os.path.exists(os.path.join(cfg.out_dir, "custom_qr.csv"))

    def test_gmres_classic_coarse_stagnates_above_randomized(self, tmp_path):
        """One deep window on a shifted 2D Laplacian: the f32 classical basis
        degrades once the Krylov stream passes 1/u32 and the residual goes
        flat, while the sketched sweep keeps converging."""
        shared = dict(experiment="gmres", seed=11, block_width=5, p=31,
                      restart=1, grid=(32, 32), shift=1.5)
        rand = ExperimentConfig(method="rbgs", precision="unique_fine",
                                sketch_kind="srht", sketch_dim=512,
                                out_dir=str(tmp_path / "rbgs"), **shared)
        classic = ExperimentConfig(method="bcgs", precision="unique_coarse",
                                   out_dir=str(tmp_path / "bcgs"), **shared)
        assert run_experiment(rand) == 0
        assert run_experiment(classic) == 0
        r_rand = float(read_summary(rand.out_dir)["final_rel_residual"])
        r_classic = float(read_summary(classic.out_dir)["final_rel_residual"])
        assert r_rand <= 1e-8
        assert r_classic >= 1e4 * r_rand
        tail = [float(r["rel_residual"])
                for r in read_rows(classic.out_dir, "gmres.csv")[-6:]]
        assert max(tail) <= 1.1 * min(tail)

    def test_gmres_csv_schema_and_classic_nan_certs(self, tmp_path):
        cfg = ExperimentConfig(experiment="gmres", method="bcgs2",
                               precision="unique_fine", seed=2, block_width=2,
                               p=4, restart=2, grid=(8, 8),
                               out_dir=str(tmp_path))
        assert run_experiment(cfg) == 0
        rows = read_rows(cfg.out_dir, "gmres.csv")
        assert list(rows[0]) == ["iter", "cond_Q", "rel_residual",
                                 "delta", "delta_tilde"]
        assert all(r["delta"] == "nan" for r in rows)

    def test_eig_randomized_beats_subspace_iteration(self, tmp_path):
        """Clustered top of the 2D Laplacian: power iterations stall on the
        tiny spectral gap; the restarted Krylov projection does not."""
        shared = dict(experiment="eig", seed=9, block_width=4, p=8,
                      restart=50, grid=(24, 24), precision="unique_fine")
        rand = ExperimentConfig(method="rbgs", sketch_kind="srht",
                                sketch_dim=128, out_dir=str(tmp_path / "rr"),
                                **shared)
        power = ExperimentConfig(method="bcgs2",
                                 out_dir=str(tmp_path / "si"), **shared)
        assert run_experiment(rand) == 0
        assert run_experiment(power) == 0
        r_rand = float(read_summary(rand.out_dir)["final_max_eig_residual"])
        r_power = float(read_summary(power.out_dir)["final_max_eig_residual"])
        assert r_rand <= 1e-10
        assert r_power >= 1e-4
        rows = read_rows(rand.out_dir, "eig.csv")
        assert list(rows[0]) == ["iter", "cond_Q", "max_eig_residual",
                                 "delta", "delta_tilde"]


class TestCli:
    QR_ARGS = ["qr", "--n", "256", "--m", "24", "--block", "4",
               "--sketch", "srht:96:3", "--seed", "1"]

    def test_qr_then_certify_round_trip(self, tmp_path, capsys):
        out = str(tmp_path)
        assert main(self.QR_ARGS + ["--save-factors", "--out", out]) == 0
        assert os.path.exists(os.path.join(out, "qr_synthetic.csv"))
        capsys.readouterr()
        assert main(["certify", "--out", os.path.join(out, "factors")]) == 0
        printed = dict(line.partition("=")[::2]
                       for line in capsys.readouterr().out.splitlines())
        assert float(printed["delta"]) <= 0.1
        assert float(printed["delta_tilde"]) <= 0.1
        # the recomputed values agree with what the sweep recorded
        assert printed["delta"] == printed["recorded_delta"]

    def test_certify_flags_bad_factorization(self, tmp_path, capsys):
        mtx = str(tmp_path / "ill.mtx")
        write_conditioned_mtx(mtx, 512, 32, 1e8, seed=77)
        out = str(tmp_path / "run")
        assert main(["qr", mtx, "--precision", "f32", "--block", "4",
                     "--sketch", "srht:128", "--seed", "5",
                     "--save-factors", "--out", out]) == 0
        capsys.readouterr()
        assert main(["certify", "--out", os.path.join(out, "factors")]) == 2
        printed = dict(line.partition("=")[::2]
                       for line in capsys.readouterr().out.splitlines())
        assert float(printed["delta"]) > 0.1

    def test_certify_without_sketch_is_an_error(self, tmp_path, capsys):
        out = str(tmp_path)
        assert main(["qr", "--n", "128", "--m", "16", "--block", "4",
                     "--method", "bcgs2", "--precision", "f64", "--seed", "1",
                     "--save-factors", "--out", out]) == 0
        capsys.readouterr()
        assert main(["certify", "--out", os.path.join(out, "factors")]) == 1
        assert "nothing to certify" in capsys.readouterr().err

    def test_gen_synthetic_round_trips(self, tmp_path, capsys):
        assert main(["gen", "synthetic", "--n", "64", "--m", "8",
                     "--out", str(tmp_path)]) == 0
        path = capsys.readouterr().out.strip()
        assert path.endswith("synthetic_64x8.mtx")
        loaded = load_matrix_market(path)
        assert np.array_equal(np.asarray(loaded),
                              np.asarray(gen_oscillatory(64, 8)))

    def test_gen_laplacian_round_trips(self, tmp_path, capsys):
        assert main(["gen", "laplacian", "--grid", "4,5",
                     "--out", str(tmp_path)]) == 0
        path = capsys.readouterr().out.strip()
        assert path.endswith("laplacian_4x5.mtx")
        A = load_matrix_market(path)
        assert isinstance(A, CsrOperator)
        ones = np.ones(20)
        assert np.array_equal(A.apply(ones), gen_laplacian((4, 5), 0.0).apply(ones))

    def test_gen_laplacian_shift_in_filename_and_values(self, tmp_path, capsys):
        assert main(["gen", "laplacian", "--grid", "3", "--shift", "0.5",
                     "--out", str(tmp_path)]) == 0
        path = capsys.readouterr().out.strip()
        assert "shift0.5" in os.path.basename(path)
        A = load_matrix_market(path)
        v = np.ones(3)
        ref = gen_laplacian((3,), 0.5).apply(v)
        assert np.allclose(A.apply(v), ref, rtol=0, atol=1e-14)

    def test_config_file_with_cli_override(self, tmp_path):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("# small run\nn=256\nm=24\nblock_width=4\n"
                            "sketch_dim=96\nseed=2\n")
        out = str(tmp_path / "out")
        assert main(["qr", "--config", str(cfg_file), "--m", "32",
                     "--out", out]) == 0
        summary = read_summary(out)
        assert summary["m"] == "32"
        assert summary["n"] == "256"

    def test_config_file_unknown_key_fails(self, tmp_path, capsys):
        cfg_file = tmp_path / "run.cfg"
        cfg_file.write_text("frobnicate=1\n")
        assert main(["qr", "--config", str(cfg_file),
                     "--out", str(tmp_path)]) == 1
        assert "line 1" in capsys.readouterr().err

    def test_explicit_seed_beats_sketch_embedded_seed(self, tmp_path):
        out = str(tmp_path)
        assert main(["qr", "--n", "256", "--m", "24", "--block", "4",
                     "--sketch", "srht:96:9", "--seed", "4",
                     "--out", out]) == 0
        assert read_summary(out)["resolved_seed"] == "4"

    def test_unknown_sketch_kind_is_config_error(self, tmp_path, capsys):
        assert main(["qr", "--sketch", "bogus:5", "--out", str(tmp_path)]) == 1
        assert "sketch" in capsys.readouterr().err

    def test_malformed_sketch_spec_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["qr", "--sketch", "srht:notanumber", "--out", str(tmp_path)])
        assert exc.value.code == 2

    def test_missing_matrix_file_propagates(self, tmp_path, capsys):
        out = str(tmp_path / "out")
        assert main(["qr", str(tmp_path / "nope.mtx"), "--out", out]) == 1
        assert "nope.mtx" in capsys.readouterr().err
