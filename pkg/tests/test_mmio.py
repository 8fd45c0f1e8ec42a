import numpy as np
import pytest

from sketch_krylov.mmio import (
    MatrixMarketError,
    read_matrix_market,
    write_array,
    write_coordinate,
)

from conftest import make_rng


def test_array_file_exact_entries(tmp_path):
    path = tmp_path / "a.mtx"
    path.write_text(
        "%%MatrixMarket matrix array real general\n"
        "2 2\n1\n3\n2\n4\n")
    kind, A = read_matrix_market(str(path))
    assert kind == "array"
    np.testing.assert_array_equal(A, [[1.0, 2.0], [3.0, 4.0]])


def test_coordinate_symmetric_expands_both_triangles(tmp_path):
    path = tmp_path / "s.mtx"
    path.write_text(
        "%%MatrixMarket matrix coordinate real symmetric\n"
        "3 3 2\n"
        "1 1 2.0\n"
        "3 1 -1.5\n")
    kind, (n, m, rows, cols, vals) = read_matrix_market(str(path))
    assert kind == "coordinate" and (n, m) == (3, 3)
    triplets = set(zip(rows, cols, vals))
    assert (0, 0, 2.0) in triplets
    assert (2, 0, -1.5) in triplets and (0, 2, -1.5) in triplets
    # the diagonal entry must not be duplicated
    assert len(triplets) == 3


def test_roundtrip_array_bit_identical(tmp_path):
    rng = make_rng(17)
    A = rng.standard_normal((7, 4)) * np.exp(rng.standard_normal((7, 4)) * 5)
    path = str(tmp_path / "rt.mtx")
    write_array(path, A)
    _, back = read_matrix_market(path)
    assert np.array_equal(back, A)


def test_roundtrip_coordinate_bit_identical(tmp_path):
    rng = make_rng(23)
    rows = np.array([0, 1, 4, 2])
    cols = np.array([1, 1, 0, 2])
    vals = rng.standard_normal(4) / 3.0
    path = str(tmp_path / "rt.mtx")
    write_coordinate(path, 5, 5, rows, cols, vals)
    _, (n, m, r2, c2, v2) = read_matrix_market(path)
    assert (n, m) == (5, 5)
    order = np.lexsort((c2, r2))
    back = dict(zip(zip(np.asarray(r2)[order], np.asarray(c2)[order]),
                    np.asarray(v2)[order]))
    for i, j, v in zip(rows, cols, vals):
        assert back[(i, j)] == v


def test_malformed_header_reports_line_one(tmp_path):
    path = tmp_path / "bad.mtx"
    path.write_text("%%MatrixMarket tensor array real general\n1 1\n0\n")
    with pytest.raises(MatrixMarketError) as exc:
        read_matrix_market(str(path))
    assert exc.value.line_no == 1


def test_bad_entry_reports_its_line(tmp_path):
    path = tmp_path / "bad2.mtx"
    path.write_text(
        "%%MatrixMarket matrix coordinate real general\n"
        "2 2 2\n"
        "1 1 1.0\n"
        "2 x 2.0\n")
    with pytest.raises(MatrixMarketError) as exc:
        read_matrix_market(str(path))
    assert exc.value.line_no == 4


def test_entry_count_mismatch_is_detected(tmp_path):
    path = tmp_path / "short.mtx"
    path.write_text("%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n")
    with pytest.raises(MatrixMarketError):
        read_matrix_market(str(path))
