"""Matrix Market reading and writing.

Supports array real general plus coordinate real general/symmetric files.
Values are written as shortest round-trip decimal representations, so a
write-then-read cycle reproduces every binary64 entry bit for bit. Parse
failures report the 1-based line number.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "read_matrix_market",
    "write_array",
    "write_coordinate",
    "MatrixMarketError",
]


class MatrixMarketError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def _fmt(x: float) -> str:
    return repr(float(x))


def write_array(path, A) -> None:
    """Write a dense matrix as 'array real general' (column-major values)."""
    A = np.asarray(A, dtype=np.float64)
    n, m = A.shape
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix array real general\n")
        fh.write(f"{n} {m}\n")
        for j in range(m):
            for i in range(n):
                fh.write(_fmt(A[i, j]) + "\n")


def write_coordinate(path, n: int, m: int, rows, cols, vals,
                     symmetry: str = "general") -> None:
    """Write COO triplets (0-based in memory, 1-based on disk)."""
    rows = np.asarray(rows)
    cols = np.asarray(cols)
    vals = np.asarray(vals, dtype=np.float64)
    with open(path, "w") as fh:
        fh.write(f"%%MatrixMarket matrix coordinate real {symmetry}\n")
        fh.write(f"{n} {m} {len(vals)}\n")
        for i, j, v in zip(rows, cols, vals):
            fh.write(f"{i + 1} {j + 1} {_fmt(v)}\n")


def _parse_header(line: str):
    parts = line.strip().lower().split()
    if len(parts) != 5 or parts[0] != "%%matrixmarket" or parts[1] != "matrix":
        raise MatrixMarketError(1, f"bad Matrix Market banner: {line.strip()!r}")
    fmt, field, symmetry = parts[2], parts[3], parts[4]
    if fmt not in ("array", "coordinate"):
        raise MatrixMarketError(1, f"unsupported format {fmt!r}")
    if field != "real":
        raise MatrixMarketError(1, f"unsupported field {field!r} (only real)")
    if symmetry not in ("general", "symmetric"):
        raise MatrixMarketError(1, f"unsupported symmetry {symmetry!r}")
    if fmt == "array" and symmetry != "general":
        raise MatrixMarketError(1, "array files must be general")
    return fmt, symmetry


def read_matrix_market(path):
    """Parse a Matrix Market file.

    Returns ("array", ndarray) for dense files, or
    ("coordinate", (n, m, rows, cols, vals)) with the symmetric part already
    expanded and 0-based indices.
    """
    with open(path) as fh:
        lines = fh.readlines()
    if not lines:
        raise MatrixMarketError(1, "empty file")
    fmt, symmetry = _parse_header(lines[0])
    idx = 1
    while idx < len(lines) and (lines[idx].startswith("%") or not lines[idx].strip()):
        idx += 1
    if idx == len(lines):
        raise MatrixMarketError(len(lines), "missing size line")
    size_line_no = idx + 1
    size_parts = lines[idx].split()
    idx += 1

    if fmt == "array":
        if len(size_parts) != 2:
            raise MatrixMarketError(size_line_no, "array size line needs 'rows cols'")
        try:
            n, m = int(size_parts[0]), int(size_parts[1])
        except ValueError:
            raise MatrixMarketError(size_line_no, "non-integer dimensions") from None
        A = np.empty((n, m), dtype=np.float64, order="F")
        count = 0
        for off, line in enumerate(lines[idx:], start=idx + 1):
            s = line.strip()
            if not s or s.startswith("%"):
                continue
            if count >= n * m:
                raise MatrixMarketError(off, "more entries than rows*cols")
            try:
                val = float(s)
            except ValueError:
                raise MatrixMarketError(off, f"bad value {s!r}") from None
            A[count % n, count // n] = val
            count += 1
        if count != n * m:
            raise MatrixMarketError(len(lines), f"expected {n * m} values, got {count}")
        return "array", A

    if len(size_parts) != 3:
        raise MatrixMarketError(size_line_no, "coordinate size line needs 'rows cols nnz'")
    try:
        n, m, nnz = (int(x) for x in size_parts)
    except ValueError:
        raise MatrixMarketError(size_line_no, "non-integer dimensions") from None
    rows, cols, vals = [], [], []
    count = 0
    for off, line in enumerate(lines[idx:], start=idx + 1):
        s = line.strip()
        if not s or s.startswith("%"):
            continue
        parts = s.split()
        if len(parts) != 3:
            raise MatrixMarketError(off, f"coordinate entry needs 'i j v', got {s!r}")
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise MatrixMarketError(off, f"bad entry {s!r}") from None
        if not (1 <= i <= n and 1 <= j <= m):
            raise MatrixMarketError(off, f"index ({i},{j}) out of bounds {n}x{m}")
        rows.append(i - 1)
        cols.append(j - 1)
        vals.append(v)
        if symmetry == "symmetric" and i != j:
            rows.append(j - 1)
            cols.append(i - 1)
            vals.append(v)
        count += 1
    if count != nnz:
        raise MatrixMarketError(len(lines), f"expected {nnz} entries, got {count}")
    return "coordinate", (n, m, np.array(rows), np.array(cols),
                          np.array(vals, dtype=np.float64))
