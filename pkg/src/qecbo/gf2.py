"""Dense linear algebra over GF(2) with bit-packed rows.

A matrix row is stored as a single Python integer whose bit ``j`` is the
entry in column ``j``; row operations are word-level XORs.  All values are
immutable after construction, so matrices and vectors can be shared freely
across concurrent workers.

The textual fixture format understood by :func:`BitMatrix.from_text` is a
first line ``"rows cols"`` followed by one string of ``0``/``1`` characters
per row.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "BitVector",
    "BitMatrix",
    "rank",
    "kernel_basis",
    "mat_mul",
    "mat_vec",
    "in_row_space",
    "quotient_basis",
]


def _lowest_set_bit(x: int) -> int:
    """Index of the least significant set bit (the leftmost column)."""
    return (x & -x).bit_length() - 1


class BitVector:
    """An immutable vector over GF(2), packed into one integer."""

    __slots__ = ("n", "bits")

    def __init__(self, n: int, bits: int = 0):
        if n < 0:
            raise ValueError(f"vector length must be nonnegative, got {n}")
        if bits < 0 or bits >> n:
            raise ValueError("bits outside the addressable range")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "bits", bits)

    def __setattr__(self, name, value):
        raise AttributeError("BitVector is immutable")

    @classmethod
    def from_bits(cls, values: Iterable[int]) -> "BitVector":
        bits = 0
        n = 0
        for v in values:
            if v & ~1:
                raise ValueError(f"entries must be 0 or 1, got {v}")
            bits |= v << n
            n += 1
        return cls(n, bits)

    @classmethod
    def from_text(cls, text: str) -> "BitVector":
        return cls.from_bits(int(c) for c in text.strip())

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "BitVector":
        return cls.from_bits(int(v) & 1 for v in np.asarray(arr).ravel())

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, j: int) -> int:
        if not 0 <= j < self.n:
            raise IndexError(j)
        return (self.bits >> j) & 1

    def __xor__(self, other: "BitVector") -> "BitVector":
        if self.n != other.n:
            raise ValueError(f"length mismatch: {self.n} vs {other.n}")
        return BitVector(self.n, self.bits ^ other.bits)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BitVector)
            and self.n == other.n
            and self.bits == other.bits
        )

    def __hash__(self) -> int:
        return hash((self.n, self.bits))

    def __repr__(self) -> str:
        return f"BitVector({self.to_text()!r})"

    def is_zero(self) -> bool:
        return self.bits == 0

    def weight(self) -> int:
        return self.bits.bit_count()

    def to_text(self) -> str:
        return "".join(str((self.bits >> j) & 1) for j in range(self.n))

    def to_array(self) -> np.ndarray:
        out = np.zeros(self.n, dtype=np.uint8)
        b = self.bits
        while b:
            j = _lowest_set_bit(b)
            out[j] = 1
            b &= b - 1
        return out


class BitMatrix:
    """An immutable row-major matrix over GF(2), one integer per row."""

    __slots__ = ("rows", "cols", "row_bits")

    def __init__(self, rows: int, cols: int, row_bits: Sequence[int]):
        if rows < 0 or cols < 0:
            raise ValueError("dimensions must be nonnegative")
        if len(row_bits) != rows:
            raise ValueError(f"expected {rows} rows, got {len(row_bits)}")
        for r in row_bits:
            if r < 0 or r >> cols:
                raise ValueError("row bits outside the addressable range")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "row_bits", tuple(row_bits))

    def __setattr__(self, name, value):
        raise AttributeError("BitMatrix is immutable")

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "BitMatrix":
        return cls(rows, cols, [0] * rows)

    @classmethod
    def identity(cls, n: int) -> "BitMatrix":
        return cls(n, n, [1 << i for i in range(n)])

    @classmethod
    def from_vectors(cls, vectors: Sequence[BitVector], cols: int | None = None) -> "BitMatrix":
        if cols is None:
            if not vectors:
                raise ValueError("cols required for an empty vector list")
            cols = vectors[0].n
        for v in vectors:
            if v.n != cols:
                raise ValueError("inconsistent vector lengths")
        return cls(len(vectors), cols, [v.bits for v in vectors])

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "BitMatrix":
        a = np.asarray(arr)
        if a.ndim != 2:
            raise ValueError("expected a 2-d array")
        rows = []
        for i in range(a.shape[0]):
            bits = 0
            for j in np.nonzero(a[i] % 2)[0]:
                bits |= 1 << int(j)
            rows.append(bits)
        return cls(a.shape[0], a.shape[1], rows)

    @classmethod
    def from_text(cls, text: str) -> "BitMatrix":
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty matrix text")
        header = lines[0].split()
        if len(header) != 2:
            raise ValueError(f"bad header line {lines[0]!r}")
        rows, cols = int(header[0]), int(header[1])
        if len(lines) - 1 != rows:
            raise ValueError(f"expected {rows} row lines, got {len(lines) - 1}")
        row_bits = []
        for ln in lines[1:]:
            s = ln.strip()
            if len(s) != cols or set(s) - {"0", "1"}:
                raise ValueError(f"bad row line {ln!r}")
            row_bits.append(BitVector.from_text(s).bits)
        return cls(rows, cols, row_bits)

    def row(self, i: int) -> BitVector:
        return BitVector(self.cols, self.row_bits[i])

    def row_vectors(self) -> list[BitVector]:
        return [BitVector(self.cols, r) for r in self.row_bits]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BitMatrix)
            and self.rows == other.rows
            and self.cols == other.cols
            and self.row_bits == other.row_bits
        )

    def __hash__(self) -> int:
        return hash((self.rows, self.cols, self.row_bits))

    def __repr__(self) -> str:
        return f"BitMatrix({self.rows}x{self.cols})"

    def transpose(self) -> "BitMatrix":
        cols = [0] * self.cols
        for i, r in enumerate(self.row_bits):
            while r:
                j = _lowest_set_bit(r)
                cols[j] |= 1 << i
                r &= r - 1
        return BitMatrix(self.cols, self.rows, cols)

    def hstack(self, other: "BitMatrix") -> "BitMatrix":
        if self.rows != other.rows:
            raise ValueError(f"row mismatch: {self.rows} vs {other.rows}")
        merged = [
            a | (b << self.cols) for a, b in zip(self.row_bits, other.row_bits)
        ]
        return BitMatrix(self.rows, self.cols + other.cols, merged)

    def to_text(self) -> str:
        body = "\n".join(self.row(i).to_text() for i in range(self.rows))
        return f"{self.rows} {self.cols}\n{body}\n"

    def to_array(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols), dtype=np.uint8)
        for i, r in enumerate(self.row_bits):
            while r:
                j = _lowest_set_bit(r)
                out[i, j] = 1
                r &= r - 1
        return out


def _echelon_pivots(row_bits: Iterable[int]) -> dict[int, int]:
    """Sift rows into an echelon basis keyed by pivot column.

    Partial pivoting picks the leftmost set bit of each incoming row after
    reduction by the basis collected so far.
    """
    pivots: dict[int, int] = {}
    for r in row_bits:
        r = _sift(r, pivots)
        if r:
            pivots[_lowest_set_bit(r)] = r
    return pivots


def _sift(r: int, pivots: dict[int, int]) -> int:
    """Reduce a row against an echelon basis until its pivot is new or zero."""
    while r:
        p = _lowest_set_bit(r)
        if p not in pivots:
            return r
        r ^= pivots[p]
    return 0


def rank(m: BitMatrix) -> int:
    """Row rank of a matrix over GF(2).

    Args:
        m: Any matrix.

    Returns:
        The number of linearly independent rows.
    """
    return len(_echelon_pivots(m.row_bits))


def kernel_basis(m: BitMatrix) -> list[BitVector]:
    """Basis of the right null space {v : Mv = 0}.

    Args:
        m: Any matrix.

    Returns:
        cols - rank(m) independent vectors, each annihilated by m.  The
        basis is deterministic: one vector per free column of the reduced
        echelon form, in ascending column order.
    """
    # Full Gauss-Jordan so each pivot column is zero elsewhere.
    reduced: list[int] = []
    pivot_cols: list[int] = []
    for r in m.row_bits:
        r = _sift_full(r, reduced, pivot_cols)
        if not r:
            continue
        p = _lowest_set_bit(r)
        for idx, existing in enumerate(reduced):
            if (existing >> p) & 1:
                reduced[idx] = existing ^ r
        reduced.append(r)
        pivot_cols.append(p)
    pivot_set = set(pivot_cols)
    basis = []
    for free in range(m.cols):
        if free in pivot_set:
            continue
        v = 1 << free
        for r, p in zip(reduced, pivot_cols):
            if (r >> free) & 1:
                v |= 1 << p
        basis.append(BitVector(m.cols, v))
    return basis


def _sift_full(r: int, reduced: list[int], pivot_cols: list[int]) -> int:
    for row, p in zip(reduced, pivot_cols):
        if (r >> p) & 1:
            r ^= row
    return r


def mat_mul(a: BitMatrix, b: BitMatrix) -> BitMatrix:
    """Product of two matrices over GF(2) (XOR-accumulated AND).

    Args:
        a: Left factor, shape (m, k).
        b: Right factor, shape (k, n).

    Returns:
        The (m, n) product.

    Raises:
        ValueError: If the inner dimensions disagree (a caller bug).
    """
    if a.cols != b.rows:
        raise ValueError(f"inner dimension mismatch: {a.cols} vs {b.rows}")
    out = []
    for r in a.row_bits:
        acc = 0
        while r:
            j = _lowest_set_bit(r)
            acc ^= b.row_bits[j]
            r &= r - 1
        out.append(acc)
    return BitMatrix(a.rows, b.cols, out)


def mat_vec(a: BitMatrix, v: BitVector) -> BitVector:
    """Matrix-vector product over GF(2).

    Raises:
        ValueError: If v.n differs from a.cols.
    """
    if a.cols != v.n:
        raise ValueError(f"dimension mismatch: {a.cols} vs {v.n}")
    bits = 0
    for i, r in enumerate(a.row_bits):
        if (r & v.bits).bit_count() & 1:
            bits |= 1 << i
    return BitVector(a.rows, bits)


def in_row_space(m: BitMatrix, v: BitVector) -> bool:
    """Whether v is an XOR combination of the rows of m."""
    if v.n != m.cols:
        raise ValueError(f"dimension mismatch: {m.cols} vs {v.n}")
    return _sift(v.bits, _echelon_pivots(m.row_bits)) == 0


def quotient_basis(k: Sequence[BitVector], s: BitMatrix) -> list[BitVector]:
    """Coset representatives extending a basis of row(s) to span(k).

    Args:
        k: Vectors spanning the larger space.
        s: Matrix whose row space is the subspace to quotient out.

    Returns:
        dim span(k) - rank(s) vectors; no nonzero combination of them lies
        in row(s).  The choice is deterministic (pivot order of the sift).

    Raises:
        ValueError: If some vector length differs from s.cols, or row(s) is
            not contained in span(k) (an inconsistent code).
    """
    for v in k:
        if v.n != s.cols:
            raise ValueError("vector length differs from the ambient space")
    span_k = _echelon_pivots(v.bits for v in k)
    for r in s.row_bits:
        if _sift(r, span_k) != 0:
            raise ValueError("row space of s is not contained in span(k)")
    pivots = _echelon_pivots(s.row_bits)
    reps = []
    for v in k:
        r = _sift(v.bits, pivots)
        if r:
            pivots[_lowest_set_bit(r)] = r
            reps.append(BitVector(s.cols, r))
    return reps
