"""Construction and validation of CSS codes.

Two families are built here.  Bivariate bicycle codes arise from a pair of
polynomials a, b in the group algebra F2[x, y]/(x^l - 1, y^m - 1) encoded
as a binary vector; the checks are Hx = [A | B], Hz = [B^T | A^T] with
A = B(a), B = B(b), which commute identically because the two circulant
factors commute.  Hypergraph product codes arise from two classical parity
checks H1 (m1 x n1) and H2 (m2 x n2) via

    Hx = [H1 (x) I_n2 | I_m1 (x) H2^T]
    Hz = [I_n1 (x) H2 | H1^T (x) I_m2]

with n = n1*n2 + m1*m2.  In both cases the logical count is always taken
from the rank formula k = n - rank(Hx) - rank(Hz), and logical bases are
homology coset representatives normalized so that Lx Lz^T is the identity.

Invalid candidates (k = 0, or a bicycle vector whose two polynomial halves
are both zero) are values, not errors: the constructors return ``None`` so
search loops can score them uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass

from .gf2 import (
    BitMatrix,
    BitVector,
    in_row_space,
    kernel_basis,
    mat_mul,
    quotient_basis,
    rank,
)

__all__ = [
    "ConstructionError",
    "CssCode",
    "BbParams",
    "HgpParams",
    "circulant",
    "bb_from_bits",
    "hgp",
    "logical_bases",
    "check_invariants",
    "to_record",
    "from_record",
]


class ConstructionError(RuntimeError):
    """An internal construction invariant failed (a bug, not bad input)."""


@dataclass(frozen=True)
class CssCode:
    """A CSS code with parity checks, parameters, and logical bases.

    Attributes:
        hx: X-type checks, shape (mx, n).
        hz: Z-type checks, shape (mz, n).
        n: Number of physical qubits.
        k: Number of logical qubits, n - rank(hx) - rank(hz).
        lx: X-logical basis, shape (k, n), rows in ker(hz) modulo row(hx).
        lz: Z-logical basis, shape (k, n), rows in ker(hx) modulo row(hz).
        origin: Construction descriptor for reports and serialization.
    """

    hx: BitMatrix
    hz: BitMatrix
    n: int
    k: int
    lx: BitMatrix
    lz: BitMatrix
    origin: str

    @property
    def rate(self) -> float:
        return self.k / self.n


@dataclass(frozen=True)
class BbParams:
    """Bivariate bicycle search point: cyclic orders and coefficient bits.

    ``bits`` concatenates the coefficient vectors of the two polynomials,
    each of length ell + em - 1.  Within a half, index 0 selects the
    identity element, indices 1..ell-1 select x^i, and indices ell and
    above select y^(i-ell).
    """

    ell: int
    em: int
    bits: BitVector

    def __post_init__(self):
        if self.ell < 1 or self.em < 1:
            raise ValueError("cyclic orders must be positive")
        expect = 2 * (self.ell + self.em - 1)
        if self.bits.n != expect:
            raise ValueError(f"bits length must be {expect}, got {self.bits.n}")


@dataclass(frozen=True)
class HgpParams:
    """Hypergraph product inputs: two classical parity-check matrices."""

    h1: BitMatrix
    h2: BitMatrix

    def __post_init__(self):
        if min(self.h1.rows, self.h1.cols, self.h2.rows, self.h2.cols) < 1:
            raise ValueError("parity-check matrices must be nonempty")


def circulant(r: int, power: int) -> BitMatrix:
    """The r x r cyclic-shift matrix raised to ``power``.

    Row i has its single 1 in column (i + power) mod r, so circulant(r, 0)
    is the identity and repeated products cycle with period r.
    """
    if not 0 <= power < r:
        raise ValueError(f"power must satisfy 0 <= power < {r}, got {power}")
    return BitMatrix(r, r, [1 << ((i + power) % r) for i in range(r)])


def _shift_term(ell: int, em: int, xpow: int, ypow: int) -> list[int]:
    """Row bits of B(g_l)^xpow (x) B(g_m)^ypow on the ell*em group basis."""
    rows = []
    for u in range(ell):
        tu = ((u + xpow) % ell) * em
        for v in range(em):
            rows.append(1 << (tu + (v + ypow) % em))
    return rows


def _bb_block(ell: int, em: int, half: int) -> BitMatrix | None:
    """Group-algebra matrix of one polynomial half, or None if zero."""
    dim = ell * em
    acc = None
    for i in range(ell + em - 1):
        if not (half >> i) & 1:
            continue
        term = _shift_term(ell, em, i, 0) if i < ell else _shift_term(ell, em, 0, i - ell)
        acc = term if acc is None else [a ^ t for a, t in zip(acc, term)]
    return None if acc is None else BitMatrix(dim, dim, acc)


def bb_from_bits(p: BbParams) -> CssCode | None:
    """Build a bivariate bicycle code from a binary search vector.

    The first ell + em - 1 bits are the coefficients of a, the rest those
    of b.  Returns ``None`` (the invalid marker) when both polynomials are
    zero or when the rank formula gives k = 0.
    """
    half_len = p.ell + p.em - 1
    mask = (1 << half_len) - 1
    a_bits = p.bits.bits & mask
    b_bits = p.bits.bits >> half_len
    a = _bb_block(p.ell, p.em, a_bits)
    b = _bb_block(p.ell, p.em, b_bits)
    if a is None and b is None:
        return None
    dim = p.ell * p.em
    zero = BitMatrix.zeros(dim, dim)
    a = a if a is not None else zero
    b = b if b is not None else zero
    hx = a.hstack(b)
    hz = b.transpose().hstack(a.transpose())
    origin = f"bb(ell={p.ell},em={p.em},bits={p.bits.to_text()})"
    return _assemble(hx, hz, origin)


def _kron(a: BitMatrix, b: BitMatrix) -> BitMatrix:
    """Kronecker product over GF(2)."""
    rows = []
    for i in range(a.rows):
        arow = a.row_bits[i]
        for u in range(b.rows):
            brow = b.row_bits[u]
            acc = 0
            bits = arow
            while bits:
                j = (bits & -bits).bit_length() - 1
                acc |= brow << (j * b.cols)
                bits &= bits - 1
            rows.append(acc)
    return BitMatrix(a.rows * b.rows, a.cols * b.cols, rows)


def hgp(p: HgpParams) -> CssCode | None:
    """Build the hypergraph product of two classical parity checks.

    Returns ``None`` when k = 0.  The rank-formula k is cross-checked
    against the product formula k1*k2 + k1T*k2T built from the kernel
    dimensions of H1, H2 and their transposes.
    """
    h1, h2 = p.h1, p.h2
    m1, n1 = h1.rows, h1.cols
    m2, n2 = h2.rows, h2.cols
    hx = _kron(h1, BitMatrix.identity(n2)).hstack(_kron(BitMatrix.identity(m1), h2.transpose()))
    hz = _kron(BitMatrix.identity(n1), h2).hstack(_kron(h1.transpose(), BitMatrix.identity(m2)))
    origin = f"hgp(h1={m1}x{n1},h2={m2}x{n2})"
    code = _assemble(hx, hz, origin)
    r1, r2 = rank(h1), rank(h2)
    k_product = (n1 - r1) * (n2 - r2) + (m1 - r1) * (m2 - r2)
    k_rank = code.k if code is not None else 0
    if k_rank != k_product:
        raise ConstructionError(
            f"hypergraph product k mismatch: rank formula {k_rank}, "
            f"product formula {k_product}"
        )
    return code


def _assemble(hx: BitMatrix, hz: BitMatrix, origin: str) -> CssCode | None:
    if hx.cols != hz.cols:
        raise ConstructionError("check matrices disagree on qubit count")
    if any(r for r in mat_mul(hx, hz.transpose()).row_bits):
        raise ConstructionError(f"stabilizers do not commute for {origin}")
    n = hx.cols
    k = n - rank(hx) - rank(hz)
    if k <= 0:
        return None
    lx, lz = logical_bases(hx, hz)
    return CssCode(hx=hx, hz=hz, n=n, k=k, lx=lx, lz=lz, origin=origin)


def logical_bases(hx: BitMatrix, hz: BitMatrix) -> tuple[BitMatrix, BitMatrix]:
    """Extract paired logical bases from commuting CSS checks.

    Lz rows represent ker(hx)/row(hz) and Lx rows ker(hz)/row(hx); the Lx
    basis is then changed so the pairing Lx Lz^T becomes the k x k
    identity, which makes per-logical-qubit failure attribution well
    defined downstream.

    Raises:
        ConstructionError: If the pairing matrix is singular, which cannot
            happen for commuting checks with k >= 1 and signals a bug.
    """
    lz_rows = quotient_basis(kernel_basis(hx), hz)
    lx_rows = quotient_basis(kernel_basis(hz), hx)
    if len(lz_rows) != len(lx_rows):
        raise ConstructionError(
            f"logical basis size mismatch: {len(lx_rows)} vs {len(lz_rows)}"
        )
    k = len(lz_rows)
    lz = BitMatrix.from_vectors(lz_rows, hx.cols)
    lx = BitMatrix.from_vectors(lx_rows, hx.cols)
    pairing = mat_mul(lx, lz.transpose())
    inverse = _gf2_inverse(pairing)
    if inverse is None:
        raise ConstructionError(f"singular {k}x{k} logical pairing matrix")
    return mat_mul(inverse, lx), lz


def _gf2_inverse(m: BitMatrix) -> BitMatrix | None:
    """Inverse of a square matrix over GF(2), or None if singular."""
    if m.rows != m.cols:
        raise ValueError("only square matrices can be inverted")
    n = m.rows
    # Augmented rows [m | I], Gauss-Jordan on the left block.
    aug = [m.row_bits[i] | (1 << (n + i)) for i in range(n)]
    left_mask = (1 << n) - 1
    row_of_pivot = {}
    for r in aug:
        while r & left_mask:
            p = (r & -r).bit_length() - 1
            if p not in row_of_pivot:
                row_of_pivot[p] = r
                break
            r ^= row_of_pivot[p]
    if len(row_of_pivot) < n:
        return None
    # Back-substitute so each pivot column is isolated.
    for p in sorted(row_of_pivot, reverse=True):
        r = row_of_pivot[p]
        for q in row_of_pivot:
            if q < p and (row_of_pivot[q] >> p) & 1:
                row_of_pivot[q] ^= r
    return BitMatrix(n, n, [row_of_pivot[p] >> n for p in range(n)])


def check_invariants(code: CssCode) -> dict[str, bool]:
    """Evaluate every CssCode invariant; keys name the checked property."""
    k = code.k
    pairing = mat_mul(code.lx, code.lz.transpose())
    return {
        "stabilizers_commute": not any(
            mat_mul(code.hx, code.hz.transpose()).row_bits
        ),
        "rank_formula_k": k == code.n - rank(code.hx) - rank(code.hz),
        "hx_annihilates_lz": not any(mat_mul(code.hx, code.lz.transpose()).row_bits),
        "hz_annihilates_lx": not any(mat_mul(code.hz, code.lx.transpose()).row_bits),
        "canonical_pairing": pairing == BitMatrix.identity(k),
        "lz_outside_row_hz": all(
            not in_row_space(code.hz, code.lz.row(i)) for i in range(k)
        ),
        "lx_outside_row_hx": all(
            not in_row_space(code.hx, code.lx.row(i)) for i in range(k)
        ),
    }


def to_record(code: CssCode) -> dict:
    """Serializable description sufficient to rebuild the code."""
    record: dict = {"origin": code.origin, "n": code.n, "k": code.k}
    if code.origin.startswith("bb("):
        inner = code.origin[3:-1]
        fields = dict(part.split("=") for part in inner.split(","))
        record.update(
            kind="bb", ell=int(fields["ell"]), em=int(fields["em"]), bits=fields["bits"]
        )
    else:
        record.update(
            kind="hgp", hx=code.hx.to_text(), hz=code.hz.to_text()
        )
    return record


def from_record(record: dict) -> CssCode | None:
    """Rebuild a code from :func:`to_record` output.

    Raises:
        ValueError: If the stored (n, k) disagree with the reconstruction,
            which indicates a stale or corrupted record.
    """
    if record["kind"] == "bb":
        params = BbParams(
            ell=record["ell"], em=record["em"], bits=BitVector.from_text(record["bits"])
        )
        code = bb_from_bits(params)
    elif record["kind"] == "hgp":
        hx = BitMatrix.from_text(record["hx"])
        hz = BitMatrix.from_text(record["hz"])
        code = _assemble(hx, hz, record["origin"])
    else:
        raise ValueError(f"unknown code record kind {record['kind']!r}")
    got = (None if code is None else (code.n, code.k))
    want = (record["n"], record["k"]) if record["k"] else None
    if got != want:
        raise ValueError(f"code record mismatch: stored {want}, rebuilt {got}")
    return code
