"""Tests for bit-packed GF(2) linear algebra."""

import numpy as np
import pytest

from qecbo.gf2 import (
    BitMatrix,
    BitVector,
    in_row_space,
    kernel_basis,
    mat_mul,
    mat_vec,
    quotient_basis,
    rank,
)


def brute_force_rank(m: BitMatrix) -> int:
    """Rank via the size of the set of all XOR row combinations."""
    combos = {0}
    for r in m.row_bits:
        combos |= {c ^ r for c in combos}
    return len(combos).bit_length() - 1


def random_matrix(rng, rows, cols) -> BitMatrix:
    return BitMatrix.from_array(rng.integers(0, 2, size=(rows, cols)))


class TestRank:
    def test_identity(self):
        assert rank(BitMatrix.identity(3)) == 3

    def test_zero(self):
        assert rank(BitMatrix.zeros(4, 7)) == 0

    def test_two_by_three(self):
        m = BitMatrix.from_text("2 3\n110\n011")
        assert rank(m) == 2
        assert brute_force_rank(m) == 2

    def test_against_brute_force_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            rows = int(rng.integers(1, 9))
            cols = int(rng.integers(1, 12))
            m = random_matrix(rng, rows, cols)
            assert rank(m) == brute_force_rank(m)

    def test_bounds(self):
        rng = np.random.default_rng(8)
        m = random_matrix(rng, 6, 4)
        assert 0 <= rank(m) <= 4


class TestKernelBasis:
    def test_parity_check(self):
        m = BitMatrix.from_text("1 2\n11")
        basis = kernel_basis(m)
        assert basis == [BitVector.from_text("11")]

    def test_identity_trivial_kernel(self):
        assert kernel_basis(BitMatrix.identity(5)) == []

    def test_rank_nullity_and_annihilation(self):
        rng = np.random.default_rng(11)
        for _ in range(40):
            rows = int(rng.integers(1, 10))
            cols = int(rng.integers(1, 14))
            m = random_matrix(rng, rows, cols)
            basis = kernel_basis(m)
            assert rank(m) + len(basis) == cols
            for v in basis:
                assert mat_vec(m, v).is_zero()
            if basis:
                assert rank(BitMatrix.from_vectors(basis)) == len(basis)


class TestProducts:
    def test_identity_left_factor(self):
        rng = np.random.default_rng(3)
        b = random_matrix(rng, 4, 6)
        assert mat_mul(BitMatrix.identity(4), b) == b

    def test_even_parity(self):
        a = BitMatrix.from_text("1 2\n11")
        assert mat_mul(a, a.transpose()) == BitMatrix.zeros(1, 1)

    def test_schoolbook_oracle_5x5(self):
        rng = np.random.default_rng(5)
        a = random_matrix(rng, 5, 5)
        b = random_matrix(rng, 5, 5)
        expect = (a.to_array().astype(int) @ b.to_array().astype(int)) % 2
        assert mat_mul(a, b).to_array().tolist() == expect.tolist()

    def test_schoolbook_oracle_up_to_64(self):
        rng = np.random.default_rng(6)
        for rows, inner, cols in [(64, 64, 64), (17, 33, 9), (1, 64, 5)]:
            a = random_matrix(rng, rows, inner)
            b = random_matrix(rng, inner, cols)
            expect = (a.to_array().astype(int) @ b.to_array().astype(int)) % 2
            assert mat_mul(a, b).to_array().tolist() == expect.tolist()

    def test_mat_vec_matches_mat_mul(self):
        rng = np.random.default_rng(9)
        m = random_matrix(rng, 7, 11)
        v = BitVector.from_array(rng.integers(0, 2, size=11))
        via_mul = mat_mul(m, BitMatrix.from_vectors([v]).transpose())
        assert mat_vec(m, v).to_array().tolist() == via_mul.to_array()[:, 0].tolist()

    def test_dimension_mismatch_rejected(self):
        a = BitMatrix.identity(3)
        b = BitMatrix.identity(4)
        with pytest.raises(ValueError):
            mat_mul(a, b)
        with pytest.raises(ValueError):
            mat_vec(a, BitVector(4))


class TestRowSpace:
    def test_own_row(self):
        rng = np.random.default_rng(13)
        m = random_matrix(rng, 5, 8)
        for i in range(m.rows):
            assert in_row_space(m, m.row(i))

    def test_zero_vector(self):
        assert in_row_space(BitMatrix.zeros(2, 4), BitVector(4))

    def test_xor_of_rows(self):
        m = BitMatrix.from_text("2 3\n110\n011")
        assert in_row_space(m, BitVector.from_text("101"))
        assert not in_row_space(m, BitVector.from_text("100"))


class TestQuotientBasis:
    def test_equal_spans_give_empty_quotient(self):
        rng = np.random.default_rng(17)
        s = random_matrix(rng, 4, 7)
        assert quotient_basis(s.row_vectors(), s) == []

    def test_empty_subspace(self):
        k = [BitVector.from_text("100"), BitVector.from_text("010")]
        reps = quotient_basis(k, BitMatrix.zeros(0, 3))
        assert len(reps) == 2
        assert rank(BitMatrix.from_vectors(reps)) == 2

    def test_rank_extension_invariant(self):
        rng = np.random.default_rng(19)
        for _ in range(30):
            cols = int(rng.integers(2, 12))
            big = random_matrix(rng, int(rng.integers(1, 10)), cols)
            k = big.row_vectors()
            # Subspace spanned by a random subset of k, guaranteed inside span(k).
            take = rng.integers(0, 2, size=len(k))
            sub_rows = [v.bits for v, t in zip(k, take) if t] or [0]
            s = BitMatrix(len(sub_rows), cols, sub_rows)
            reps = quotient_basis(k, s)
            stacked = BitMatrix(
                s.rows + len(reps), cols, list(s.row_bits) + [r.bits for r in reps]
            )
            assert rank(stacked) == rank(s) + len(reps)
            assert len(reps) == rank(big) - rank(s)
            for r in reps:
                assert not in_row_space(s, r)

    def test_no_combination_falls_into_subspace(self):
        rng = np.random.default_rng(23)
        big = random_matrix(rng, 6, 9)
        k = big.row_vectors()
        s = BitMatrix(2, 9, big.row_bits[:2])
        reps = quotient_basis(k, s)
        for mask in range(1, 1 << len(reps)):
            acc = BitVector(9)
            for i, r in enumerate(reps):
                if (mask >> i) & 1:
                    acc = acc ^ r
            assert not in_row_space(s, acc)

    def test_inconsistent_inputs_rejected(self):
        k = [BitVector.from_text("100")]
        s = BitMatrix.from_text("1 3\n010")
        with pytest.raises(ValueError):
            quotient_basis(k, s)


class TestRepresentation:
    def test_text_roundtrip(self):
        rng = np.random.default_rng(29)
        m = random_matrix(rng, 6, 10)
        assert BitMatrix.from_text(m.to_text()) == m

    def test_array_roundtrip(self):
        rng = np.random.default_rng(31)
        arr = rng.integers(0, 2, size=(5, 9)).astype(np.uint8)
        assert BitMatrix.from_array(arr).to_array().tolist() == arr.tolist()

    def test_vector_text_and_weight(self):
        v = BitVector.from_text("10110")
        assert v.to_text() == "10110"
        assert v.weight() == 3
        assert len(v) == 5
        assert v[0] == 1 and v[1] == 0

    def test_transpose_involution(self):
        rng = np.random.default_rng(37)
        m = random_matrix(rng, 4, 7)
        assert m.transpose().transpose() == m
        assert m.transpose().to_array().tolist() == m.to_array().T.tolist()

    def test_hstack(self):
        a = BitMatrix.from_text("2 2\n10\n01")
        b = BitMatrix.from_text("2 3\n111\n000")
        assert a.hstack(b).to_text() == "2 5\n10111\n01000\n"

    def test_immutability(self):
        m = BitMatrix.identity(2)
        v = BitVector(3, 5)
        with pytest.raises(AttributeError):
            m.rows = 5
        with pytest.raises(AttributeError):
            v.bits = 0

    def test_unused_tail_bits_rejected(self):
        with pytest.raises(ValueError):
            BitVector(2, 4)
        with pytest.raises(ValueError):
            BitMatrix(1, 2, [4])
