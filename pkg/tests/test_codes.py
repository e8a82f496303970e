"""Tests for CSS code construction."""

import numpy as np
import pytest

from conftest import gross_code_params, random_bb_params, repetition_check, toric_code

from qecbo.codes import (
    BbParams,
    HgpParams,
    bb_from_bits,
    check_invariants,
    circulant,
    from_record,
    hgp,
    logical_bases,
    to_record,
)
from qecbo.gf2 import BitMatrix, BitVector, kernel_basis, mat_mul, rank


class TestCirculant:
    def test_power_zero_is_identity(self):
        assert circulant(3, 0) == BitMatrix.identity(3)

    def test_order_two_swap(self):
        assert circulant(2, 1) == BitMatrix.from_text("2 2\n01\n10")

    def test_cycle_returns_to_identity(self):
        c = circulant(4, 1)
        acc = c
        for _ in range(3):
            acc = mat_mul(acc, c)
        assert acc == BitMatrix.identity(4)

    def test_power_out_of_range(self):
        with pytest.raises(ValueError):
            circulant(3, 3)


class TestBivariateBicycle:
    def test_identity_only_coefficients_are_invalid(self):
        # a = b = identity element: Hx = [I|I], Hz = [I|I], k = 8 - 4 - 4 = 0.
        half = 2 + 2 - 1
        bits = BitVector(2 * half, 1 | (1 << half))
        assert bb_from_bits(BbParams(ell=2, em=2, bits=bits)) is None

    def test_both_halves_zero_are_invalid(self):
        assert bb_from_bits(BbParams(ell=2, em=2, bits=BitVector(6))) is None

    def test_gross_code_parameters(self):
        code = bb_from_bits(gross_code_params())
        assert code is not None
        assert code.n == 144
        assert code.k == 144 - rank(code.hx) - rank(code.hz) == 12

    def test_random_candidates_commute(self):
        rng = np.random.default_rng(41)
        for _ in range(25):
            code = bb_from_bits(random_bb_params(rng))
            if code is None:
                continue
            assert not any(mat_mul(code.hx, code.hz.transpose()).row_bits)

    def test_pure_function_of_bits(self):
        rng = np.random.default_rng(43)
        params = random_bb_params(rng)
        first = bb_from_bits(params)
        second = bb_from_bits(BbParams(params.ell, params.em, params.bits))
        if first is None:
            assert second is None
        else:
            assert (first.hx, first.hz, first.lx, first.lz) == (
                second.hx,
                second.hz,
                second.lx,
                second.lz,
            )

    def test_invariant_sweep_shape(self):
        rng = np.random.default_rng(47)
        seen_valid = 0
        for _ in range(200):
            code = bb_from_bits(random_bb_params(rng))
            if code is None:
                continue
            seen_valid += 1
            assert code.n == 36
            failed = [name for name, ok in check_invariants(code).items() if not ok]
            assert not failed
        assert seen_valid > 0

    def test_bits_length_checked(self):
        with pytest.raises(ValueError):
            BbParams(ell=6, em=3, bits=BitVector(10))


class TestHypergraphProduct:
    def test_toric_length_three(self):
        code = toric_code(3)
        assert (code.n, code.k) == (18, 2)

    def test_toric_length_four(self):
        code = hgp(HgpParams(h1=repetition_check(4), h2=repetition_check(4)))
        assert code is not None
        assert (code.n, code.k) == (32, 2)

    def test_full_rank_scalar_is_invalid(self):
        one = BitMatrix.from_text("1 1\n1")
        assert hgp(HgpParams(h1=one, h2=one)) is None

    def test_product_formula_cross_check(self):
        # hgp raises internally if the rank formula and the kernel-product
        # formula ever disagree; this drives 100 random instances through it.
        rng = np.random.default_rng(53)
        for _ in range(100):
            h = BitMatrix.from_array(rng.integers(0, 2, size=(6, 6)))
            if not any(h.row_bits):
                continue
            code = hgp(HgpParams(h1=h, h2=h))
            r = rank(h)
            expect = (6 - r) ** 2 + (6 - r) ** 2
            assert (0 if code is None else code.k) == expect

    def test_qubit_count(self):
        rng = np.random.default_rng(59)
        h1 = BitMatrix.from_array(rng.integers(0, 2, size=(3, 5)))
        h2 = BitMatrix.from_array(rng.integers(0, 2, size=(2, 4)))
        code = hgp(HgpParams(h1=h1, h2=h2))
        if code is not None:
            assert code.n == 5 * 4 + 3 * 2


class TestLogicalBases:
    def test_toric_pairing_is_identity(self):
        code = toric_code(3)
        assert code.lx.rows == code.lz.rows == 2
        assert mat_mul(code.lx, code.lz.transpose()) == BitMatrix.identity(2)

    def test_checks_annihilate_logicals(self):
        code = toric_code(3)
        assert not any(mat_mul(code.hx, code.lz.transpose()).row_bits)
        assert not any(mat_mul(code.hz, code.lx.transpose()).row_bits)

    def test_toric_homology_dimension(self):
        # The quotient of ker(Hx) by row(Hz) for the L=3 toric code has
        # exactly two representatives.
        code = toric_code(3)
        from qecbo.gf2 import quotient_basis

        reps = quotient_basis(kernel_basis(code.hx), code.hz)
        assert len(reps) == 2

    def test_standalone_entry_point(self):
        code = toric_code(3)
        lx, lz = logical_bases(code.hx, code.hz)
        assert mat_mul(lx, lz.transpose()) == BitMatrix.identity(2)

    def test_pairing_on_random_valid_candidates(self):
        rng = np.random.default_rng(61)
        checked = 0
        while checked < 10:
            code = bb_from_bits(random_bb_params(rng))
            if code is None:
                continue
            checked += 1
            assert mat_mul(code.lx, code.lz.transpose()) == BitMatrix.identity(code.k)


class TestSerialization:
    def test_bb_roundtrip(self):
        code = bb_from_bits(gross_code_params())
        rebuilt = from_record(to_record(code))
        assert rebuilt is not None
        assert (rebuilt.hx, rebuilt.hz, rebuilt.n, rebuilt.k) == (
            code.hx,
            code.hz,
            code.n,
            code.k,
        )

    def test_hgp_roundtrip(self):
        code = toric_code(3)
        rebuilt = from_record(to_record(code))
        assert rebuilt is not None
        assert (rebuilt.hx, rebuilt.hz, rebuilt.k) == (code.hx, code.hz, code.k)

    def test_tampered_record_rejected(self):
        record = to_record(toric_code(3))
        record["k"] = 5
        with pytest.raises(ValueError):
            from_record(record)
