"""Tests for noise sampling and BP+OSD decoding."""

import numpy as np
import pytest

from conftest import toric_code

from qecbo.decoding import (
    BlockDecoder,
    DecoderConfig,
    DecoderConfigError,
    DecoderContractError,
    DepolarizingChannel,
    InconsistentSyndromeError,
    PauliError,
    Syndrome,
    bp_decode,
    decode_css,
    is_logical_failure,
    osd_postprocess,
    sample_error,
    sample_error_block,
    syndrome,
)
from qecbo.gf2 import BitMatrix, BitVector, mat_vec


def unit_error(n: int, j: int, side: str) -> PauliError:
    ex = BitVector(n, 1 << j if side == "x" else 0)
    ez = BitVector(n, 1 << j if side == "z" else 0)
    return PauliError(ex=ex, ez=ez)


class TestSampling:
    def test_p_zero_is_silent(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            e = sample_error(DepolarizingChannel(0.0), 50, rng)
            assert e.ex.is_zero() and e.ez.is_zero()

    def test_p_one_always_errs_with_uniform_types(self):
        rng = np.random.default_rng(1)
        n = 100_000
        e = sample_error(DepolarizingChannel(1.0), n, rng)
        ex, ez = e.ex.to_array(), e.ez.to_array()
        assert np.all(ex | ez)
        counts = {
            "x": int(np.sum(ex & ~ez & 1)),
            "y": int(np.sum(ex & ez)),
            "z": int(np.sum(ez & ~ex & 1)),
        }
        sigma = np.sqrt(n * (1 / 3) * (2 / 3))
        for c in counts.values():
            assert abs(c - n / 3) < 3 * sigma

    def test_afflicted_fraction(self):
        rng = np.random.default_rng(2)
        n = 100_000
        p = 0.05
        e = sample_error(DepolarizingChannel(p), n, rng)
        frac = np.mean(e.ex.to_array() | e.ez.to_array())
        assert abs(frac - p) < 3 * np.sqrt(p * (1 - p) / n)

    def test_fixed_seed_reproducible(self):
        a = sample_error(DepolarizingChannel(0.3), 64, np.random.default_rng(42))
        b = sample_error(DepolarizingChannel(0.3), 64, np.random.default_rng(42))
        assert a == b

    def test_block_matches_channel_semantics(self):
        rng = np.random.default_rng(3)
        ex, ez = sample_error_block(DepolarizingChannel(1.0), 16, 8, rng)
        assert ex.shape == ez.shape == (8, 16)
        assert np.all(ex | ez)

    def test_bad_probability_rejected(self):
        with pytest.raises(ValueError):
            DepolarizingChannel(1.5)


class TestSyndrome:
    def test_zero_error(self):
        code = toric_code(3)
        s = syndrome(code, PauliError(ex=BitVector(18), ez=BitVector(18)))
        assert s.sx.is_zero() and s.sz.is_zero()

    def test_unit_error_gives_column(self):
        code = toric_code(3)
        for j in range(code.n):
            s = syndrome(code, unit_error(code.n, j, "x"))
            assert s.sx.to_array().tolist() == code.hz.to_array()[:, j].tolist()

    def test_stabilizer_row_is_invisible(self):
        code = toric_code(3)
        e = PauliError(ex=code.hx.row(0), ez=BitVector(18))
        assert syndrome(code, e).sx.is_zero()


class TestBpDecode:
    def test_zero_syndrome_fixed_point(self):
        code = toric_code(3)
        cfg = DecoderConfig(prior_flip_probability=0.05)
        post, hard, converged = bp_decode(code.hz, BitVector(code.hz.rows), cfg)
        assert converged
        assert hard.is_zero()
        assert np.all(post < 0.5)

    def test_single_bit_errors_decode_to_min_weight(self):
        code = toric_code(3)
        cfg = DecoderConfig(prior_flip_probability=0.05)
        for j in range(code.n):
            s = mat_vec(code.hz, BitVector(code.n, 1 << j))
            post, hard, converged = bp_decode(code.hz, s, cfg)
            assert converged
            assert mat_vec(code.hz, hard) == s
            assert hard == BitVector(code.n, 1 << j)

    def test_degenerate_priors_rejected(self):
        for prior in (0.0, 0.5, 1.0):
            with pytest.raises(DecoderConfigError):
                DecoderConfig(prior_flip_probability=prior)

    def test_damping_still_converges(self):
        code = toric_code(3)
        cfg = DecoderConfig(prior_flip_probability=0.05, damping=0.3)
        s = mat_vec(code.hz, BitVector(code.n, 0b11))
        post, hard, converged = bp_decode(code.hz, s, cfg)
        assert converged
        assert mat_vec(code.hz, hard) == s


class TestOsd:
    def test_zero_syndrome_low_priors(self):
        code = toric_code(3)
        e = osd_postprocess(code.hz, BitVector(code.hz.rows), np.full(code.n, 0.01))
        assert e.is_zero()

    def test_invertible_square_ignores_posteriors(self):
        rng = np.random.default_rng(5)
        # Random invertible square matrix: retry until full rank.
        from qecbo.gf2 import rank

        while True:
            h = BitMatrix.from_array(rng.integers(0, 2, size=(8, 8)))
            if rank(h) == 8:
                break
        true_e = BitVector.from_array(rng.integers(0, 2, size=8))
        s = mat_vec(h, true_e)
        for _ in range(5):
            post = rng.random(8)
            assert osd_postprocess(h, s, post) == true_e

    def test_random_rectangular_always_consistent(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            h = BitMatrix.from_array(rng.integers(0, 2, size=(10, 20)))
            true_e = BitVector.from_array(rng.integers(0, 2, size=20))
            s = mat_vec(h, true_e)
            e_hat = osd_postprocess(h, s, rng.random(20))
            assert mat_vec(h, e_hat) == s

    def test_inconsistent_syndrome_rejected(self):
        h = BitMatrix.from_text("2 3\n110\n110")
        s = BitVector.from_text("10")
        with pytest.raises(InconsistentSyndromeError):
            osd_postprocess(h, s, np.full(3, 0.1))

    def test_tie_break_prefers_low_column_index(self):
        # Two identical columns: equal posteriors must pick the lower index.
        h = BitMatrix.from_text("1 2\n11")
        e = osd_postprocess(h, BitVector.from_text("1"), np.array([0.3, 0.3]))
        assert e == BitVector.from_text("10")


class TestDecodeCss:
    def test_zero_syndrome(self):
        code = toric_code(3)
        cfg = DecoderConfig(prior_flip_probability=0.05)
        s = Syndrome(sx=BitVector(code.hz.rows), sz=BitVector(code.hx.rows))
        e_hat = decode_css(code, s, cfg)
        assert e_hat.ex.is_zero() and e_hat.ez.is_zero()

    def test_weight_one_x_errors_are_corrected(self):
        code = toric_code(3)
        cfg = DecoderConfig(prior_flip_probability=0.05)
        for j in range(code.n):
            e = unit_error(code.n, j, "x")
            e_hat = decode_css(code, syndrome(code, e), cfg)
            assert not is_logical_failure(code, e, e_hat)

    def test_sides_are_decoupled(self):
        code = toric_code(3)
        cfg = DecoderConfig(prior_flip_probability=0.05)
        rng = np.random.default_rng(11)
        ez = BitVector.from_array(rng.integers(0, 2, size=code.n))
        sz = mat_vec(code.hx, ez)
        zero = BitVector(code.hz.rows)
        a = decode_css(code, Syndrome(sx=zero, sz=sz), cfg)
        b_sx = mat_vec(code.hz, BitVector(code.n, 1))
        b = decode_css(code, Syndrome(sx=b_sx, sz=sz), cfg)
        assert a.ez == b.ez
        assert a.ex.is_zero()


class TestLogicalFailure:
    def test_perfect_correction(self):
        code = toric_code(3)
        e = unit_error(code.n, 4, "x")
        assert not is_logical_failure(code, e, e)

    def test_stabilizer_residual_is_harmless(self):
        code = toric_code(3)
        e = unit_error(code.n, 4, "x")
        ehat = PauliError(ex=e.ex ^ code.hx.row(2), ez=e.ez)
        assert not is_logical_failure(code, e, ehat)

    def test_logical_residual_is_failure(self):
        code = toric_code(3)
        e = unit_error(code.n, 4, "x")
        ehat = PauliError(ex=e.ex ^ code.lx.row(0), ez=e.ez)
        assert is_logical_failure(code, e, ehat)

    def test_any_stabilizer_added_keeps_classification(self):
        code = toric_code(3)
        rng = np.random.default_rng(13)
        e = PauliError(
            ex=BitVector.from_array(rng.integers(0, 2, size=code.n)),
            ez=BitVector.from_array(rng.integers(0, 2, size=code.n)),
        )
        base = is_logical_failure(code, e, e)
        for i in range(code.hx.rows):
            ehat = PauliError(ex=e.ex ^ code.hx.row(i), ez=e.ez ^ code.hz.row(i))
            assert is_logical_failure(code, e, ehat) == base

    def test_contract_breach_detected(self):
        code = toric_code(3)
        e = unit_error(code.n, 0, "x")
        bad = PauliError(ex=BitVector(code.n), ez=BitVector(code.n))
        with pytest.raises(DecoderContractError):
            is_logical_failure(code, e, bad)


class TestBlockDecoder:
    def test_block_matches_single_shot_path(self):
        code = toric_code(3)
        cfg = DecoderConfig(prior_flip_probability=2 * 0.08 / 3)
        rng = np.random.default_rng(17)
        ex, ez = sample_error_block(DepolarizingChannel(0.08), code.n, 40, rng)
        decoder = BlockDecoder(code, cfg)
        sx, sz = decoder.syndromes(ex, ez)
        bex, bez = decoder.decode(sx, sz)
        for i in range(40):
            s = Syndrome(
                sx=BitVector.from_array(sx[i]), sz=BitVector.from_array(sz[i])
            )
            single = decode_css(code, s, cfg)
            assert single.ex.to_array().tolist() == bex[i].tolist()
            assert single.ez.to_array().tolist() == bez[i].tolist()

    def test_chunking_is_invisible(self):
        code = toric_code(3)
        cfg = DecoderConfig(prior_flip_probability=2 * 0.08 / 3)
        rng = np.random.default_rng(19)
        ex, ez = sample_error_block(DepolarizingChannel(0.08), code.n, 64, rng)
        decoder = BlockDecoder(code, cfg)
        sx, sz = decoder.syndromes(ex, ez)
        whole = decoder.decode(sx, sz)
        parts = [decoder.decode(sx[i : i + 7], sz[i : i + 7]) for i in range(0, 64, 7)]
        glued_x = np.concatenate([p[0] for p in parts])
        glued_z = np.concatenate([p[1] for p in parts])
        assert np.array_equal(whole[0], glued_x)
        assert np.array_equal(whole[1], glued_z)
