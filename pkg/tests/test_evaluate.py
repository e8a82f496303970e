"""Tests for LER estimation, Hamming-bound terms, and the objective."""

import math
from fractions import Fraction

import numpy as np
import pytest

from conftest import toric_code

from qecbo.decoding import DepolarizingChannel
from qecbo.evaluate import (
    EvalRecord,
    LerEstimate,
    ObjectiveConfig,
    PseudoModelError,
    binomial_tail,
    estimate_ler,
    f2,
    f2_real,
    fit_pseudo_model,
    lerpq,
    objective,
    objective_moments,
    pseudo_t,
)


def exact_tail(n: int, t: int, p: float) -> float:
    """Oracle: exact rational tail sum at the binary-float value of p."""
    q = Fraction(p)
    total = Fraction(0)
    for j in range(t + 1, n + 1):
        total += math.comb(n, j) * q**j * (1 - q) ** (n - j)
    return float(total)


class TestEstimateLer:
    def test_p_zero(self):
        est = estimate_ler(toric_code(3), DepolarizingChannel(0.0), 100, seed=0)
        assert est.p_l == 0.0 and est.failures == 0

    def test_p_one_nearly_always_fails(self):
        # At p = 1 success still happens when the residual lands in the
        # trivial coset by chance, about (1/4)^2 for this k = 2 code, so
        # p_l sits near 0.95 rather than above 0.99.
        est = estimate_ler(toric_code(3), DepolarizingChannel(1.0), 1000, seed=1)
        assert est.p_l > 0.9

    def test_rates_ordered_with_separated_intervals(self):
        code = toric_code(3)
        lo = estimate_ler(code, DepolarizingChannel(0.01), 10_000, seed=2)
        hi = estimate_ler(code, DepolarizingChannel(0.10), 10_000, seed=3)
        assert lo.p_l + 3 * lo.std_error < hi.p_l - 3 * hi.std_error

    def test_seed_reproducible(self):
        code = toric_code(3)
        a = estimate_ler(code, DepolarizingChannel(0.08), 2000, seed=5)
        b = estimate_ler(code, DepolarizingChannel(0.08), 2000, seed=5)
        assert a == b

    def test_worker_count_is_invisible(self):
        code = toric_code(3)
        ch = DepolarizingChannel(0.08)
        serial = estimate_ler(code, ch, 1537, seed=7, workers=1)
        threaded = estimate_ler(code, ch, 1537, seed=7, workers=4)
        assert serial == threaded

    def test_std_error_formula(self):
        est = estimate_ler(toric_code(3), DepolarizingChannel(0.10), 1000, seed=9)
        expect = math.sqrt(est.p_l * (1 - est.p_l) / est.shots)
        assert est.std_error == pytest.approx(expect, rel=1e-12)

    def test_k_zero_rejected(self):
        code = toric_code(3)
        bad = type(code)(
            hx=code.hx, hz=code.hz, n=code.n, k=0, lx=code.lx, lz=code.lz,
            origin=code.origin,
        )
        with pytest.raises(ValueError):
            estimate_ler(bad, DepolarizingChannel(0.05), 10, seed=0)


class TestLerpq:
    def test_zero(self):
        for k in (1, 2, 12):
            assert lerpq(0.0, k) == 0.0

    def test_half(self):
        assert lerpq(0.75, 2) == pytest.approx(0.5, rel=1e-12)

    def test_identity_at_k_one(self):
        for p in (0.001, 0.3, 0.999):
            assert lerpq(p, 1) == pytest.approx(p, rel=1e-12)

    def test_small_rate_series_bracket(self):
        # Bernoulli: (1-p)^(1/k) <= 1 - p/k, so lerpq sits just above p/k;
        # the second-order term bounds the excess by p^2/(2k).
        p, k = 1e-3, 12
        val = lerpq(p, k)
        assert p / k < val < p / k + p * p / (2 * k)

    def test_monotone_in_p_and_k(self):
        assert lerpq(0.2, 3) < lerpq(0.4, 3)
        assert lerpq(0.4, 5) < lerpq(0.4, 3)

    def test_k_zero_rejected(self):
        with pytest.raises(ValueError):
            lerpq(0.5, 0)


class TestF2:
    def test_zero_radius(self):
        for n in (1, 36, 144):
            assert f2(n, 0) == 0.0

    def test_n1_t1(self):
        assert f2(1, 1) == 2.0

    def test_gross_scale_value(self):
        assert f2(144, 1) == pytest.approx(math.log2(433) / 144, rel=1e-13)

    def test_full_radius_counts_all_paulis(self):
        for n in (3, 10, 36):
            assert f2(n, n) == pytest.approx(2.0, rel=1e-12)

    def test_nondecreasing_in_t(self):
        vals = [f2(36, t) for t in range(37)]
        assert all(a <= b for a, b in zip(vals, vals[1:]))

    def test_real_interpolation(self):
        lo, hi = f2(36, 4), f2(36, 5)
        assert f2_real(36, 4.25) == pytest.approx(0.75 * lo + 0.25 * hi, rel=1e-12)
        assert f2_real(36, 4.0) == lo


class TestBinomialTail:
    def test_empty_sum(self):
        assert binomial_tail(10, 10, 0.3) == 0.0

    def test_single_qubit(self):
        assert binomial_tail(1, 0, 0.25) == pytest.approx(0.25, rel=1e-12)

    def test_against_exact_rational_sum(self):
        for n, t, p in [(36, 3, 0.05), (36, 0, 0.05), (144, 7, 0.05), (50, 25, 0.4)]:
            assert binomial_tail(n, t, p) == pytest.approx(
                exact_tail(n, t, p), rel=1e-10
            )

    def test_fractional_t_interpolates(self):
        lo = binomial_tail(36, 2, 0.05)
        hi = binomial_tail(36, 3, 0.05)
        assert binomial_tail(36, 2.25, 0.05) == pytest.approx(
            0.75 * lo + 0.25 * hi, rel=1e-12
        )

    def test_bad_p_rejected(self):
        with pytest.raises(ValueError):
            binomial_tail(10, 2, 0.0)


class TestPseudoModel:
    def test_grid_residuals_small(self):
        for n in (36, 144):
            model = fit_pseudo_model(n, 0.05)
            for t, y in model.grid:
                assert abs(model.f1(t) - y) <= 0.5

    def test_grid_strictly_decreasing(self):
        for n in (18, 36, 72, 144, 200):
            model = fit_pseudo_model(n, 0.05)
            ys = [y for _, y in model.grid]
            assert all(a > b for a, b in zip(ys, ys[1:]))

    def test_grid_ends_at_cutoff(self):
        model = fit_pseudo_model(36, 0.05)
        assert model.grid[-1][1] < -60.0
        assert model.grid[-2][1] >= -60.0

    def test_inversion_roundtrip(self):
        model = fit_pseudo_model(36, 0.05)
        y_hi, y_lo = model.f1(model.t_min), model.f1(model.t_max)
        for y in np.linspace(y_lo + 1e-9, y_hi - 1e-9, 50):
            t_val, clamped = pseudo_t(model, 2.0**y)
            assert not clamped
            assert abs(model.f1(t_val) - y) <= 1e-6

    def test_grid_point_self_consistency(self):
        # The first couple of grid points sit on the flat shoulder of the
        # tail curve, where the cubic underfits and the inverse map is
        # poorly conditioned; displacement there is only bounded by the
        # 0.5 residual tolerance.  Interior points are tight.
        for n in (36, 144):
            model = fit_pseudo_model(n, 0.05)
            shoulder = {model.grid[0][0], model.grid[1][0]}
            for t0, y in model.grid:
                if 2.0**y == 0.0:
                    continue
                t_val, _ = pseudo_t(model, 2.0**y)
                band = 0.5 if t0 in shoulder else 0.25
                assert abs(t_val - t0) <= band, (n, t0, t_val)

    def test_left_endpoint(self):
        model = fit_pseudo_model(36, 0.05)
        p_l = binomial_tail(36, 0, 0.05)
        t_val, _ = pseudo_t(model, p_l)
        assert abs(t_val - 0.0) <= 0.35

    def test_monotone_inversion(self):
        model = fit_pseudo_model(36, 0.05)
        t_big = pseudo_t(model, 1e-3).t_hat
        t_small = pseudo_t(model, 1e-2).t_hat
        assert t_small < t_big

    def test_clamping_flagged(self):
        model = fit_pseudo_model(36, 0.05)
        t_val, clamped = pseudo_t(model, 1.0)
        assert clamped and t_val == model.t_min
        tiny = 2.0 ** (model.f1(model.t_max) - 5)
        t_val, clamped = pseudo_t(model, tiny)
        assert clamped and t_val == model.t_max

    def test_zero_p_l_rejected(self):
        model = fit_pseudo_model(36, 0.05)
        with pytest.raises(ValueError):
            pseudo_t(model, 0.0)

    def test_bad_channel_rejected(self):
        with pytest.raises(ValueError):
            fit_pseudo_model(36, 0.6)


class TestObjective:
    def test_floor_point(self):
        assert objective(36, 0, 0.0, 0.5) == -1.0

    def test_bound_saturation(self):
        # With t chosen so f2(n, t) = 1 - k/n exactly, F = 0; synthesize by
        # inverting: pick n, k and solve f2 numerically at a fractional t.
        n, k = 36, 6
        target = 1.0 - k / n
        lo, hi = 0.0, float(n)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if f2_real(n, mid) < target:
                lo = mid
            else:
                hi = mid
        assert objective(n, k, 0.5 * (lo + hi), 1.0) == pytest.approx(0.0, abs=1e-9)

    def test_gross_scale_with_oracle_f2(self):
        expect = 0.25 + math.log2(433) / 144 - 1.0
        assert objective(144, 36, 1.0, 1.0) == pytest.approx(expect, rel=1e-12)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ObjectiveConfig(lam=0.0, physical_p=0.05, shots=100)
        with pytest.raises(ValueError):
            ObjectiveConfig(lam=1.5, physical_p=0.05, shots=100)
        ObjectiveConfig(lam=1.0, physical_p=0.05, shots=100)


class TestObjectiveMoments:
    def test_zero_sigma(self):
        model = fit_pseudo_model(36, 0.05)
        mu, sigma = objective_moments(math.log(1e-3), 0.0, 36, 6, 1.0, model)
        assert sigma == 0.0
        t_val = pseudo_t(model, 1e-3).t_hat
        assert mu == pytest.approx(objective(36, 6, t_val, 1.0), rel=1e-12)

    def test_clamped_region_has_zero_slope(self):
        model = fit_pseudo_model(36, 0.05)
        # log p_l far above the fitted range: both offsets clamp to t_min.
        mu, sigma = objective_moments(math.log(0.9999), 0.5, 36, 6, 1.0, model)
        assert sigma == 0.0

    def test_step_halving_agreement(self):
        model = fit_pseudo_model(36, 0.05)
        u = math.log(1e-3)
        _, s1 = objective_moments(u, 1.0, 36, 6, 1.0, model, step=1e-3)
        _, s2 = objective_moments(u, 1.0, 36, 6, 1.0, model, step=5e-4)
        assert s1 == pytest.approx(s2, rel=0.01)

    def test_negative_sigma_rejected(self):
        model = fit_pseudo_model(36, 0.05)
        with pytest.raises(ValueError):
            objective_moments(0.0, -1.0, 36, 6, 1.0, model)


class TestEvalRecord:
    def test_json_roundtrip(self):
        rec = EvalRecord(
            index=3, bits="0110", ell=6, em=3, valid=True, n=36, k=6,
            physical_p=0.05, shots=1000, failures=17, p_l=0.017,
            std_error=0.004, floored=False, t_hat=2.5, t_clamped=False,
            objective_value=-0.5, lam=1.0, seed=1234, wall_time=0.7,
        )
        assert EvalRecord.from_json(rec.to_json()) == rec

    def test_invalid_record_roundtrip(self):
        rec = EvalRecord(
            index=0, bits="0000", ell=6, em=3, valid=False, n=None, k=None,
            physical_p=0.05, shots=None, failures=None, p_l=None,
            std_error=None, floored=False, t_hat=None, t_clamped=False,
            objective_value=-1.0, lam=1.0, seed=99, wall_time=0.0,
        )
        assert EvalRecord.from_json(rec.to_json()) == rec
