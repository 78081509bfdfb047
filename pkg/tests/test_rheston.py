"""Rough Heston CF, fractional Riccati solver and Fourier pricing."""

import numpy as np
import pytest

from roughvol import bsm
from roughvol.fvc import FlatCurve, ParametricCurve, PiecewiseConstantCurve
from roughvol.rheston import (
    RHestonParams,
    RiccatiBlowupError,
    RoughHestonPricer,
    classical_heston_riccati,
    riccati_rhs,
)

FLAT = FlatCurve(0.04)


@pytest.fixture(scope="module")
def pricer():
    return RoughHestonPricer()


class TestParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            RHestonParams(0.0, 0.3, -0.7)
        with pytest.raises(ValueError):
            RHestonParams(0.6, 0.3, -0.7)
        with pytest.raises(ValueError):
            RHestonParams(0.1, -0.3, -0.7)
        with pytest.raises(ValueError):
            RHestonParams(0.1, 0.3, -1.0)
        assert RHestonParams(0.1, 0.3, -0.7).alpha == pytest.approx(0.6)


class TestRiccati:
    def test_zero_argument_gives_zero_solution(self, pricer):
        sol = pricer.riccati_solve(RHestonParams(0.1, 0.4, -0.7), 0.0, 1.0)
        assert np.all(sol.values == 0.0)

    def test_minus_i_gives_zero_solution(self, pricer):
        sol = pricer.riccati_solve(RHestonParams(0.1, 0.4, -0.7), -1j, 1.0)
        assert np.all(np.abs(sol.values) == 0.0)
        phi = pricer.char_fn(RHestonParams(0.1, 0.4, -0.7), FLAT, -1j, 1.0)
        assert abs(phi - 1.0) < 1e-12

    def test_initial_condition_and_grid(self, pricer):
        sol = pricer.riccati_solve(RHestonParams(0.1, 0.4, -0.7), 1.0 - 0.5j, 0.5)
        assert sol.values[0] == 0.0
        assert sol.times[0] == 0.0 and sol.times[-1] == pytest.approx(0.5)
        assert sol.times.size >= 51

    def test_minimum_step_count_enforced(self, pricer):
        with pytest.raises(ValueError):
            pricer.riccati_solve(RHestonParams(0.1, 0.4, -0.7), 1.0, 1.0, n_steps=20)

    def test_classical_limit_matches_closed_form(self, pricer):
        # alpha = 1 member of the family vs the zero-mean-reversion Riccati
        u = 1.0 - 0.5j
        nu, rho = 0.3, -0.7
        sol = pricer.riccati_solve(RHestonParams(0.5, nu, rho), u, 1.0)
        exact = classical_heston_riccati(u, 1.0, nu, rho)
        assert abs(sol.values[-1] - exact) < 1e-5

    def test_closed_form_satisfies_ode(self):
        # independent check of the oracle itself: D' = F(u, D)
        u = 0.7 - 0.5j
        nu, rho = 0.45, -0.6
        t = 0.8
        h = 1e-6
        d_plus = classical_heston_riccati(u, t + h, nu, rho)
        d_minus = classical_heston_riccati(u, t - h, nu, rho)
        deriv = (d_plus - d_minus) / (2 * h)
        rhs = riccati_rhs(u, classical_heston_riccati(u, t, nu, rho), nu, rho)
        assert abs(deriv - rhs) < 1e-7

    def test_blowup_guard(self, pricer):
        with pytest.raises(RiccatiBlowupError):
            pricer.riccati_solve(RHestonParams(0.1, 0.4, -0.7), 1e9, 1.0)


class TestCharFn:
    def test_normalization(self, pricer):
        phi = pricer.char_fn(RHestonParams(0.07, 0.5, -0.8), FLAT, 0.0, 1.3)
        assert abs(phi - 1.0) < 1e-12

    def test_martingale_identity(self, pricer):
        for curve in (FLAT, ParametricCurve(0.05, -0.02, 0.1, 0.7, 0.08)):
            phi = pricer.char_fn(RHestonParams(0.07, 0.5, -0.8), curve, -1j, 0.9)
            assert abs(phi - 1.0) < 1e-8

    def test_vanishing_vol_of_vol_limit(self, pricer):
        params = RHestonParams(0.1, 1e-6, -0.7)
        for curve in (FLAT, ParametricCurve(0.05, -0.02, 0.1, 0.7, 0.08)):
            for T in (0.1, 1.0):
                w = curve.integrated_variance(T)
                for u in (0.5 - 0.5j, 1.0 + 0.3j):
                    log_phi = np.log(pricer.char_fn(params, curve, u, T))
                    target = -0.5 * u * (u + 1j) * w
                    assert abs(log_phi - target) < 1e-6 * abs(target)

    def test_vol_of_vol_correction_vanishes_linearly(self, pricer):
        # the residual at small nu is the genuine O(nu) correction, so it
        # shrinks tenfold when nu does
        u, T = 2.0 - 0.5j, 1.0
        target = -0.5 * u * (u + 1j) * FLAT.integrated_variance(T)
        errs = []
        for nu in (1e-6, 1e-7):
            log_phi = np.log(pricer.char_fn(RHestonParams(0.1, nu, -0.7), FLAT, u, T))
            errs.append(abs(log_phi - target) / abs(target))
        assert errs[0] < 2e-6
        assert errs[1] < 0.15 * errs[0]

    def test_hermitian_symmetry(self, pricer):
        params = RHestonParams(0.12, 0.45, -0.65)
        rng = np.random.default_rng(8)
        for _ in range(5):
            u = rng.uniform(0.1, 30.0) + 1j * rng.uniform(-0.5, 0.5)
            a = pricer.char_fn(params, FLAT, u, 0.7)
            b = pricer.char_fn(params, FLAT, -np.conj(u), 0.7)
            assert abs(b - np.conj(a)) < 1e-10 * max(abs(a), 1e-30)


class TestPricing:
    def test_deterministic_vol_limit(self, pricer):
        params = RHestonParams(0.1, 1e-6, -0.7)
        price = pricer.call_price(params, FLAT, 1.0, 1.0)
        assert price == pytest.approx(bsm.bs_call_price(1.0, 1.0, 1.0, 0.2), abs=1e-4)

    def test_classical_nesting_price(self, pricer):
        params = RHestonParams(0.5, 0.3, -0.7)
        rough = pricer.call_prices(params, FLAT, 1.0, np.array([1.0]))[0]
        iv_c = pricer.smile_classical(0.04, 0.3, -0.7, 1.0, np.array([1.0]))[0]
        classical = bsm.bs_call_price(1.0, 1.0, 1.0, iv_c)
        assert rough == pytest.approx(classical, abs=1e-5)

    def test_negative_correlation_skew(self, pricer):
        params = RHestonParams(0.1, 0.4, -0.7)
        ivs = pricer.smile(params, FLAT, 0.1, np.array([0.95, 1.0]))
        assert ivs[0] > ivs[1]

    def test_price_within_static_bounds(self, pricer):
        params = RHestonParams(0.05, 0.6, -0.9)
        for T in (0.01, 0.5, 2.2):
            lo, hi = 1 - 0.55 * np.sqrt(T), 1 + 0.30 * np.sqrt(T)
            ks = np.linspace(max(lo, 0.05), hi, 7)
            prices = pricer.call_prices(params, FLAT, T, ks)
            assert np.all(prices >= np.maximum(1.0 - ks, 0.0) - 1e-15)
            assert np.all(prices <= 1.0)

    def test_monotone_in_strike_and_maturity(self, pricer):
        params = RHestonParams(0.1, 0.4, -0.7)
        rng = np.random.default_rng(9)
        for _ in range(5):
            T = rng.uniform(0.05, 2.0)
            ks = np.sort(rng.uniform(0.8, 1.2, 5))
            prices = pricer.call_prices(params, FLAT, T, ks)
            assert np.all(np.diff(prices) < 0)
        k = 1.05
        ts = np.sort(rng.uniform(0.05, 2.4, 5))
        prices = [pricer.call_prices(params, FLAT, t, np.array([k]))[0] for t in ts]
        assert np.all(np.diff(prices) > 0)

    def test_step_doubling_invariant(self, pricer):
        for params in (RHestonParams(0.05, 0.55, -0.85), RHestonParams(0.2, 0.2, -0.55)):
            for T in (0.02, 0.6, 2.3):
                lo, hi = 1 - 0.55 * np.sqrt(T), 1 + 0.30 * np.sqrt(T)
                ks = np.linspace(max(lo, 0.05), hi, 3)
                n = pricer._steps_for(T)
                p1 = pricer.call_prices(params, FLAT, T, ks, n_steps=n)
                p2 = pricer.call_prices(params, FLAT, T, ks, n_steps=2 * n)
                assert np.max(np.abs(p1 - p2)) < 1e-5

    def test_smile_values_sane(self, pricer):
        params = RHestonParams(0.03, 0.64, -0.93)
        for T in (0.005, 0.4):
            lo, hi = 1 - 0.55 * np.sqrt(T), 1 + 0.30 * np.sqrt(T)
            ks = np.linspace(max(lo, 0.05), hi, 13)
            ivs = pricer.smile(params, FLAT, T, ks)
            assert np.all(np.isnan(ivs) | ((ivs > 0.0) & (ivs < 5.0)))

    def test_piecewise_curve_supported(self, pricer):
        curve = PiecewiseConstantCurve((0.1, 0.5), (0.03, 0.05, 0.07))
        params = RHestonParams(0.1, 0.4, -0.7)
        iv = pricer.smile(params, curve, 0.7, np.array([1.0]))[0]
        assert 0.1 < iv < 0.4

    def test_unsorted_strikes_rejected(self, pricer):
        with pytest.raises(ValueError):
            pricer.smile(RHestonParams(0.1, 0.4, -0.7), FLAT, 0.5, np.array([1.1, 0.9]))


class TestCostContract:
    def test_smile_cf_cost_independent_of_strike_count(self, pricer):
        params = RHestonParams(0.1, 0.4, -0.7)
        pricer.reset_counters()
        pricer.smile(params, FLAT, 0.5, np.array([1.0]))
        one = (pricer.counters.cf_passes, pricer.counters.cf_evals)
        pricer.reset_counters()
        pricer.smile(params, FLAT, 0.5, np.linspace(0.9, 1.1, 13))
        many = (pricer.counters.cf_passes, pricer.counters.cf_evals)
        assert one == many == (1, many[1])

    def test_counter_accumulates_per_maturity(self, pricer):
        params = RHestonParams(0.1, 0.4, -0.7)
        pricer.reset_counters()
        for T in (0.1, 0.5, 1.5):
            pricer.smile(params, FLAT, T, np.array([0.95, 1.0, 1.05]))
        assert pricer.counters.cf_passes == 3
