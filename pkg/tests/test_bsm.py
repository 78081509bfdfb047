"""Black-Scholes pricing and implied-vol inversion."""

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from roughvol import bsm

# Frozen oracle: numerical integration of the lognormal payoff density
# (scipy.integrate.quad of max(e^x - K, 0) * N(x; -s^2T/2, s^2T)) gives
# 0.0796556746 +- 2e-9 for (S0, K, T, sigma) = (1, 1, 1, 0.2).
ATM_ORACLE = 0.0796556746


def lognormal_quad_price(s0, k, t, sigma):
    from scipy.integrate import quad
    from scipy.stats import norm

    mu, sd = -0.5 * sigma * sigma * t, sigma * np.sqrt(t)
    val, _ = quad(
        lambda x: (s0 * np.exp(x) - k) * norm.pdf(x, mu, sd),
        np.log(k / s0), mu + 40 * sd, limit=200,
    )
    return val


class TestCallPrice:
    def test_zero_vol_returns_intrinsic(self):
        assert bsm.bs_call_price(1.0, 1.2, 0.5, 0.0) == 0.0
        assert bsm.bs_call_price(1.0, 0.8, 0.5, 0.0) == pytest.approx(0.2)

    def test_atm_value_against_quadrature_oracle(self):
        assert bsm.bs_call_price(1.0, 1.0, 1.0, 0.2) == pytest.approx(ATM_ORACLE, abs=1e-7)
        # the oracle itself reproduces the frozen constant
        assert lognormal_quad_price(1.0, 1.0, 1.0, 0.2) == pytest.approx(ATM_ORACLE, abs=1e-8)

    def test_itm_price_between_intrinsic_and_spot(self):
        price = bsm.bs_call_price(1.0, 0.5, 1.0, 0.2)
        assert 0.5 < price < 1.0

    def test_domain_errors(self):
        for bad in ((0.0, 1, 1, 0.2), (1, -1, 1, 0.2), (1, 1, 0.0, 0.2), (1, 1, 1, -0.1)):
            with pytest.raises(ValueError):
                bsm.bs_call_price(*bad)

    def test_vega_non_negative_on_random_mesh(self):
        rng = np.random.default_rng(0)
        k = rng.uniform(0.4, 2.0, 300)
        t = rng.uniform(0.003, 2.5, 300)
        sig = rng.uniform(0.0, 2.0, 300)
        assert np.all(bsm.bs_vega(1.0, k, t, sig) >= 0.0)
        # finite-difference cross-check of monotonicity in sigma
        up = bsm.bs_call_price(1.0, k, t, sig + 1e-6)
        dn = bsm.bs_call_price(1.0, k, t, sig)
        assert np.all(up - dn >= -1e-15)

    def test_convex_and_decreasing_in_strike(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            t = rng.uniform(0.01, 2.5)
            sig = rng.uniform(0.05, 1.0)
            ks = np.sort(rng.uniform(0.5, 1.5, 3))
            assume_distinct = np.all(np.diff(ks) > 1e-6)
            if not assume_distinct:
                continue
            c = bsm.bs_call_price(1.0, ks, t, sig)
            assert c[0] > c[1] > c[2]
            fly = (ks[2] - ks[1]) * c[0] - (ks[2] - ks[0]) * c[1] + (ks[1] - ks[0]) * c[2]
            assert fly > -1e-14


class TestImpliedVol:
    def test_round_trip_identity(self):
        price = bsm.bs_call_price(1.0, 1.1, 0.25, 0.35)
        assert bsm.bs_implied_vol(1.0, 1.1, 0.25, price) == pytest.approx(0.35, abs=1e-8)

    def test_inverse_of_oracle_value(self):
        assert bsm.bs_implied_vol(1.0, 1.0, 1.0, 0.0796557) == pytest.approx(0.2, abs=1e-5)

    def test_no_solution_at_static_bounds(self):
        assert np.isnan(bsm.bs_implied_vol(1.0, 1.2, 0.5, 0.0))
        assert np.isnan(bsm.bs_implied_vol(1.0, 0.75, 0.5, 0.25))  # price == intrinsic
        assert np.isnan(bsm.bs_implied_vol(1.0, 1.0, 0.5, 1.0))  # price == spot
        assert np.isnan(bsm.bs_implied_vol(1.0, 1.0, 0.5, 1.5))

    def test_vectorized_matches_scalar(self):
        ks = np.array([0.8, 1.0, 1.3])
        prices = bsm.bs_call_price(1.0, ks, 0.5, 0.3)
        vols = bsm.bs_implied_vol(1.0, ks, 0.5, prices)
        for k, p, v in zip(ks, prices, vols):
            assert bsm.bs_implied_vol(1.0, k, 0.5, p) == pytest.approx(v, abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(
        sigma=st.floats(0.01, 2.0),
        log_m=st.floats(-1.0, 1.0),
        t=st.floats(0.003, 2.5),
    )
    def test_round_trip_property(self, sigma, log_m, t):
        k = float(np.exp(log_m))
        price = bsm.bs_call_price(1.0, k, t, sigma)
        assume(price - max(1.0 - k, 0.0) > 1e-12 and price < 1.0 - 1e-12)
        vol = bsm.bs_implied_vol(1.0, k, t, price)
        back = bsm.bs_call_price(1.0, k, t, vol)
        # 1e-9 relative, with a 2e-14 cushion at the formula's evaluation
        # noise floor for micro-premia
        assert abs(back - price) <= 1e-9 * price + 2e-14

    def test_price_tolerance_contract(self):
        rng = np.random.default_rng(2)
        k = rng.uniform(0.5, 1.5, 200)
        t = rng.uniform(0.01, 2.5, 200)
        sig = rng.uniform(0.05, 1.5, 200)
        price = bsm.bs_call_price(1.0, k, t, sig)
        vol = bsm.bs_implied_vol(1.0, k, t, price)
        again = bsm.bs_call_price(1.0, k, t, vol)
        assert np.nanmax(np.abs(again - price)) < 1e-10
