"""Black-Scholes pricing and implied-volatility inversion under zero rates and dividends.

Everything in the toolkit quotes options through this module: model prices are
converted to implied volatilities here, and the no-arbitrage scanner converts
them back. The spot is normalized to 1 throughout, so strikes are moneyness.

The normal CDF goes through ``scipy.special.ndtr`` (error-function route,
double-precision accurate).
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr

__all__ = ["bs_call_price", "bs_vega", "bs_implied_vol"]

# Inversion stops when the price is matched to this times the spot.
PRICE_TOL = 1e-10
_MAX_NEWTON_ITER = 100
_SIGMA_HI_START = 6.0
_SIGMA_HI_CAP = 1024.0


def _validate_positive(**kwargs):
    for name, value in kwargs.items():
        if np.any(np.asarray(value) <= 0.0):
            raise ValueError(f"{name} must be strictly positive, got {value!r}")


def bs_call_price(s0, k, t, sigma):
    """European call value under Black-Scholes with zero rates and dividends.

    Parameters
    ----------
    s0, k, t : float or array_like
        Spot, strike and time to maturity (years); all strictly positive.
    sigma : float or array_like
        Volatility, ``sigma >= 0``. At ``sigma == 0`` the intrinsic value
        ``max(s0 - k, 0)`` is returned.

    Returns
    -------
    float or np.ndarray
        Call price, monotone increasing in ``sigma``.
    """
    _validate_positive(s0=s0, k=k, t=t)
    if np.any(np.asarray(sigma) < 0.0):
        raise ValueError(f"sigma must be non-negative, got {sigma!r}")

    s0, k, t, sigma = np.broadcast_arrays(
        *(np.asarray(x, dtype=float) for x in (s0, k, t, sigma))
    )
    total = sigma * np.sqrt(t)
    intrinsic = np.maximum(s0 - k, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = np.log(s0 / k) / total + 0.5 * total
        d2 = d1 - total
        price = s0 * ndtr(d1) - k * ndtr(d2)
    price = np.where(total <= 0.0, intrinsic, price)
    # Quadrature / cancellation noise must never push the value outside the
    # static bounds the inversion relies on.
    price = np.clip(price, intrinsic, s0)
    if price.ndim == 0:
        return float(price)
    return price


def bs_vega(s0, k, t, sigma):
    """dPrice/dsigma; non-negative for all valid inputs."""
    _validate_positive(s0=s0, k=k, t=t)
    s0, k, t, sigma = np.broadcast_arrays(
        *(np.asarray(x, dtype=float) for x in (s0, k, t, sigma))
    )
    total = sigma * np.sqrt(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = np.log(s0 / k) / total + 0.5 * total
        pdf = np.exp(-0.5 * d1 * d1) / np.sqrt(2.0 * np.pi)
        vega = s0 * np.sqrt(t) * pdf
    vega = np.where(total <= 0.0, 0.0, vega)
    if vega.ndim == 0:
        return float(vega)
    return vega


def _initial_guess(s0, k, t, price):
    # Corrado-Miller rational approximation, clipped into the search bracket.
    x = price - 0.5 * (s0 - k)
    disc = x * x - (s0 - k) ** 2 / np.pi
    disc = np.maximum(disc, 0.0)
    guess = np.sqrt(2.0 * np.pi / t) / (s0 + k) * (x + np.sqrt(disc))
    return np.clip(guess, 1e-4, _SIGMA_HI_START - 1e-4)


def bs_implied_vol(s0, k, t, price):
    """Invert the Black-Scholes formula for the volatility.

    Safeguarded Newton iteration bracketed by bisection; the initial guess
    comes from the Corrado-Miller rational approximation. Converges for every
    price strictly inside the static bounds ``(max(s0-k, 0), s0)``; prices on
    or outside the bounds return NaN (the distinguishable "no solution"
    result -- such quotes are discarded upstream).

    Parameters
    ----------
    s0, k, t : float or array_like
        Spot, strike, maturity; strictly positive.
    price : float or array_like
        Call price(s) to invert.

    Returns
    -------
    float or np.ndarray
        Volatility such that ``|bs_call_price(s0,k,t,vol) - price|`` is below
        ``1e-10 * s0``, or NaN where no solution exists.
    """
    _validate_positive(s0=s0, k=k, t=t)
    s0, k, t, price = np.broadcast_arrays(
        *(np.asarray(x, dtype=float) for x in (s0, k, t, price))
    )
    scalar = price.ndim == 0
    s0, k, t, price = (np.atleast_1d(x).astype(float) for x in (s0, k, t, price))

    intrinsic = np.maximum(s0 - k, 0.0)
    solvable = (price > intrinsic) & (price < s0) & np.isfinite(price)
    vol = np.full(price.shape, np.nan)
    if not np.any(solvable):
        return float(vol[0]) if scalar else vol

    s, kk, tt, c = (a[solvable] for a in (s0, k, t, price))
    lo = np.zeros_like(c)
    hi = np.full_like(c, _SIGMA_HI_START)
    # Expand the upper bracket for prices very close to the spot.
    need = bs_call_price(s, kk, tt, hi) < c
    while np.any(need) and hi.max() < _SIGMA_HI_CAP:
        hi[need] *= 2.0
        need = bs_call_price(s, kk, tt, hi) < c

    sigma = _initial_guess(s, kk, tt, c)
    # absolute contract 1e-10*spot, tightened toward 1e-10*price for small
    # premia (floored at formula evaluation noise) so round trips hold to
    # 1e-9 relative precision
    tol = np.clip(PRICE_TOL * np.abs(c), 1e-14 * s, PRICE_TOL * s)
    for _ in range(_MAX_NEWTON_ITER):
        f = bs_call_price(s, kk, tt, sigma) - c
        done = np.abs(f) <= tol
        if np.all(done):
            break
        lo = np.where(~done & (f < 0.0), np.maximum(lo, sigma), lo)
        hi = np.where(~done & (f > 0.0), np.minimum(hi, sigma), hi)
        vega = bs_vega(s, kk, tt, sigma)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = sigma - f / vega
        bad = ~np.isfinite(newton) | (newton <= lo) | (newton >= hi) | (vega < 1e-12)
        proposal = np.where(bad, 0.5 * (lo + hi), newton)
        sigma = np.where(done, sigma, proposal)
        if np.all((hi - lo)[~done] < 1e-16):
            break

    vol[solvable] = sigma
    return float(vol[0]) if scalar else vol
