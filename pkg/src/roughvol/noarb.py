"""Discrete static-arbitrage scanner for dense call-price surfaces.

Implied vols from a source (a trained network at fixed parameters, or a true
pricer) are converted to call prices on a dense maturity-strike lattice and
checked against the discrete no-arbitrage conditions on every adjacent strike
triple K1 < K2 < K3 at fixed maturity,

    C(K3) > 0,
    C(K2) > C(K3),
    (K3-K2) C(K1) - (K3-K1) C(K2) + (K2-K1) C(K3) > 0,

and the calendar condition C(T2) > C(T1) on adjacent maturities at fixed
absolute strike (zero rates keep the forward at spot, so no strike
rescaling). Strict inequalities are tested with a small price-scale
tolerance; the scanner reports violations, it never raises on them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import bsm
from .gridgen import strike_band

__all__ = ["ScanConfig", "ViolationReport", "scan", "network_vol_fn", "pricer_vol_fn"]


@dataclass(frozen=True)
class ScanConfig:
    """Scan lattice: maturities from ``t_min`` to ``t_max`` every ``dt``,
    strikes on the global ``dk`` lattice inside the square-root band."""

    t_min: float = 2.0 / 365.0
    t_max: float = 2.5
    dt: float = 1.0 / 365.0
    dk: float = 0.01
    eps: float = 1e-9

    def __post_init__(self):
        if self.dt <= 0 or self.dk <= 0:
            raise ValueError("dt and dk must be positive")
        if not 0 < self.t_min <= self.t_max:
            raise ValueError("need 0 < t_min <= t_max")

    def maturities(self):
        n = int(np.floor((self.t_max - self.t_min) / self.dt + 1e-9)) + 1
        return self.t_min + self.dt * np.arange(n)

    def strikes(self, t):
        lo, hi = strike_band(t)
        m_lo = int(np.floor(lo / self.dk)) + 1  # strictly inside the open band
        m_hi = int(np.ceil(hi / self.dk)) - 1
        if m_hi < m_lo:
            return np.empty(0)
        ks = self.dk * np.arange(m_lo, m_hi + 1)
        return ks[ks > 0]


@dataclass
class ViolationReport:
    """Counts and offending points per condition."""

    counts: dict = field(default_factory=lambda: {
        "vertical_positive": 0, "vertical_monotone": 0, "butterfly": 0, "calendar": 0,
    })
    total_points: int = 0
    skipped_calendar: int = 0
    offenders: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def total_violations(self):
        return sum(self.counts.values())

    def to_dict(self):
        return {
            "counts": dict(self.counts),
            "total_points": int(self.total_points),
            "total_violations": int(self.total_violations),
            "skipped_calendar": int(self.skipped_calendar),
            "offenders": self.offenders,
            "metadata": self.metadata,
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def network_vol_fn(net, theta):
    """Vol source backed by a trained surrogate at fixed parameters."""
    theta = np.asarray(theta, dtype=float)

    def vol_fn(t, strikes):
        X = np.concatenate(
            [np.broadcast_to(theta, (strikes.size, theta.size)),
             np.full((strikes.size, 1), t), strikes[:, None]], axis=1,
        )
        return net.predict(X)

    return vol_fn


def pricer_vol_fn(pricer, params, curve):
    """Vol source backed by a true pricing engine."""

    def vol_fn(t, strikes):
        return pricer.smile(params, curve, t, strikes)

    return vol_fn


def _record(report, condition, value, t, strikes, cap=1000):
    report.counts[condition] += 1
    if len(report.offenders) < cap:
        report.offenders.append({
            "condition": condition,
            "T": [float(x) for x in np.atleast_1d(t)],
            "K": [float(x) for x in np.atleast_1d(strikes)],
            "value": float(value),
        })


def scan(vol_fn, cfg=None, metadata=None):
    """Scan a vol source on the configured lattice; returns a ViolationReport.

    ``vol_fn(t, strikes)`` must return implied vols for a sorted strike
    vector. Vols that are non-positive or fail to price are themselves
    counted as vertical-positivity violations.
    """
    cfg = cfg or ScanConfig()
    report = ViolationReport(metadata=dict(metadata or {}, config={
        "t_min": cfg.t_min, "t_max": cfg.t_max, "dt": cfg.dt, "dk": cfg.dk, "eps": cfg.eps,
    }))
    eps = cfg.eps
    prev = None  # (maturity, strike lattice indices, prices)
    for t in cfg.maturities():
        ks = cfg.strikes(t)
        if ks.size == 0:
            prev = None
            continue
        vols = np.asarray(vol_fn(t, ks), dtype=float)
        good = np.isfinite(vols) & (vols > 0.0)
        prices = np.where(good, bsm.bs_call_price(1.0, ks, t, np.where(good, vols, 1.0)), np.nan)
        report.total_points += ks.size

        if ks.size >= 3:
            k1, k2, k3 = ks[:-2], ks[1:-1], ks[2:]
            c1, c2, c3 = prices[:-2], prices[1:-1], prices[2:]
            with np.errstate(invalid="ignore"):
                pos_bad = ~(c3 > -eps)  # NaN prices fail positivity
                mon_bad = np.isfinite(c2) & np.isfinite(c3) & ~((c2 - c3) > -eps)
                fly = (k3 - k2) * c1 - (k3 - k1) * c2 + (k2 - k1) * c3
                fly_bad = np.isfinite(fly) & ~(fly > -eps)
            for i in np.nonzero(pos_bad)[0]:
                _record(report, "vertical_positive", c3[i], t, (k3[i],))
            for i in np.nonzero(mon_bad)[0]:
                _record(report, "vertical_monotone", c2[i] - c3[i], t, (k2[i], k3[i]))
            for i in np.nonzero(fly_bad)[0]:
                _record(report, "butterfly", fly[i], t, (k1[i], k2[i], k3[i]))

        idx = np.round(ks / cfg.dk).astype(int)
        if prev is not None:
            t_prev, idx_prev, prices_prev = prev
            common, ia, ib = np.intersect1d(idx_prev, idx, return_indices=True)
            report.skipped_calendar += int(idx.size - common.size)
            diff = prices[ib] - prices_prev[ia]
            with np.errstate(invalid="ignore"):
                defined = np.isfinite(diff)
                bad = defined & ~(diff > -eps)
            report.skipped_calendar += int((~defined).sum())
            for j in np.nonzero(bad)[0]:
                _record(report, "calendar", diff[j], (t_prev, t), (common[j] * cfg.dk,))
        prev = (t, idx, prices)
    return report
