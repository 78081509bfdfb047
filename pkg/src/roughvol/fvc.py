"""Time-zero forward variance curves: flat, piecewise constant and parametric.

The parametric form

    xi0(t) = beta0 + beta1 * exp(-t/tau1) + beta2 * (t/tau2) * exp(-t/tau2)

is a Nelson-Siegel-type curve whose long- and short-term components decay at
independent rates. Its short-time limit is ``beta0 + beta1`` and its long-time
limit is ``beta0``. Combinations of parameters can dip below zero, so curves
drawn for training are screened for positivity and rejected otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

__all__ = [
    "FlatCurve",
    "PiecewiseConstantCurve",
    "ParametricCurve",
    "FvcSampler",
    "POSITIVITY_HORIZON",
    "PARAMETRIC_RANGES",
]

# Maximum maturity handled by the toolkit; positivity is screened up to here.
POSITIVITY_HORIZON = 2.5
_POSITIVITY_GRID = 2000
_MAX_REJECTIONS = 10_000

# Sampling box for the parametric curve. beta1 is derived: the second entry
# is the range of the short-time limit beta0 + beta1.
PARAMETRIC_RANGES = {
    "beta0": (0.025, 0.160),
    "beta0_plus_beta1": (0.005, 0.130),
    "beta2": (-0.150, 0.250),
    "tau1": (0.001, 1.350),
    "tau2": (0.001, 0.125),
}


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0):
        raise ValueError(f"time must be non-negative, got {t!r}")
    return t


def _check_horizon(name, value):
    if value <= 0.0:
        raise ValueError(f"{name} must be strictly positive, got {value!r}")


@dataclass(frozen=True)
class FlatCurve:
    """Constant forward variance ``xi0(t) = xi``."""

    xi: float

    def __post_init__(self):
        if self.xi <= 0.0:
            raise ValueError(f"flat level must be positive, got {self.xi}")

    @property
    def short_scale(self):
        return np.inf

    def evaluate(self, t):
        t = _check_time(t)
        out = np.full(t.shape, self.xi)
        return float(out) if out.ndim == 0 else out

    def integrated_variance(self, T):
        _check_horizon("T", T)
        return self.xi * T

    def integral_profile(self, t):
        """Vectorized ``int_0^t xi``; accepts t >= 0 (0 maps to 0)."""
        return self.xi * _check_time(t)

    def is_positive(self, horizon=POSITIVITY_HORIZON):
        _check_horizon("horizon", horizon)
        return True

    def param_dict(self):
        return {"xi": self.xi}


@dataclass(frozen=True)
class PiecewiseConstantCurve:
    """Right-continuous step curve: level ``i`` applies on ``[t_{i-1}, t_i)``.

    ``jump_times`` are the c interior discontinuities; ``levels`` has c+1
    entries, the last one extending to infinity.
    """

    jump_times: tuple
    levels: tuple

    def __post_init__(self):
        times = tuple(float(t) for t in self.jump_times)
        levels = tuple(float(x) for x in self.levels)
        object.__setattr__(self, "jump_times", times)
        object.__setattr__(self, "levels", levels)
        if len(levels) != len(times) + 1:
            raise ValueError(
                f"need len(levels) == len(jump_times) + 1, got {len(levels)} and {len(times)}"
            )
        if any(t <= 0 for t in times) or any(b >= a for a, b in zip(times[1:], times[:-1])):
            raise ValueError(f"jump times must be positive and strictly increasing: {times}")
        if any(x <= 0.0 for x in levels):
            raise ValueError(f"levels must be strictly positive: {levels}")

    @property
    def short_scale(self):
        return self.jump_times[0]

    def evaluate(self, t):
        t = _check_time(t)
        idx = np.searchsorted(np.asarray(self.jump_times), t, side="right")
        out = np.asarray(self.levels)[idx]
        return float(out) if out.ndim == 0 else out

    def integrated_variance(self, T):
        _check_horizon("T", T)
        return float(self.integral_profile(T))

    def integral_profile(self, t):
        t = np.atleast_1d(_check_time(t))
        edges = np.concatenate([[0.0], np.asarray(self.jump_times), [np.inf]])
        widths = np.clip(np.minimum(edges[None, 1:], t[:, None]) - edges[None, :-1], 0.0, None)
        out = widths @ np.asarray(self.levels)
        return out if out.size > 1 else out[0]

    def is_positive(self, horizon=POSITIVITY_HORIZON):
        _check_horizon("horizon", horizon)
        return True  # levels validated positive at construction

    def param_dict(self):
        return {f"xi{i + 1}": x for i, x in enumerate(self.levels)}


@dataclass(frozen=True)
class ParametricCurve:
    """Exponential-plus-hump parametrization of the forward variance curve."""

    beta0: float
    beta1: float
    beta2: float
    tau1: float
    tau2: float

    def __post_init__(self):
        if self.tau1 <= 0.0 or self.tau2 <= 0.0:
            raise ValueError(f"tau1, tau2 must be positive, got {self.tau1}, {self.tau2}")
        if self.beta0 <= 0.0:
            raise ValueError(f"long-time limit beta0 must be positive, got {self.beta0}")
        if self.beta0 + self.beta1 <= 0.0:
            raise ValueError(
                f"short-time limit beta0 + beta1 must be positive, got {self.beta0 + self.beta1}"
            )

    @property
    def short_scale(self):
        return min(self.tau1, self.tau2)

    def evaluate(self, t):
        t = _check_time(t)
        out = (
            self.beta0
            + self.beta1 * np.exp(-t / self.tau1)
            + self.beta2 * (t / self.tau2) * np.exp(-t / self.tau2)
        )
        return float(out) if out.ndim == 0 else out

    def integrated_variance(self, T):
        _check_horizon("T", T)
        return float(self.integral_profile(T))

    def integral_profile(self, t):
        t = _check_time(t)
        e1 = np.exp(-t / self.tau1)
        e2 = np.exp(-t / self.tau2)
        hump = self.tau2 * (1.0 - e2) - t * e2
        return self.beta0 * t + self.beta1 * self.tau1 * (1.0 - e1) + self.beta2 * hump

    def derivative(self, t):
        t = _check_time(t)
        out = -self.beta1 / self.tau1 * np.exp(-t / self.tau1) + self.beta2 / self.tau2 * (
            1.0 - t / self.tau2
        ) * np.exp(-t / self.tau2)
        return float(out) if out.ndim == 0 else out

    def stationary_points(self, horizon=POSITIVITY_HORIZON):
        """Interior roots of the derivative on (0, horizon], sorted.

        Found by sign-change scanning on a short-time-refined grid followed by
        bracketed root polishing; the scan grid resolves both tau scales.
        """
        _check_horizon("horizon", horizon)
        scale = max(min(self.tau1, self.tau2, horizon) * 1e-3, 1e-9)
        grid = np.unique(
            np.concatenate(
                [
                    np.geomspace(scale, horizon, 2000),
                    np.linspace(scale, horizon, 2000),
                ]
            )
        )
        vals = self.derivative(grid)
        # both exponentials can underflow to exactly 0.0 at large t; compress
        # those points out so they are not mistaken for roots
        nz = np.nonzero(vals)[0]
        if nz.size < 2:
            return np.empty(0)
        sign = np.sign(vals[nz])
        flips = np.nonzero(sign[:-1] * sign[1:] < 0)[0]
        roots = np.asarray(sorted(
            brentq(self.derivative, grid[nz[i]], grid[nz[i + 1]], xtol=1e-14, rtol=1e-14)
            for i in flips
        ))
        if roots.size > 1:  # merge tangency chatter
            keep = np.concatenate([[True], np.diff(roots) > 1e-8 * (1.0 + roots[1:])])
            roots = roots[keep]
        return roots

    def is_positive(self, horizon=POSITIVITY_HORIZON):
        """Positivity of the curve on (0, horizon].

        Checked on 2000 equally spaced points plus the stationary points of
        the curve, which bound every interior minimum.
        """
        _check_horizon("horizon", horizon)
        if self.beta0 + self.beta1 <= 0.0:
            return False
        grid = np.linspace(horizon / _POSITIVITY_GRID, horizon, _POSITIVITY_GRID)
        if np.min(self.evaluate(grid)) <= 0.0:
            return False
        stat = self.stationary_points(horizon)
        if stat.size and np.min(self.evaluate(stat)) <= 0.0:
            return False
        return True

    def param_dict(self):
        return {
            "beta0": self.beta0,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "tau1": self.tau1,
            "tau2": self.tau2,
        }


@dataclass
class FvcSampler:
    """Uniform sampler over the parametric-curve box with positivity rejection.

    Draws ``beta0`` and the short-time limit ``beta0 + beta1`` independently
    and derives ``beta1`` from their difference. Curves that dip below zero
    before the horizon are resampled; a long rejection streak signals a
    misconfigured box and raises.
    """

    seed: int | np.random.Generator | None = None
    ranges: dict = field(default_factory=lambda: dict(PARAMETRIC_RANGES))
    horizon: float = POSITIVITY_HORIZON
    max_rejections: int = _MAX_REJECTIONS

    def __post_init__(self):
        self._rng = (
            self.seed if isinstance(self.seed, np.random.Generator) else np.random.default_rng(self.seed)
        )

    def sample(self):
        for _ in range(self.max_rejections):
            b0 = self._rng.uniform(*self.ranges["beta0"])
            limit0 = self._rng.uniform(*self.ranges["beta0_plus_beta1"])
            b2 = self._rng.uniform(*self.ranges["beta2"])
            t1 = self._rng.uniform(*self.ranges["tau1"])
            t2 = self._rng.uniform(*self.ranges["tau2"])
            curve = ParametricCurve(b0, limit0 - b0, b2, t1, t2)
            if curve.is_positive(self.horizon):
                return curve
        raise RuntimeError(
            f"no positive curve found after {self.max_rejections} consecutive draws; "
            "the sampling box is misconfigured"
        )
