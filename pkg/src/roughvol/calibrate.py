"""Surface calibration through the trained surrogate.

Box-constrained nonlinear least squares of network vols against target vols
over the model (and curve) parameters. The optimizer is a damped
Levenberg-Marquardt iteration with parameters projected onto the box and the
Jacobian assembled from the network's exact input gradients; several
multistarts guard against the flat regions of the parametric forward variance
curve, where the objective barely responds to the short-term decay rates.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .gridgen import strike_band

__all__ = [
    "SurfaceCalibrator",
    "CalibrationResult",
    "NoAdmissibleQuotesError",
    "InadmissibleQuoteError",
    "evaluate_surface",
    "admissible_mask",
    "controlled_experiment",
    "error_stats",
    "TAIL_THRESHOLDS",
]

MATURITY_RANGE = (0.003, 2.5)
TAIL_THRESHOLDS = (0.02, 0.03, 0.05)


class NoAdmissibleQuotesError(RuntimeError):
    """Too few quotes inside the network's training region."""


class InadmissibleQuoteError(ValueError):
    """Quotes outside the training region passed where only admissible ones belong."""


def admissible_mask(T, K):
    """True where (T, K) lies inside the trained contract region.

    The maturity must lie in [0.003, 2.5] years and the strike inside its
    square-root band; the network cannot price anything beyond the region it
    was trained on, and those quotes are typically illiquid anyway.
    """
    T = np.asarray(T, dtype=float)
    K = np.asarray(K, dtype=float)
    lo, hi = strike_band(np.clip(T, 1e-12, None))
    return (T >= MATURITY_RANGE[0]) & (T <= MATURITY_RANGE[1]) & (K >= lo) & (K <= hi)


def evaluate_surface(net, theta, X, return_flags=False):
    """Network vols at fixed parameters for quote rows ``X = [T, K]``.

    Raises :class:`InadmissibleQuoteError` listing the offending rows when a
    quote leaves the training region; extrapolation inside the region (e.g. a
    parameter outside the sampled box) is flagged, not refused.
    """
    X = check_array(X, dtype=float)
    theta = np.asarray(theta, dtype=float)
    mask = admissible_mask(X[:, 0], X[:, 1])
    if not np.all(mask):
        bad = np.nonzero(~mask)[0]
        raise InadmissibleQuoteError(
            f"{bad.size} quote(s) outside the admissible region, rows {bad.tolist()[:20]}"
        )
    full = np.concatenate([np.broadcast_to(theta, (X.shape[0], theta.size)), X], axis=1)
    vols = net.predict(full)
    if return_flags:
        return vols, net.is_extrapolating(full)
    return vols


@dataclass
class CalibrationResult:
    """Optimal parameters with fit diagnostics, JSON-serializable."""

    params: dict
    rmse: float
    n_iterations: int
    n_evaluations: int
    wall_time: float
    residuals: np.ndarray
    start_diagnostics: list
    n_quotes: int
    rejected: list = field(default_factory=list)

    def to_dict(self):
        return {
            "params": {k: float(v) for k, v in self.params.items()},
            "rmse": float(self.rmse),
            "n_iterations": int(self.n_iterations),
            "n_evaluations": int(self.n_evaluations),
            "wall_time": float(self.wall_time),
            "residuals": [float(r) for r in self.residuals],
            "start_diagnostics": self.start_diagnostics,
            "n_quotes": int(self.n_quotes),
            "rejected": self.rejected,
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


class SurfaceCalibrator(BaseEstimator):
    """Least-squares parameter estimator behind a scikit-learn ``fit``.

    Parameters
    ----------
    net : SurrogateNet
        Trained surrogate; its leading features are the parameters being
        calibrated, the trailing two are (T, K).
    param_box : dict
        Ordered ``name -> (lo, hi)`` bounds matching the net's parameter
        features.
    multistart : int
        Uniform random starts added to the box center.
    max_iter, gtol, xtol : termination controls per start.
    weights : array or None
        Optional per-quote weights (uniform by default).
    random_state : int or None
        Seed for the multistart draws.
    """

    def __init__(self, net=None, param_box=None, multistart=5, max_iter=500,
                 gtol=1e-10, xtol=1e-12, weights=None, random_state=None):
        self.net = net
        self.param_box = param_box
        self.multistart = multistart
        self.max_iter = max_iter
        self.gtol = gtol
        self.xtol = xtol
        self.weights = weights
        self.random_state = random_state

    def _check(self, X, y):
        box = dict(self.param_box)
        names = tuple(box.keys())
        expected = tuple(self.net.feature_names_[: len(names)])
        if len(names) + 2 != self.net.n_features_in_:
            raise ValueError(
                f"box has {len(names)} parameters but the net takes {self.net.n_features_in_} features"
            )
        if expected != names and not all(n.startswith("x") for n in expected):
            raise ValueError(f"box names {names} do not match net features {expected}")
        X = check_array(X, dtype=float)
        y = check_array(y, dtype=float, ensure_2d=False)
        if X.shape[1] != 2:
            raise ValueError("X must have two columns: maturity and strike")
        return box, names, X, y

    def fit(self, X, y):
        """Calibrate to quotes ``X = [T, K]`` with target vols ``y``.

        Inadmissible quotes are rejected (recorded, not fatal); fewer than
        ``p + 2`` admissible quotes raises :class:`NoAdmissibleQuotesError`.
        """
        t0 = time.perf_counter()
        box, names, X, y = self._check(X, y)
        mask = admissible_mask(X[:, 0], X[:, 1])
        rejected = [
            {"row": int(i), "T": float(X[i, 0]), "K": float(X[i, 1]), "reason": "outside region"}
            for i in np.nonzero(~mask)[0]
        ]
        Xa, ya = X[mask], y[mask]
        p = len(names)
        if Xa.shape[0] < p + 2:
            raise NoAdmissibleQuotesError(
                f"need at least {p + 2} admissible quotes, have {Xa.shape[0]}"
            )
        wts = np.ones(Xa.shape[0]) if self.weights is None else np.asarray(self.weights)[mask]
        sw = np.sqrt(wts)

        lo = np.array([box[n][0] for n in names])
        hi = np.array([box[n][1] for n in names])
        rng = np.random.default_rng(self.random_state)
        starts = [0.5 * (lo + hi)]
        starts += [rng.uniform(lo, hi) for _ in range(self.multistart)]

        self._n_eval = 0
        runs = [self._lm(theta0, lo, hi, Xa, ya, sw) for theta0 in starts]
        costs = [r["cost"] for r in runs]
        best = int(np.argmin(costs))  # ties resolve to the lowest start index
        theta, res = runs[best]["theta"], runs[best]["residuals"]

        self.theta_ = theta
        self.param_names_ = names
        self.params_ = dict(zip(names, theta))
        self.residuals_ = res
        self.rmse_ = float(np.sqrt(np.mean(res**2)))
        self.n_iter_ = runs[best]["iterations"]
        self.n_eval_ = self._n_eval
        self.wall_time_ = time.perf_counter() - t0
        self.rejected_ = rejected
        self.start_diagnostics_ = [
            {
                "start": i,
                "cost": float(r["cost"]),
                "iterations": int(r["iterations"]),
                "grad_norm": float(r["grad_norm"]),
                "status": r["status"],
            }
            for i, r in enumerate(runs)
        ]
        self.result_ = CalibrationResult(
            params=self.params_,
            rmse=self.rmse_,
            n_iterations=self.n_iter_,
            n_evaluations=self.n_eval_,
            wall_time=self.wall_time_,
            residuals=res,
            start_diagnostics=self.start_diagnostics_,
            n_quotes=int(Xa.shape[0]),
            rejected=rejected,
        )
        return self

    def _residuals_jac(self, theta, X, y, sw, need_jac=True):
        full = np.concatenate([np.broadcast_to(theta, (X.shape[0], theta.size)), X], axis=1)
        out = self.net.predict(full)
        self._n_eval += X.shape[0]
        r = sw * (out - y)
        if not need_jac:
            return r, None
        J = self.net.input_gradient(full)[:, : theta.size] * sw[:, None]
        return r, J

    def _lm(self, theta0, lo, hi, X, y, sw):
        theta = np.clip(theta0, lo, hi)
        r, J = self._residuals_jac(theta, X, y, sw)
        cost = 0.5 * float(r @ r)
        lam = 1e-3
        status = "max_iter"
        it = 0
        for it in range(1, self.max_iter + 1):
            g = J.T @ r
            if np.max(np.abs(g)) < self.gtol:
                status = "gtol"
                break
            JtJ = J.T @ J
            accepted = False
            for _ in range(40):
                A = JtJ + lam * np.diag(np.clip(np.diag(JtJ), 1e-12, None))
                try:
                    step = np.linalg.solve(A, -g)
                except np.linalg.LinAlgError:
                    lam *= 4.0
                    continue
                cand = np.clip(theta + step, lo, hi)
                proj_step = cand - theta
                if np.linalg.norm(proj_step) < self.xtol:
                    status = "xtol"
                    accepted = False
                    break
                r_new, _ = self._residuals_jac(cand, X, y, sw, need_jac=False)
                cost_new = 0.5 * float(r_new @ r_new)
                if cost_new < cost:
                    theta, cost, r = cand, cost_new, r_new
                    lam = max(lam / 3.0, 1e-12)
                    accepted = True
                    break
                lam *= 4.0
            if not accepted:
                if status != "xtol":
                    status = "stalled"
                break
            r, J = self._residuals_jac(theta, X, y, sw)
            cost = 0.5 * float(r @ r)
        return {
            "theta": theta,
            "residuals": r,
            "cost": cost,
            "iterations": it,
            "grad_norm": float(np.max(np.abs(J.T @ r))),
            "status": status,
        }

    def predict(self, X):
        """Network vols at the calibrated parameters."""
        check_is_fitted(self, "theta_")
        return evaluate_surface(self.net, self.theta_, X)


# ---------------------------------------------------------------------- #
# controlled-environment estimation experiment
# ---------------------------------------------------------------------- #

def error_stats(errors, thresholds=TAIL_THRESHOLDS):
    """Summary of estimation errors e = true - estimate for one parameter."""
    e = np.asarray(errors, dtype=float)
    return {
        "min": float(e.min()),
        "mean": float(e.mean()),
        "med": float(np.median(e)),
        "q95": float(np.quantile(e, 0.95)),
        "max": float(e.max()),
        "std": float(e.std(ddof=0)),
        "overestimation_ratio": float(np.mean(e < 0.0)),
        **{f"tail_{str(x).split('.')[1]}": float(np.mean(np.abs(e) > x)) for x in thresholds},
    }


def controlled_experiment(model, net, param_box, n_surfaces, seed,
                          flat_level_range=(0.02, 0.18), multistart=5, n_jobs=1,
                          pricer_config=None):
    """Estimation-error statistics on synthetic flat-curve surfaces.

    Draws ``n_surfaces`` parameter sets with flat forward variance, prices a
    random grid with the TRUE pricer of ``model``, calibrates each surface
    through the network and reports per-parameter statistics of
    ``e = true - estimate``. Surfaces whose calibration fails are excluded
    and counted.
    """
    from joblib import Parallel, delayed

    from . import gridgen
    from .fvc import FlatCurve

    names = tuple(param_box.keys())
    model_names = tuple(n for n in names if n != "xi")
    if set(model_names) != set(gridgen.MODEL_BOXES[model].keys()):
        raise ValueError(f"box names {names} do not match model {model!r} plus a flat level")
    seqs = np.random.SeedSequence(seed).spawn(n_surfaces)

    def one(i):
        rng = np.random.default_rng(seqs[i])
        truth = {n: rng.uniform(*param_box[n]) for n in model_names}
        xi = rng.uniform(*flat_level_range)
        cls = gridgen.RHestonParams if model == "rheston" else gridgen.RBergomiParams
        params = cls(**truth)
        curve = FlatCurve(xi)
        mats, strikes = gridgen.sample_random_grid(rng)
        pricer = gridgen._pricer_for(model, pricer_config)
        smiles = gridgen._price_surface(
            model, pricer, params, curve, mats, strikes, pricer_config,
            int(rng.integers(2**31)),
        )
        rows_T, rows_K, rows_iv = [], [], []
        for T, ks, ivs in zip(mats, strikes, smiles):
            for K, iv in zip(ks, ivs):
                if not np.isnan(iv):
                    rows_T.append(T)
                    rows_K.append(K)
                    rows_iv.append(iv)
        X = np.column_stack([rows_T, rows_K])
        cal = SurfaceCalibrator(
            net=net, param_box=param_box, multistart=multistart,
            random_state=int(rng.integers(2**31)),
        )
        try:
            cal.fit(X, np.asarray(rows_iv))
        except (NoAdmissibleQuotesError, ValueError) as exc:
            return None, str(exc)
        truth["xi"] = xi
        return {n: truth[n] - cal.params_[n] for n in names}, None

    outcomes = Parallel(n_jobs=n_jobs)(delayed(one)(i) for i in range(n_surfaces))
    errors = {n: [] for n in names}
    failures = []
    for out, err in outcomes:
        if out is None:
            failures.append(err)
            continue
        for n in names:
            errors[n].append(out[n])
    report = {
        "n_surfaces": n_surfaces,
        "n_failed": len(failures),
        "failures": failures,
        "stats": {n: error_stats(errors[n]) for n in names},
    }
    return report
