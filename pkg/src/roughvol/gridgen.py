"""Training-set generation: fixed, adaptive, random-grid, random-smile, pointwise.

A random grid draws, per parameter set, one maturity from each of eleven
sub-intervals spanning [0.003, 2.5] years and thirteen strikes inside the
square-root band ``[1 - 0.55 sqrt(T), 1 + 0.30 sqrt(T)]``, split 4/7/2 across
the left tail, the central +-0.20 sqrt(T) region and the right tail to mimic
market quote granularity. The quadruplets (params, T, K, iv) feed the network
pointwise.

Cost bookkeeping: one CF pass prices a whole smile, so q random-grid surfaces
cost q*11 passes and q random smiles cost q passes, while N truly pointwise
records cost N passes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from .fvc import FlatCurve, FvcSampler, ParametricCurve, PiecewiseConstantCurve
from .rbergomi import McConfig, RBergomiParams, RBergomiPricer, RBERGOMI_BOX
from .rheston import RHestonParams, RoughHestonPricer, RHESTON_BOX

__all__ = [
    "SUB_INTERVALS",
    "GridSpec",
    "QuoteSet",
    "DatasetFormatError",
    "sample_random_grid",
    "generate_dataset",
    "generate_pointwise",
    "generate_random_smiles",
    "write_dataset",
    "read_dataset",
]

# Maturity sub-intervals; one random-grid maturity is drawn from each.
SUB_INTERVALS = (
    (0.003, 0.030),
    (0.030, 0.090),
    (0.090, 0.150),
    (0.150, 0.300),
    (0.300, 0.500),
    (0.500, 0.750),
    (0.750, 1.000),
    (1.000, 1.250),
    (1.250, 1.500),
    (1.500, 2.000),
    (2.000, 2.500),
)
N_MATURITIES = len(SUB_INTERVALS)
N_STRIKES = 13
STRIKE_SPLIT = (4, 7, 2)
LOWER_WIDTH = 0.55  # K_min(T) = 1 - 0.55 sqrt(T)
UPPER_WIDTH = 0.30  # K_max(T) = 1 + 0.30 sqrt(T)
CENTRAL_WIDTH = 0.20

FIXED_MATURITIES = (0.1, 0.3, 0.6, 0.9, 1.2, 1.5, 1.8, 2.0)
FIXED_STRIKES = tuple(np.linspace(0.5, 1.5, 11))
ADAPTIVE_MATURITIES = (0.01, 0.025, 0.1, 0.3, 0.6, 1.0, 1.5, 2.0)

# Flat and piecewise levels are sampled from this range (the toolkit's own
# choice; it brackets typical index variance levels).
FLAT_LEVEL_RANGE = (0.01, 0.2)
PWC_JUMP_TIMES = ADAPTIVE_MATURITIES[:-1]  # 8 levels, jumps at the adaptive grid times

MODEL_BOXES = {"rheston": RHESTON_BOX, "rbergomi": RBERGOMI_BOX}
CURVE_PARAM_NAMES = {
    "flat": ("xi",),
    "piecewise": tuple(f"xi{i + 1}" for i in range(len(PWC_JUMP_TIMES) + 1)),
    "parametric": ("beta0", "beta1", "beta2", "tau1", "tau2"),
}


class DatasetFormatError(ValueError):
    """Raised on malformed dataset files; carries the offending line number."""

    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


def strike_band(T):
    """Square-root strike band ``[1 - 0.55 sqrt(T), 1 + 0.30 sqrt(T)]``."""
    rt = np.sqrt(T)
    return 1.0 - LOWER_WIDTH * rt, 1.0 + UPPER_WIDTH * rt


@dataclass(frozen=True)
class GridSpec:
    """Contract-grid recipe: which maturities and strikes a surface carries."""

    variant: str = "random_grid"

    _VARIANTS = ("fixed", "adaptive", "random_grid", "random_smile", "pointwise")

    def __post_init__(self):
        if self.variant not in self._VARIANTS:
            raise ValueError(f"variant must be one of {self._VARIANTS}, got {self.variant!r}")

    def draw(self, rng):
        """(maturities, strikes_per_maturity) for one surface."""
        if self.variant == "fixed":
            return np.asarray(FIXED_MATURITIES), [np.asarray(FIXED_STRIKES)] * len(FIXED_MATURITIES)
        if self.variant == "adaptive":
            mats = np.asarray(ADAPTIVE_MATURITIES)
            strikes = []
            for T in mats:
                lo, hi = strike_band(T)
                strikes.append(np.linspace(lo, hi, N_STRIKES))
            return mats, strikes
        if self.variant == "random_grid":
            return sample_random_grid(rng)
        raise ValueError(f"variant {self.variant!r} has no per-surface grid")


def _sample_strikes(rng, T):
    """13 strikes, 4/7/2 across left tail / central region / right tail, sorted."""
    lo, hi = strike_band(T)
    c_lo, c_hi = 1.0 - CENTRAL_WIDTH * np.sqrt(T), 1.0 + CENTRAL_WIDTH * np.sqrt(T)
    left = np.sort(rng.uniform(lo, c_lo, STRIKE_SPLIT[0]))
    center = np.sort(rng.uniform(c_lo, c_hi, STRIKE_SPLIT[1]))
    right = np.sort(rng.uniform(c_hi, hi, STRIKE_SPLIT[2]))
    return np.concatenate([left, center, right])


def sample_random_grid(rng):
    """One random grid: 11 maturities (one per sub-interval) with 13 strikes each."""
    maturities = np.array([rng.uniform(a, b) for a, b in SUB_INTERVALS])
    strikes = [_sample_strikes(rng, T) for T in maturities]
    return maturities, strikes


def _sample_model_params(model, rng):
    box = MODEL_BOXES[model]
    vals = {name: rng.uniform(*bounds) for name, bounds in box.items()}
    cls = RHestonParams if model == "rheston" else RBergomiParams
    return cls(**vals)


def _sample_curve(curve_variant, rng):
    if curve_variant == "flat":
        return FlatCurve(rng.uniform(*FLAT_LEVEL_RANGE))
    if curve_variant == "piecewise":
        levels = rng.uniform(*FLAT_LEVEL_RANGE, size=len(PWC_JUMP_TIMES) + 1)
        return PiecewiseConstantCurve(PWC_JUMP_TIMES, tuple(levels))
    if curve_variant == "parametric":
        return FvcSampler(seed=rng).sample()
    raise ValueError(f"unknown curve variant {curve_variant!r}")


@dataclass
class QuoteSet:
    """Quadruplet records (parameters, T, K, iv) plus provenance metadata.

    ``columns`` starts with ``set_id`` followed by model parameters, curve
    parameters, ``T``, ``K`` and ``iv``; ``data`` holds one row per quote.
    """

    columns: tuple
    data: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.columns = tuple(self.columns)
        self.data = np.asarray(self.data, dtype=float).reshape(-1, len(self.columns))

    @property
    def n_records(self):
        return self.data.shape[0]

    @property
    def feature_names(self):
        return tuple(c for c in self.columns if c not in ("set_id", "iv"))

    def features(self):
        idx = [self.columns.index(c) for c in self.feature_names]
        return self.data[:, idx]

    def targets(self):
        return self.data[:, self.columns.index("iv")]

    def groups(self):
        return self.data[:, self.columns.index("set_id")].astype(int)

    def head(self, n):
        return QuoteSet(self.columns, self.data[:n], dict(self.metadata))


def _pricer_for(model, pricer_config):
    cfg = dict(pricer_config or {})
    if model == "rheston":
        return RoughHestonPricer(
            n_steps=cfg.get("n_steps", 200),
            nodes_per_panel=cfg.get("nodes_per_panel", 32),
        )
    return RBergomiPricer()


def _mc_config(cfg, maturities, seed):
    cfg = dict(cfg or {})
    return McConfig(
        maturities=tuple(np.sort(np.asarray(maturities, dtype=float))),
        n_paths=cfg.get("n_paths", 16384),
        steps_per_year=cfg.get("steps_per_year", 16),
        seed=seed,
        antithetic=cfg.get("antithetic", True),
    )


def _price_surface(model, pricer, params, curve, maturities, strikes, pricer_config, seed):
    """Smiles for one surface; NaN vols mark failed inversions."""
    if model == "rheston":
        return [pricer.smile(params, curve, T, ks) for T, ks in zip(maturities, strikes)]
    order = np.argsort(maturities)
    cfg = _mc_config(pricer_config, np.asarray(maturities)[order], seed)
    per_mat = [np.asarray(strikes[i]) for i in order]
    ivs_sorted, _ = pricer.surface_mc(params, curve, per_mat, cfg)
    out = [None] * len(maturities)
    for pos, i in enumerate(order):
        out[i] = ivs_sorted[pos]
    return out


def _surface_task(model, curve_variant, spec, seed_seq, set_id, pricer_config):
    rng = np.random.default_rng(seed_seq)
    params = _sample_model_params(model, rng)
    curve = _sample_curve(curve_variant, rng)
    maturities, strikes = spec.draw(rng)
    pricer = _pricer_for(model, pricer_config)
    smiles = _price_surface(
        model, pricer, params, curve, maturities, strikes, pricer_config, int(rng.integers(2**31))
    )
    rows, dropped = [], 0
    pvals = list(params.as_dict().values()) + list(curve.param_dict().values())
    for T, ks, ivs in zip(maturities, strikes, smiles):
        for K, iv in zip(ks, ivs):
            if np.isnan(iv):
                dropped += 1
                continue
            rows.append([set_id, *pvals, T, K, iv])
    passes = pricer.counters.cf_passes if model == "rheston" else pricer.counters.simulations
    evals = pricer.counters.cf_evals if model == "rheston" else pricer.counters.paths
    return rows, dropped, passes, evals


def _smile_task(model, curve_variant, seed_seq, set_id, sub_interval, pricer_config):
    rng = np.random.default_rng(seed_seq)
    params = _sample_model_params(model, rng)
    curve = _sample_curve(curve_variant, rng)
    a, b = sub_interval
    T = rng.uniform(a, b)
    ks = _sample_strikes(rng, T)
    pricer = _pricer_for(model, pricer_config)
    smiles = _price_surface(
        model, pricer, params, curve, [T], [ks], pricer_config, int(rng.integers(2**31))
    )
    rows, dropped = [], 0
    pvals = list(params.as_dict().values()) + list(curve.param_dict().values())
    for K, iv in zip(ks, smiles[0]):
        if np.isnan(iv):
            dropped += 1
            continue
        rows.append([set_id, *pvals, T, K, iv])
    passes = pricer.counters.cf_passes if model == "rheston" else pricer.counters.simulations
    evals = pricer.counters.cf_evals if model == "rheston" else pricer.counters.paths
    return rows, dropped, passes, evals


def _point_task(model, curve_variant, seed_seq, set_id, sub_interval, pricer_config):
    rng = np.random.default_rng(seed_seq)
    params = _sample_model_params(model, rng)
    curve = _sample_curve(curve_variant, rng)
    a, b = sub_interval
    T = rng.uniform(a, b)
    lo, hi = strike_band(T)
    K = rng.uniform(lo, hi)
    pricer = _pricer_for(model, pricer_config)
    smiles = _price_surface(
        model, pricer, params, curve, [T], [np.array([K])], pricer_config, int(rng.integers(2**31))
    )
    iv = smiles[0][0]
    rows, dropped = [], 0
    if np.isnan(iv):
        dropped = 1
    else:
        pvals = list(params.as_dict().values()) + list(curve.param_dict().values())
        rows.append([set_id, *pvals, T, K, iv])
    passes = pricer.counters.cf_passes if model == "rheston" else pricer.counters.simulations
    evals = pricer.counters.cf_evals if model == "rheston" else pricer.counters.paths
    return rows, dropped, passes, evals


def _columns(model, curve_variant):
    return (
        "set_id",
        *MODEL_BOXES[model].keys(),
        *CURVE_PARAM_NAMES[curve_variant],
        "T",
        "K",
        "iv",
    )


def _assemble(model, curve_variant, regime, seed, results, extra_meta):
    rows, dropped, passes, evals = [], 0, 0, 0
    for r, d, p, e in results:
        rows.extend(r)
        dropped += d
        passes += p
        evals += e
    cols = _columns(model, curve_variant)
    data = np.asarray(rows, dtype=float) if rows else np.empty((0, len(cols)))
    meta = {
        "model": model,
        "curve_variant": curve_variant,
        "regime": regime,
        "seed": seed,
        "n_records": len(rows),
        "dropped": dropped,
        "cf_passes": passes,
        "cf_evals": evals,
        "columns": list(cols),
    }
    meta.update(extra_meta)
    return QuoteSet(cols, data, meta)


def generate_dataset(model, curve_variant, spec, q, seed, pricer_config=None, n_jobs=1):
    """Price ``q`` whole surfaces (one grid each) into a QuoteSet.

    Parameter sets are independent tasks with RNG streams spawned from the
    master seed; output order follows the set index, so the result is
    byte-stable under any ``n_jobs``. Failed vol inversions are dropped and
    counted, never aborting the batch.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    if isinstance(spec, str):
        spec = GridSpec(spec)
    seqs = np.random.SeedSequence(seed).spawn(q)
    results = Parallel(n_jobs=n_jobs)(
        delayed(_surface_task)(model, curve_variant, spec, seqs[i], i, pricer_config)
        for i in range(q)
    )
    return _assemble(
        model, curve_variant, spec.variant, seed, results,
        {"n_sets": q, "pricer_config": dict(pricer_config or {})},
    )


def generate_random_smiles(model, curve_variant, q, seed, pricer_config=None, n_jobs=1):
    """One random smile (one maturity, 13 strikes) per parameter set.

    Maturity sub-intervals are cycled with the set index, guaranteeing
    uniform coverage; each smile costs a single CF pass.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    seqs = np.random.SeedSequence(seed).spawn(q)
    results = Parallel(n_jobs=n_jobs)(
        delayed(_smile_task)(
            model, curve_variant, seqs[i], i, SUB_INTERVALS[i % N_MATURITIES], pricer_config
        )
        for i in range(q)
    )
    return _assemble(
        model, curve_variant, "random_smile", seed, results,
        {"n_sets": q, "pricer_config": dict(pricer_config or {})},
    )


def generate_pointwise(model, curve_variant, n, seed, pricer_config=None, n_jobs=1):
    """Truly pointwise records: an independent parameter set per single quote.

    Maturities cycle the sub-intervals (stratified-uniform over [0.003, 2.5])
    and the strike is uniform in its square-root band. Every record costs a
    full CF pass, which is what makes this regime expensive.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    seqs = np.random.SeedSequence(seed).spawn(n)
    results = Parallel(n_jobs=n_jobs)(
        delayed(_point_task)(
            model, curve_variant, seqs[i], i, SUB_INTERVALS[i % N_MATURITIES], pricer_config
        )
        for i in range(n)
    )
    return _assemble(
        model, curve_variant, "pointwise", seed, results,
        {"n_points": n, "pricer_config": dict(pricer_config or {})},
    )


# ---------------------------------------------------------------------- #
# serialization
# ---------------------------------------------------------------------- #

def _sidecar_path(path):
    return Path(path).with_suffix(".meta.json")


def write_dataset(path, quotes):
    """CSV with full round-trip precision plus a JSON metadata sidecar."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(quotes.columns)
        sid = quotes.columns.index("set_id")
        for row in quotes.data:
            out = [f"{x:.17g}" for x in row]
            out[sid] = str(int(row[sid]))
            writer.writerow(out)
    meta = dict(quotes.metadata)
    meta.setdefault("columns", list(quotes.columns))
    meta["n_records"] = quotes.n_records
    with open(_sidecar_path(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def read_dataset(path):
    """Inverse of :func:`write_dataset`; raises with a line number when malformed."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError("empty file", line=1) from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetFormatError(
                    f"expected {len(header)} fields, found {len(row)}", line=lineno
                )
            try:
                rows.append([float(x) for x in row])
            except ValueError as exc:
                raise DatasetFormatError(str(exc), line=lineno) from None
    meta = {}
    sidecar = _sidecar_path(path)
    if sidecar.exists():
        with open(sidecar) as fh:
            meta = json.load(fh)
    declared = meta.get("n_records")
    if declared is not None and declared != len(rows):
        raise DatasetFormatError(
            f"metadata declares {declared} records but file has {len(rows)}"
        )
    data = np.asarray(rows, dtype=float) if rows else np.empty((0, len(header)))
    return QuoteSet(tuple(header), data, meta)
