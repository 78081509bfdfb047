"""Reproducible experiment drivers: learning curves, surrogate-quality checks.

These orchestrate generation, training and evaluation at configurable scale
and emit plain dict/CSV-ready rows; the CLI serializes them. Out-of-sample
evaluation always prices fresh parameter draws with the true pricer.
"""

from __future__ import annotations

import numpy as np

from . import gridgen
from .neuralnet import SurrogateNet

__all__ = ["make_eval_set", "train_on", "learning_curve", "fortyfive"]


def make_eval_set(model, curve_variant, n_sets, seed, pricer_config=None, n_jobs=1):
    """Out-of-sample random-grid quotes priced by the true pricing function."""
    return gridgen.generate_dataset(
        model, curve_variant, gridgen.GridSpec("random_grid"), n_sets, seed,
        pricer_config=pricer_config, n_jobs=n_jobs,
    )


def train_on(quotes, seed, **net_kwargs):
    """Fit a fresh surrogate on a QuoteSet (grouped split by parameter set)."""
    net = SurrogateNet(random_state=seed, **net_kwargs)
    net.fit(
        quotes.features(), quotes.targets(), groups=quotes.groups(),
        feature_names=quotes.feature_names,
        metadata={"model": quotes.metadata.get("model"),
                  "curve_variant": quotes.metadata.get("curve_variant"),
                  "regime": quotes.metadata.get("regime")},
    )
    return net


def _abs_errors(net, eval_set):
    pred = net.predict(eval_set.features())
    return np.abs(pred - eval_set.targets())


def learning_curve(model, curve_variant, sizes, seeds, eval_set,
                   regimes=("random_smile", "pointwise"), pricer_config=None,
                   n_jobs=1, **net_kwargs):
    """Out-of-sample error vs training-set size for the sampling regimes.

    For each (regime, size, seed): generate that many records (random smiles
    are generated set-wise, 13 records per CF pass; pointwise records cost one
    pass each), train, and evaluate on the shared out-of-sample set. Returns
    one row per (regime, size) with the mean absolute error and its 5th/95th
    quantiles pooled over seeds, plus the per-seed values and the CF passes
    consumed by generation.
    """
    rows = []
    for regime in regimes:
        for size in sizes:
            per_seed, passes = [], []
            pooled = []
            for seed in seeds:
                if regime == "random_smile":
                    q = int(np.ceil(size / gridgen.N_STRIKES))
                    quotes = gridgen.generate_random_smiles(
                        model, curve_variant, q, seed, pricer_config, n_jobs=n_jobs
                    )
                elif regime == "pointwise":
                    quotes = gridgen.generate_pointwise(
                        model, curve_variant, int(size), seed, pricer_config, n_jobs=n_jobs
                    )
                else:
                    raise ValueError(f"unknown regime {regime!r}")
                net = train_on(quotes, seed, **net_kwargs)
                errs = _abs_errors(net, eval_set)
                per_seed.append(float(errs.mean()))
                pooled.append(errs)
                passes.append(quotes.metadata["cf_passes"])
            pooled = np.concatenate(pooled)
            rows.append({
                "regime": regime,
                "n_train": int(size),
                "log2_n_train": float(np.log2(size)),
                "cf_passes": int(np.mean(passes)),
                "mae": float(pooled.mean()),
                "q05": float(np.quantile(pooled, 0.05)),
                "q95": float(np.quantile(pooled, 0.95)),
                "mae_per_seed": per_seed,
            })
    return rows


def fortyfive(net, train_set, eval_set, sample=4096, seed=0):
    """(model, network) vol pairs in- and out-of-sample plus error summaries."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, quotes in (("in_sample", train_set), ("out_of_sample", eval_set)):
        n = quotes.n_records
        idx = rng.choice(n, size=min(sample, n), replace=False)
        model_iv = quotes.targets()[idx]
        net_iv = net.predict(quotes.features()[idx])
        err = np.abs(net_iv - model_iv)
        out[name] = {
            "model_iv": model_iv,
            "net_iv": net_iv,
            "mae": float(err.mean()),
            "max_abs_err": float(err.max()),
        }
    return out
