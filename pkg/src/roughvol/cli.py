"""Command-line front door.

Subcommands cover the whole workflow: ``generate`` datasets, ``train`` the
surrogate, ``calibrate`` to a target surface, ``price`` arbitrary quotes
through saved weights, ``noarb`` scans, and ``experiment`` runs
(learning-curve, controlled, fortyfive, noarb). Every run writes exactly one
manifest JSON next to its outputs with the resolved configuration, seeds and
counters, so a run is reproducible from its manifest alone. Figures are left
to external tools: outputs are plot-ready CSV/JSON.

Exit codes: 0 success, 2 flag errors, 3 pricer failure rate above 50%,
4 training divergence, 5 no admissible quotes, 6 missing prerequisites.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, experiments, gridgen, noarb
from .calibrate import NoAdmissibleQuotesError, SurfaceCalibrator, controlled_experiment, evaluate_surface
from .fvc import FlatCurve, ParametricCurve, PiecewiseConstantCurve
from .gridgen import GridSpec, read_dataset, write_dataset
from .neuralnet import SurrogateNet, TrainingDivergedError
from .rbergomi import RBergomiParams, RBergomiPricer
from .rheston import RHestonParams, RoughHestonPricer

EXIT_FLAGS = 2
EXIT_PRICER_FAILURES = 3
EXIT_DIVERGED = 4
EXIT_NO_QUOTES = 5
EXIT_MISSING_PREREQ = 6


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _outdir(args):
    base = args.outdir or os.environ.get("ROUGHVOL_OUTDIR", ".")
    path = Path(base)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(args, path, inputs, outputs, wall_time, counters=None, seeds=None):
    config = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "subcommand": args.command,
        "config": config,
        "seeds": seeds if seeds is not None else {"seed": getattr(args, "seed", None)},
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "wall_time": wall_time,
        "version": __version__,
        "counters": counters or {},
    }
    mpath = Path(path).with_suffix(".manifest.json")
    with open(mpath, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return mpath


def _parse_params(model, text):
    vals = {}
    for part in text.split(","):
        name, _, raw = part.partition("=")
        if not raw:
            raise CliError(f"malformed parameter assignment {part!r}", EXIT_FLAGS)
        vals[name.strip()] = float(raw)
    return vals


def _curve_from_values(variant, vals):
    if variant == "flat":
        return FlatCurve(vals["xi"])
    if variant == "parametric":
        return ParametricCurve(vals["beta0"], vals["beta1"], vals["beta2"], vals["tau1"], vals["tau2"])
    if variant == "piecewise":
        levels = [vals[f"xi{i + 1}"] for i in range(len(gridgen.PWC_JUMP_TIMES) + 1)]
        return PiecewiseConstantCurve(gridgen.PWC_JUMP_TIMES, tuple(levels))
    raise CliError(f"unknown curve variant {variant!r}", EXIT_FLAGS)


def _read_quotes_csv(path):
    """Target surface CSV with header T,K,iv."""
    if not Path(path).exists():
        raise CliError(f"target file {path} does not exist", EXIT_MISSING_PREREQ)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"T", "K", "iv"} <= set(reader.fieldnames):
            raise CliError(f"{path} must have columns T,K,iv", EXIT_FLAGS)
        for row in reader:
            rows.append((float(row["T"]), float(row["K"]), float(row["iv"])))
    arr = np.asarray(rows)
    return arr[:, :2], arr[:, 2]


# ---------------------------------------------------------------------- #
# subcommands
# ---------------------------------------------------------------------- #

def cmd_generate(args):
    t0 = time.perf_counter()
    out = _outdir(args) / args.out
    regime = args.regime.replace("-", "_")
    pricer_cfg = {"n_steps": args.n_steps, "n_paths": args.paths}
    if regime == "pointwise":
        quotes = gridgen.generate_pointwise(
            args.model, args.curve, args.n, args.seed, pricer_cfg, n_jobs=args.threads
        )
    elif regime == "random_smile":
        quotes = gridgen.generate_random_smiles(
            args.model, args.curve, args.sets, args.seed, pricer_cfg, n_jobs=args.threads
        )
    else:
        quotes = gridgen.generate_dataset(
            args.model, args.curve, GridSpec(regime), args.sets, args.seed,
            pricer_cfg, n_jobs=args.threads,
        )
    requested = args.n if regime == "pointwise" else None
    total = quotes.n_records + quotes.metadata["dropped"]
    if total and quotes.metadata["dropped"] / total > 0.5:
        raise CliError(
            f"pricer failure rate {quotes.metadata['dropped'] / total:.0%} exceeds 50%",
            EXIT_PRICER_FAILURES,
        )
    write_dataset(out, quotes)
    counters = {k: quotes.metadata[k] for k in ("cf_passes", "cf_evals", "n_records", "dropped")}
    _write_manifest(args, out, [], [out, gridgen._sidecar_path(out)],
                    time.perf_counter() - t0, counters)
    print(f"wrote {quotes.n_records} records to {out}")
    return 0


def cmd_train(args):
    t0 = time.perf_counter()
    if not Path(args.data).exists():
        raise CliError(f"dataset {args.data} does not exist", EXIT_MISSING_PREREQ)
    quotes = read_dataset(args.data)
    out = _outdir(args) / args.out
    try:
        net = experiments.train_on(
            quotes, args.seed,
            batch_size=args.batch_size, max_epochs=args.max_epochs,
            patience=args.patience, learning_rate=args.lr,
            validation_fraction=args.val_fraction,
        )
    except TrainingDivergedError as exc:
        raise CliError(str(exc), EXIT_DIVERGED) from exc
    net.save(out)
    hist_path = Path(out).with_suffix(".history.csv")
    with open(hist_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "train_rmse", "val_rmse"])
        writer.writeheader()
        writer.writerows(net.history_)
    counters = {
        "epochs": net.n_epochs_, "best_epoch": net.best_epoch_,
        "val_rmse": net.best_val_rmse_, "n_records": quotes.n_records,
    }
    _write_manifest(args, out, [args.data], [out, hist_path], time.perf_counter() - t0, counters)
    print(f"saved weights to {out} (best epoch {net.best_epoch_}, val RMSE {net.best_val_rmse_:.2e})")
    return 0


def _load_net(path):
    if not Path(path).exists():
        raise CliError(f"weights file {path} does not exist", EXIT_MISSING_PREREQ)
    return SurrogateNet.load(path)


def _box_for_net(net):
    """Parameter box implied by the net's feature names."""
    names = net.feature_names_[:-2]
    box = {}
    for n in names:
        if n in gridgen.RHESTON_BOX and "eta" not in names:
            box[n] = gridgen.RHESTON_BOX[n]
        elif n in gridgen.RBERGOMI_BOX:
            box[n] = gridgen.RBERGOMI_BOX[n]
        elif n == "xi" or n.startswith("xi"):
            box[n] = gridgen.FLAT_LEVEL_RANGE
        elif n in ("beta0", "tau1", "tau2", "beta2"):
            key = "beta0_plus_beta1" if n == "beta1" else n
            box[n] = gridgen.FvcSampler().ranges[key]
        elif n == "beta1":
            lo0, hi0 = gridgen.FvcSampler().ranges["beta0"]
            lo1, hi1 = gridgen.FvcSampler().ranges["beta0_plus_beta1"]
            box[n] = (lo1 - hi0, hi1 - lo0)
        else:
            raise CliError(f"cannot infer a box for feature {n!r}", EXIT_FLAGS)
    return box


def cmd_calibrate(args):
    t0 = time.perf_counter()
    net = _load_net(args.weights)
    X, y = _read_quotes_csv(args.target)
    out = _outdir(args) / args.out
    cal = SurfaceCalibrator(
        net=net, param_box=_box_for_net(net), multistart=args.multistart,
        random_state=args.seed,
    )
    try:
        cal.fit(X, y)
    except NoAdmissibleQuotesError as exc:
        raise CliError(str(exc), EXIT_NO_QUOTES) from exc
    cal.result_.to_json(out)
    fit_path = Path(out).with_suffix(".fit.csv")
    mask = np.ones(len(y), dtype=bool)
    for rej in cal.rejected_:
        mask[rej["row"]] = False
    with open(fit_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["T", "K", "target_iv", "fitted_iv"])
        fitted = cal.predict(X[mask])
        for (T, K), tgt, fit in zip(X[mask], y[mask], fitted):
            writer.writerow([f"{T:.17g}", f"{K:.17g}", f"{tgt:.17g}", f"{fit:.17g}"])
    counters = {"n_evaluations": cal.n_eval_, "n_iterations": cal.n_iter_, "rmse": cal.rmse_}
    _write_manifest(args, out, [args.weights, args.target], [out, fit_path],
                    time.perf_counter() - t0, counters)
    print(f"calibrated: RMSE {cal.rmse_:.3e} in {cal.wall_time_:.2f}s -> {out}")
    return 0


def cmd_price(args):
    t0 = time.perf_counter()
    net = _load_net(args.weights)
    vals = _parse_params(None, args.params)
    theta = [vals[n] for n in net.feature_names_[:-2]]
    X, _ = _read_quotes_csv(args.quotes) if args.quotes else (None, None)
    if X is None:
        raise CliError("--quotes is required", EXIT_FLAGS)
    out = _outdir(args) / args.out
    vols, flags = evaluate_surface(net, theta, X, return_flags=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["T", "K", "iv", "extrapolating"])
        for (T, K), v, f in zip(X, vols, flags):
            writer.writerow([f"{T:.17g}", f"{K:.17g}", f"{v:.17g}", int(f)])
    _write_manifest(args, out, [args.weights, args.quotes], [out], time.perf_counter() - t0)
    print(f"priced {len(vols)} quotes -> {out}")
    return 0


def _noarb_report(args, vol_fn, metadata):
    cfg = noarb.ScanConfig(dt=args.dt, dk=args.dk)
    report = noarb.scan(vol_fn, cfg, metadata=metadata)
    out = _outdir(args) / args.out
    report.to_json(out)
    if args.offenders_csv:
        off = _outdir(args) / args.offenders_csv
        with open(off, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["condition", "T", "K", "value"])
            for o in report.offenders:
                writer.writerow([o["condition"], ";".join(map(str, o["T"])),
                                 ";".join(map(str, o["K"])), o["value"]])
    return report, out


def cmd_noarb(args):
    t0 = time.perf_counter()
    if args.weights:
        net = _load_net(args.weights)
        vals = _parse_params(None, args.params)
        theta = [vals[n] for n in net.feature_names_[:-2]]
        vol_fn = noarb.network_vol_fn(net, theta)
        meta = {"source": "network", "weights": str(args.weights), "theta": vals}
        inputs = [args.weights]
    else:
        vals = _parse_params(args.model, args.params)
        curve_vals = _parse_params(None, args.curve_params)
        curve = _curve_from_values(args.curve, curve_vals)
        if args.model == "rheston":
            pricer = RoughHestonPricer()
            params = RHestonParams(**vals)
        else:
            raise CliError("true-pricer scans support --model rheston", EXIT_FLAGS)
        vol_fn = noarb.pricer_vol_fn(pricer, params, curve)
        meta = {"source": "pricer", "model": args.model, "params": vals, "curve": curve_vals}
        inputs = []
    report, out = _noarb_report(args, vol_fn, meta)
    _write_manifest(args, out, inputs, [out], time.perf_counter() - t0,
                    {"total_points": report.total_points,
                     "total_violations": report.total_violations})
    print(f"scanned {report.total_points} points: {report.total_violations} violations -> {out}")
    return 0


def cmd_experiment(args):
    t0 = time.perf_counter()
    out = _outdir(args) / args.out
    if args.kind == "learning-curve":
        eval_set = experiments.make_eval_set(
            args.model, args.curve, args.eval_sets, args.seed + 104729, n_jobs=args.threads
        )
        sizes = [2**p for p in range(args.min_pow, args.max_pow + 1)]
        rows = experiments.learning_curve(
            args.model, args.curve, sizes, [args.seed + i for i in range(args.n_seeds)],
            eval_set, n_jobs=args.threads, max_epochs=args.max_epochs,
        )
        with open(out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=[
                "regime", "n_train", "log2_n_train", "cf_passes", "mae", "q05", "q95",
            ])
            writer.writeheader()
            for row in rows:
                writer.writerow({k: row[k] for k in writer.fieldnames})
        counters = {"rows": len(rows)}
    elif args.kind == "controlled":
        net = _load_net(args.weights)
        report = controlled_experiment(
            args.model, net, _box_for_net(net), args.surfaces, args.seed, n_jobs=args.threads,
        )
        with open(out, "w", newline="") as fh:
            fields = ["param", "min", "mean", "med", "q95", "max", "std",
                      "overestimation_ratio", "tail_02", "tail_03", "tail_05"]
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for name, stats in report["stats"].items():
                writer.writerow({"param": name, **stats})
        counters = {"n_surfaces": report["n_surfaces"], "n_failed": report["n_failed"]}
    elif args.kind == "fortyfive":
        net = _load_net(args.weights)
        if not Path(args.data).exists():
            raise CliError(f"dataset {args.data} does not exist", EXIT_MISSING_PREREQ)
        train_set = read_dataset(args.data)
        eval_set = experiments.make_eval_set(
            args.model, args.curve, args.eval_sets, args.seed + 104729, n_jobs=args.threads
        )
        result = experiments.fortyfive(net, train_set, eval_set)
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample", "model_iv", "net_iv"])
            for name in ("in_sample", "out_of_sample"):
                for m, p in zip(result[name]["model_iv"], result[name]["net_iv"]):
                    writer.writerow([name, f"{m:.17g}", f"{p:.17g}"])
        counters = {f"{k}_{s}": result[k][s] for k in result for s in ("mae", "max_abs_err")}
    elif args.kind == "noarb":
        return cmd_noarb(args)
    else:
        raise CliError(f"unknown experiment {args.kind!r}", EXIT_FLAGS)
    _write_manifest(args, out, [], [out], time.perf_counter() - t0, counters)
    print(f"experiment {args.kind} -> {out}")
    return 0


# ---------------------------------------------------------------------- #
# parser
# ---------------------------------------------------------------------- #

def _add_common(sp):
    sp.add_argument("--seed", type=int, default=0, help="master RNG seed")
    sp.add_argument("--threads", type=int, default=os.cpu_count(),
                    help="worker processes (1 = bit-reproducible single-thread)")
    sp.add_argument("--outdir", default=None,
                    help="output directory (default: $ROUGHVOL_OUTDIR or '.')")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="roughvol",
        description="Rough-volatility pricing, dataset generation, surrogate training and calibration.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a training/target dataset")
    g.add_argument("--model", choices=("rheston", "rbergomi"), required=True)
    g.add_argument("--curve", choices=("flat", "piecewise", "parametric"), default="flat")
    g.add_argument("--regime", default="random-grid",
                   choices=("fixed", "adaptive", "random-grid", "random-smile", "pointwise"))
    g.add_argument("--sets", type=int, default=100, help="parameter sets (grid/smile regimes)")
    g.add_argument("--n", type=int, default=1000, help="records (pointwise regime)")
    g.add_argument("--n-steps", type=int, default=200, help="Riccati steps (rheston)")
    g.add_argument("--paths", type=int, default=16384, help="MC paths (rbergomi)")
    g.add_argument("--out", default="dataset.csv")
    _add_common(g)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train the surrogate on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", default="weights.json")
    t.add_argument("--batch-size", type=int, default=1024)
    t.add_argument("--max-epochs", type=int, default=500)
    t.add_argument("--patience", type=int, default=50)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--val-fraction", type=float, default=0.1)
    _add_common(t)
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("calibrate", help="calibrate parameters to a target surface")
    c.add_argument("--weights", required=True)
    c.add_argument("--target", required=True, help="CSV with columns T,K,iv")
    c.add_argument("--multistart", type=int, default=5)
    c.add_argument("--out", default="calibration.json")
    _add_common(c)
    c.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("price", help="evaluate saved weights on quote rows")
    p.add_argument("--weights", required=True)
    p.add_argument("--params", required=True, help="e.g. h=0.1,nu=0.3,rho=-0.7,xi=0.04")
    p.add_argument("--quotes", required=True, help="CSV with columns T,K,iv (iv ignored)")
    p.add_argument("--out", default="prices.csv")
    _add_common(p)
    p.set_defaults(func=cmd_price)

    n = sub.add_parser("noarb", help="discrete no-arbitrage scan")
    n.add_argument("--weights", default=None, help="scan a trained network")
    n.add_argument("--model", default="rheston", help="scan a true pricer instead")
    n.add_argument("--params", required=True, help="model parameters, e.g. h=0.1,nu=0.3,rho=-0.7")
    n.add_argument("--curve", choices=("flat", "piecewise", "parametric"), default="flat")
    n.add_argument("--curve-params", default="xi=0.04")
    n.add_argument("--dt", type=float, default=1.0 / 365.0)
    n.add_argument("--dk", type=float, default=0.01)
    n.add_argument("--offenders-csv", default=None)
    n.add_argument("--out", default="noarb.json")
    _add_common(n)
    n.set_defaults(func=cmd_noarb)

    e = sub.add_parser("experiment", help="reproduce a toolkit experiment")
    e.add_argument("kind", choices=("learning-curve", "controlled", "fortyfive", "noarb"))
    e.add_argument("--model", choices=("rheston", "rbergomi"), default="rheston")
    e.add_argument("--curve", choices=("flat", "piecewise", "parametric"), default="flat")
    e.add_argument("--weights", default=None)
    e.add_argument("--data", default=None, help="training dataset (fortyfive)")
    e.add_argument("--surfaces", type=int, default=50, help="surfaces (controlled)")
    e.add_argument("--eval-sets", type=int, default=20)
    e.add_argument("--min-pow", type=int, default=11)
    e.add_argument("--max-pow", type=int, default=13)
    e.add_argument("--n-seeds", type=int, default=3)
    e.add_argument("--max-epochs", type=int, default=500)
    e.add_argument("--params", default="h=0.1,nu=0.3,rho=-0.7")
    e.add_argument("--curve-params", default="xi=0.04")
    e.add_argument("--dt", type=float, default=7.0 / 365.0)
    e.add_argument("--dk", type=float, default=0.05)
    e.add_argument("--offenders-csv", default=None)
    e.add_argument("--out", default="experiment.csv")
    _add_common(e)
    e.set_defaults(func=cmd_experiment)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
